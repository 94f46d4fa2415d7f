import numpy as np
import pytest

from facecascade.cascade import CascadeConfig, NoiseConfig, train_cascade
from facecascade.shape_model import ParametricShapeModel
from facecascade.synthscene import MotionConfig, RenderConfig, Renderer, ToyModelSpec, generate_training_set, \
    make_toy_model

SMALL_SPEC = ToyModelSpec(n_vertices=144, m_id=4, m_exp=5, n_landmarks=12, seed=3)
SMALL_NOISE = NoiseConfig(n_expression=4, n_rotation=2, n_translation=2)
SMALL_CASCADE = CascadeConfig(n_stages=2, depth=3, ferns_per_group=4, n_points=40, n_inits=5, seed=7,
                              noise=SMALL_NOISE)


def random_model(rng, n=4, m_id=3, m_exp=2, n_landmarks=None):
    """Unstructured model with ``n`` vertices; every vertex is a landmark by default."""
    n_landmarks = n if n_landmarks is None else n_landmarks
    return ParametricShapeModel(rng.normal(size=(3 * n, m_id + 1)), rng.normal(size=(3 * n, m_exp)),
                                np.arange(n_landmarks), (0, 1))


@pytest.fixture(scope="session")
def toy():
    return make_toy_model()


@pytest.fixture(scope="session")
def small_face():
    return make_toy_model(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_renderer(small_face):
    return Renderer(small_face, RenderConfig(height=48, width=48))


@pytest.fixture(scope="session")
def small_training(small_renderer):
    return generate_training_set(small_renderer, 24, seed=11, motion=MotionConfig())


@pytest.fixture(scope="session")
def small_cascade(small_face, small_training):
    tr = small_training
    return train_cascade(tr.images, tr.truth, tr.alphas, small_face.model, tr.camera, SMALL_CASCADE)


# ---------------------------------------------------------------- desk scale
# The default configuration: 400 training frames and ten 200-frame sequences
# at 64x64, trained with the default budgets. Shared by the acceptance suite
# and the long-run tracking tests.

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    from facecascade.cli import main

    out = tmp_path_factory.mktemp("desk") / "data"
    assert main(["synth", "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def desk_gombf(desk_dataset, tmp_path_factory):
    from facecascade.cli import cmd_train
    from facecascade.runconfig import load_config

    out = tmp_path_factory.mktemp("desk_model") / "gombf"
    cascade, report = cmd_train(load_config(), desk_dataset, out, "gombf")
    return out, cascade, report
