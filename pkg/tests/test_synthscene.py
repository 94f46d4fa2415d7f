import dataclasses

import numpy as np
import pytest

from conftest import SMALL_SPEC
from facecascade import kernels
from facecascade.errors import ConfigurationError
from facecascade.shape_model import Camera, MotionLayout, euler_to_rotation, evaluate_shape, project_point
from facecascade.synthscene import (
    MotionConfig,
    RenderConfig,
    Renderer,
    ToyModelSpec,
    generate_sequence,
    make_toy_model,
    render_frame,
    sample_identity,
    sample_motion,
    step_sizes,
)


def _rms(col):
    return np.sqrt(np.mean(np.sum(col.reshape(-1, 3) ** 2, axis=1)))


def test_same_seed_same_model():
    a, b = make_toy_model(ToyModelSpec(seed=4)), make_toy_model(ToyModelSpec(seed=4))
    np.testing.assert_array_equal(a.model.identity_basis, b.model.identity_basis)
    np.testing.assert_array_equal(a.model.expression_basis, b.model.expression_basis)
    np.testing.assert_array_equal(a.model.landmark_indices, b.model.landmark_indices)
    assert a.model.interocular_pair == b.model.interocular_pair


def test_neutral_shape_is_mean_column(toy):
    m = toy.model
    np.testing.assert_array_equal(evaluate_shape(m, m.mean_identity(), np.zeros(m.m_exp)), m.identity_basis[:, 0])


def test_basis_scales_within_bounds():
    spec = ToyModelSpec()
    for seed in range(100):
        m = make_toy_model(dataclasses.replace(spec, seed=seed)).model
        id_rms = [_rms(c) for c in m.identity_basis[:, 1:].T]
        ex_rms = [_rms(c) for c in m.expression_basis.T]
        assert spec.id_rms[0] - 1e-12 <= min(id_rms) and max(id_rms) <= spec.id_rms[1] + 1e-12
        assert spec.exp_rms[0] - 1e-12 <= min(ex_rms) and max(ex_rms) <= spec.exp_rms[1] + 1e-12


def test_landmarks_distinct_and_eyes_apart(toy):
    m = toy.model
    assert len(set(m.landmark_indices.tolist())) == m.n_landmarks == 66
    a, b = m.interocular_pair
    uv = toy.template_uv[m.landmark_indices]
    assert uv[a, 0] < 0 < uv[b, 0]


def test_invalid_specs():
    with pytest.raises(ConfigurationError):
        make_toy_model(ToyModelSpec(n_vertices=50, n_landmarks=66))
    with pytest.raises(ConfigurationError):
        make_toy_model(ToyModelSpec(id_rms=(2.0, 1.0)))


def test_face_out_of_frame_renders_background(small_face):
    r = Renderer(small_face, RenderConfig(height=32, width=32))
    lay = MotionLayout.for_model(small_face.model)
    P = np.zeros(lay.dim)
    P[lay.t] = [500.0, 0.0, 1000.0]
    np.testing.assert_array_equal(r.render(small_face.model.mean_identity(), P), r.config.background)


def test_translation_moves_splat_centres(small_face):
    r = Renderer(small_face, RenderConfig(height=48, width=48))
    m = small_face.model
    lay = MotionLayout.for_model(m)
    P = sample_motion(small_face, np.random.default_rng(0))
    P[lay.D] = 0.0
    alpha = sample_identity(small_face, np.random.default_rng(1))
    moved = P.copy()
    moved[lay.t.start] += 2.0
    V = evaluate_shape(m, alpha, P[lay.delta]).reshape(-1, 3)
    shift = r.vertex_positions(alpha, moved) - r.vertex_positions(alpha, P)
    for k in range(0, len(V), 17):
        p0 = project_point(V[k], P[lay.theta], P[lay.t], r.camera)
        p1 = project_point(V[k], moved[lay.theta], moved[lay.t], r.camera)
        np.testing.assert_allclose(shift[k], p1 - p0, atol=1e-10)
    z = (V @ euler_to_rotation(P[lay.theta]).T + P[lay.t])[:, 2]
    np.testing.assert_allclose(shift[:, 0], r.camera.f * 2.0 / z, rtol=1e-10)
    np.testing.assert_allclose(shift[:, 1], 0.0, atol=1e-10)


def test_render_is_splat_of_vertex_positions(small_face):
    cfg = RenderConfig(height=40, width=40, pixel_noise=0.0)
    r = Renderer(small_face, cfg)
    P = sample_motion(small_face, np.random.default_rng(2))
    alpha = small_face.model.mean_identity()
    pts = r.vertex_positions(alpha, P)
    img = cfg.background + cfg.gain * kernels.splat(np.ascontiguousarray(pts), r.albedo, 40, 40,
                                                    cfg.kernel_sigma, 3 * cfg.kernel_sigma)
    np.testing.assert_array_equal(r.render(alpha, P), np.clip(img, 0, 1))


def test_render_is_deterministic(small_face):
    P = sample_motion(small_face, np.random.default_rng(3))
    cam = Camera.for_image(48, 48)
    a = render_frame(small_face, small_face.model.mean_identity(), cam, P, (48, 48), noise_seed=9)
    b = render_frame(small_face, small_face.model.mean_identity(), cam, P, (48, 48), noise_seed=9)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_single_frame_sequence_matches_render(small_renderer):
    seq = generate_sequence(small_renderer, 1, seed=21)
    again = small_renderer.render(seq.alpha, seq.truth[0], int(seq.meta["frame_seeds"][0]))
    np.testing.assert_array_equal(seq.frames[0], again)
    assert seq.first_landmarks.shape == (SMALL_SPEC.n_landmarks, 2)


def test_static_script_gives_identical_frames(small_face):
    r = Renderer(small_face, RenderConfig(height=32, width=32, pixel_noise=0.0))
    P = sample_motion(small_face, np.random.default_rng(4))
    seq = generate_sequence(r, 5, seed=1, script=np.tile(P, (5, 1)))
    assert all(np.array_equal(seq.frames[0], f) for f in seq.frames)
    with pytest.raises(ConfigurationError):
        generate_sequence(r, 5, seed=1, script=np.tile(P, (4, 1)))


def test_random_walk_steps_are_bounded(small_face):
    r = Renderer(small_face, RenderConfig(height=16, width=16))
    cfg = MotionConfig()
    seq = generate_sequence(r, 1000, seed=8, motion=cfg)
    step = step_sizes(MotionLayout.for_model(small_face.model), cfg)
    assert np.all(np.abs(np.diff(seq.truth, axis=0)) <= step + 1e-12)
    lay = MotionLayout.for_model(small_face.model)
    assert seq.truth[:, lay.delta].min() >= 0 and seq.truth[:, lay.delta].max() <= 1


def test_landmark_noise_perturbs_first_landmarks(small_renderer):
    clean = generate_sequence(small_renderer, 1, seed=5)
    noisy = generate_sequence(small_renderer, 1, seed=5, landmark_noise=0.5)
    diff = noisy.first_landmarks - clean.first_landmarks
    assert 0.2 < diff.std() < 1.0
    np.testing.assert_array_equal(noisy.truth, clean.truth)
