"""Synthetic datasets on disk.

A dataset directory holds::

    manifest.json          seeds, configuration, frame counts
    train/                 independent training frames
        frame_00000.pgm ...
        truth.txt          one motion vector per frame
        identity.txt       one identity vector per frame
    seq000/ ...            tracking sequences
        frame_00000.pgm ...
        truth.txt          one motion vector per frame
        identity.txt       the sequence's identity (one row)
        landmarks0.txt     detected landmarks of frame 0, one (x, y) per row

Text files start with ``# key = value`` header lines giving dims and seeds.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from facecascade.errors import DimensionError, FaceCascadeError
from facecascade.fileio import read_json, read_matrix, read_pgm, staged_directory, write_json, write_matrix, \
    write_pgm
from facecascade.runconfig import RunConfig
from facecascade.shape_model import MotionLayout
from facecascade.synthscene import Renderer, generate_sequence, generate_training_set, make_toy_model

DATASET_FORMAT = "facecascade-dataset"
DATASET_VERSION = 1


def dataset_seeds(seed: int, n_sequences: int):
    """Seeds of the training set and of each sequence, derived from one master seed."""
    ss = np.random.SeedSequence(int(seed))
    state = ss.generate_state(n_sequences + 1)
    return int(state[0]), [int(s) for s in state[1:]]


def build_renderer(config: RunConfig):
    face = make_toy_model(config.toy)
    return face, Renderer(face, config.render)


def _write_frames(directory: Path, frames):
    for k, img in enumerate(frames):
        write_pgm(directory / f"frame_{k:05d}.pgm", img)


def write_dataset(config: RunConfig, out) -> dict:
    """Generate the training set and tracking sequences and write them under ``out``."""
    face, renderer = build_renderer(config)
    lay = MotionLayout.for_model(face.model)
    train_seed, seq_seeds = dataset_seeds(config.seed, config.data.sequences)
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": config.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.as_pairs()},
        "motion_dim": lay.dim,
        "identity_dim": face.model.m_id + 1,
        "n_landmarks": face.model.n_landmarks,
        "image_size": [config.render.height, config.render.width],
        "train": {"dir": "train", "frames": config.data.train_frames, "seed": train_seed},
        "sequences": [],
    }
    with staged_directory(out) as tmp:
        train = generate_training_set(renderer, config.data.train_frames, train_seed, config.motion)
        tdir = tmp / "train"
        tdir.mkdir()
        _write_frames(tdir, train.images)
        header = {"rows": len(train), "cols": lay.dim, "seed": train_seed}
        write_matrix(tdir / "truth.txt", train.truth, header)
        write_matrix(tdir / "identity.txt", train.alphas, {**header, "cols": face.model.m_id + 1})
        for k, seed in enumerate(seq_seeds):
            seq = generate_sequence(renderer, config.data.length, seed, config.motion,
                                    landmark_noise=config.data.landmark_noise)
            name = f"seq{k:03d}"
            sdir = tmp / name
            sdir.mkdir()
            _write_frames(sdir, seq.frames)
            header = {"rows": len(seq), "cols": lay.dim, "seed": seed}
            write_matrix(sdir / "truth.txt", seq.truth, header)
            write_matrix(sdir / "identity.txt", seq.alpha[None, :], {"rows": 1, "cols": seq.alpha.size, "seed": seed})
            write_matrix(sdir / "landmarks0.txt", seq.first_landmarks,
                         {"rows": face.model.n_landmarks, "cols": 2, "seed": seed,
                          "landmark_noise": config.data.landmark_noise})
            manifest["sequences"].append({"dir": name, "frames": len(seq), "seed": seed})
        write_json(tmp / "manifest.json", manifest)
    return manifest


@dataclass(eq=False)
class SequenceData:
    name: str
    frames: np.ndarray  # (T, H, W)
    first_landmarks: np.ndarray  # (L, 2)
    truth: np.ndarray = None  # (T, dim) when known
    alpha: np.ndarray = None  # true identity when known

    def __len__(self):
        return self.frames.shape[0]


def read_frames(directory: Path, count: int = None) -> np.ndarray:
    files = sorted(Path(directory).glob("frame_*.pgm"))
    if count is not None and len(files) != count:
        raise FaceCascadeError(f"{directory}: expected {count} frames, found {len(files)}")
    if not files:
        raise FaceCascadeError(f"{directory}: no frame_*.pgm images")
    frames = [read_pgm(f) for f in files]
    if len({f.shape for f in frames}) != 1:
        raise DimensionError(f"{directory}: frames differ in size")
    return np.stack(frames)


def read_manifest(path) -> dict:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("format") != DATASET_FORMAT:
        raise FaceCascadeError(f"{path}: not a dataset directory (manifest format {manifest.get('format')!r})")
    if manifest.get("version") != DATASET_VERSION:
        raise FaceCascadeError(f"{path}: unsupported dataset version {manifest.get('version')}")
    return manifest


def read_training_set(path):
    """``(images, truth, alphas, manifest)`` of a dataset's training frames."""
    path = Path(path)
    manifest = read_manifest(path)
    info = manifest["train"]
    tdir = path / info["dir"]
    images = read_frames(tdir, info["frames"])
    truth, _ = read_matrix(tdir / "truth.txt", manifest["motion_dim"])
    alphas, _ = read_matrix(tdir / "identity.txt", manifest["identity_dim"])
    if truth.shape[0] != images.shape[0] or alphas.shape[0] != images.shape[0]:
        raise DimensionError(f"{tdir}: {images.shape[0]} frames but {truth.shape[0]} truth rows "
                             f"and {alphas.shape[0]} identity rows")
    return images, truth, alphas, manifest


def read_sequence(directory) -> SequenceData:
    """A sequence directory; ``truth.txt`` and ``identity.txt`` are optional."""
    directory = Path(directory)
    frames = read_frames(directory)
    lms, _ = read_matrix(directory / "landmarks0.txt", 2)
    truth = alpha = None
    if (directory / "truth.txt").exists():
        truth, _ = read_matrix(directory / "truth.txt")
        if truth.shape[0] != frames.shape[0]:
            raise DimensionError(f"{directory}: {frames.shape[0]} frames but {truth.shape[0]} truth rows")
    if (directory / "identity.txt").exists():
        alpha = read_matrix(directory / "identity.txt")[0][0]
    return SequenceData(directory.name, frames, lms, truth, alpha)


def sequence_dirs(path):
    path = Path(path)
    return [path / s["dir"] for s in read_manifest(path)["sequences"]]
