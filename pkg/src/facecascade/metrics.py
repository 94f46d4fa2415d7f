"""Landmark error metrics shared by training, tracking and comparison."""

import numpy as np


def normalized_landmark_error(pred, truth, interocular_pair) -> np.ndarray:
    """Point-to-point RMS landmark error over the ground-truth inter-ocular distance.

    ``pred`` and ``truth`` are (..., L, 2); returns one value per leading index.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    a, b = interocular_pair
    iod = np.linalg.norm(truth[..., a, :] - truth[..., b, :], axis=-1)
    rms = np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=-1), axis=-1))
    return rms / iod


def aggregate_rmse(errors) -> float:
    """Root of the mean squared per-frame error."""
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.sqrt(np.mean(errors**2)))
