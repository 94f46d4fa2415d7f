"""Random ferns and boosted ferns over pixel-difference features.

A fern applies the same split test to every node of a level, so ``F`` tests
partition samples into ``2**F`` leaves. Test ``b`` sends a sample right (sets
bit ``b`` of the leaf index) when ``x[i] - x[j] > threshold``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from facecascade import kernels
from facecascade.errors import DegenerateTargetError, DimensionError

#: projections tried before a split level gives up on correlation
MAX_PROJECTION_DRAWS = 5
_VAR_EPS = 1e-12


@dataclass(frozen=True)
class SplitTest:
    i: int
    j: int
    threshold: float


@dataclass(frozen=True, eq=False)
class Fern:
    pix_i: np.ndarray  # (F,)
    pix_j: np.ndarray  # (F,)
    thresholds: np.ndarray  # (F,)
    leaves: np.ndarray  # (output_dim, 2**F)
    n_features: int

    def __post_init__(self):
        depth = len(self.pix_i)
        if len(self.pix_j) != depth or len(self.thresholds) != depth:
            raise DimensionError("fern tests have inconsistent lengths")
        if self.leaves.ndim != 2 or self.leaves.shape[1] != 2**depth:
            raise DimensionError(f"leaf matrix needs {2**depth} columns, got {self.leaves.shape}")

    @classmethod
    def from_tests(cls, tests, leaves, n_features):
        return cls(
            np.array([s.i for s in tests], dtype=np.int64),
            np.array([s.j for s in tests], dtype=np.int64),
            np.array([s.threshold for s in tests], dtype=np.float64),
            np.asarray(leaves, dtype=np.float64),
            int(n_features),
        )

    @property
    def depth(self) -> int:
        return len(self.pix_i)

    @property
    def output_dim(self) -> int:
        return self.leaves.shape[0]

    @property
    def tests(self):
        return [SplitTest(int(a), int(b), float(c)) for a, b, c in zip(self.pix_i, self.pix_j, self.thresholds)]


def _check_features(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != n_features:
        raise DimensionError(f"appearance vector length {X.shape[-1]} != expected {n_features}")
    return X


def descend(fern: Fern, x) -> int:
    x = _check_features(x, fern.n_features)
    return int(descend_batch(fern, x[None, :])[0])


def descend_batch(fern: Fern, X) -> np.ndarray:
    X = np.ascontiguousarray(_check_features(X, fern.n_features))
    return kernels.descend(X, fern.pix_i[None, :], fern.pix_j[None, :], fern.thresholds[None, :])[:, 0]


def predict_fern(fern: Fern, x) -> np.ndarray:
    return fern.leaves[:, descend(fern, x)].copy()


def pixel_covariance(X: np.ndarray) -> np.ndarray:
    """Covariance between appearance entries, shared by every split of a stage."""
    Xc = X - X.mean(axis=0)
    return (Xc.T @ Xc) / X.shape[0]


def select_split(X, R, rng, pixel_cov=None) -> SplitTest:
    """Pick the pixel pair whose difference best correlates with a random
    projection of the residuals, then draw a threshold.

    Raises :class:`DegenerateTargetError` if every projected target is
    constant. If projections vary but no pixel pair correlates with them after
    :data:`MAX_PROJECTION_DRAWS` attempts, falls back to pair (0, 1) with a zero
    threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    n, m = X.shape
    if n < 2:
        raise DimensionError("split selection needs at least two samples")
    if m < 2:
        raise DimensionError("split selection needs at least two appearance entries")
    if R.shape[0] != n:
        raise DimensionError(f"{n} appearance vectors but {R.shape[0]} targets")
    if pixel_cov is None:
        pixel_cov = pixel_covariance(X)
    varied = False
    for _ in range(MAX_PROJECTION_DRAWS):
        u = rng.standard_normal(R.shape[1])
        u /= np.linalg.norm(u)
        y = R @ u
        yc = y - y.mean()
        var_y = float(yc @ yc) / n
        if var_y <= _VAR_EPS * max(1.0, float(np.mean(y * y))):
            continue
        varied = True
        # yc is centred, so X^T yc equals the centred cross-covariance.
        cov_y = (X.T @ yc) / n
        i, j, score = kernels.best_pair(cov_y, pixel_cov, _VAR_EPS)
        if i >= 0 and score > 0.0:
            feat = X[:, i] - X[:, j]
            c = float(np.max(np.abs(feat)))
            return SplitTest(int(i), int(j), float(rng.uniform(-c, c)))
    if not varied:
        raise DegenerateTargetError("projected regression targets have zero variance")
    return SplitTest(0, 1, 0.0)


def fit_leaves(leaf_idx, R, n_leaves: int, beta: float) -> np.ndarray:
    """Shrunk per-leaf means ``n_b / (n_b + beta) * mean``; empty leaves are zero.

    Returns (output_dim, n_leaves).
    """
    if beta < 0:
        raise ValueError("shrinkage must be non-negative")
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    leaf_idx = np.asarray(leaf_idx, dtype=np.int64)
    if leaf_idx.shape != (R.shape[0],):
        raise DimensionError("one leaf index per target row required")
    sums, counts = kernels.leaf_sums(leaf_idx, np.ascontiguousarray(R), n_leaves)
    denom = counts + beta
    scale = np.divide(1.0, denom, out=np.zeros(n_leaves), where=denom > 0)
    return (sums * scale[:, None]).T


@dataclass(frozen=True, eq=False)
class BoostedFerns:
    ferns: tuple

    def __post_init__(self):
        ferns = tuple(self.ferns)
        if not ferns:
            raise DimensionError("boosted ferns need at least one fern")
        f0 = ferns[0]
        for fern in ferns[1:]:
            if (fern.output_dim, fern.depth, fern.n_features) != (f0.output_dim, f0.depth, f0.n_features):
                raise DimensionError("member ferns disagree on output size, depth or feature length")
        object.__setattr__(self, "ferns", ferns)

    @property
    def n_ferns(self) -> int:
        return len(self.ferns)

    @property
    def depth(self) -> int:
        return self.ferns[0].depth

    @property
    def output_dim(self) -> int:
        return self.ferns[0].output_dim

    @property
    def n_features(self) -> int:
        return self.ferns[0].n_features

    @cached_property
    def stacked_tests(self):
        return (
            np.ascontiguousarray(np.stack([f.pix_i for f in self.ferns])),
            np.ascontiguousarray(np.stack([f.pix_j for f in self.ferns])),
            np.ascontiguousarray(np.stack([f.thresholds for f in self.ferns])),
        )

    @cached_property
    def leaf_matrix(self) -> np.ndarray:
        """``W = [w_1, ..., w_K]``, (output_dim, K * 2**F)."""
        return np.hstack([f.leaves for f in self.ferns])

    def leaf_indices(self, X) -> np.ndarray:
        X = np.ascontiguousarray(_check_features(np.atleast_2d(X), self.n_features))
        return kernels.descend(X, *self.stacked_tests)


def predict_boosted(model: BoostedFerns, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return predict_boosted_batch(model, x[None, :])[0]


def predict_boosted_batch(model: BoostedFerns, X) -> np.ndarray:
    idx = model.leaf_indices(X)
    cols = idx + (np.arange(model.n_ferns) * 2**model.depth)[None, :]
    return kernels.gather_sum(np.ascontiguousarray(model.leaf_matrix.T), cols)


def train_fern(X, R, depth: int, beta: float, rng, pixel_cov=None) -> Fern:
    """Train one fern on residuals ``R``.

    A level whose projected residuals are constant gets split (0, 1) with zero
    threshold; the leaves are still fitted, so a constant residual is
    reproduced by its shrunk mean.
    """
    n, m = X.shape
    tests = []
    for _ in range(depth):
        try:
            tests.append(select_split(X, R, rng, pixel_cov))
        except DegenerateTargetError:
            tests.append(SplitTest(0, 1, 0.0))
    fern = Fern.from_tests(tests, np.zeros((R.shape[1], 2**depth)), m)
    idx = descend_batch(fern, X)
    leaves = fit_leaves(idx, R, 2**depth, beta)
    return Fern(fern.pix_i, fern.pix_j, fern.thresholds, leaves, m)


def train_boosted(X, targets, n_ferns: int, depth: int, beta: float, rng, pixel_cov=None) -> BoostedFerns:
    """Sequentially fit ``n_ferns`` ferns, each to the residual of its predecessors."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    R = np.array(targets, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if n_ferns < 1:
        raise ValueError("need at least one fern")
    if depth < 1:
        raise ValueError("fern depth must be at least 1")
    if X.shape[0] < 2 or R.shape[0] != X.shape[0]:
        raise DimensionError("need at least two samples and one target row per sample")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if pixel_cov is None:
        pixel_cov = pixel_covariance(X)
    ferns = []
    for _ in range(n_ferns):
        fern = train_fern(X, R, depth, beta, rng, pixel_cov)
        idx = descend_batch(fern, X)
        R -= fern.leaves.T[idx]
        ferns.append(fern)
    return BoostedFerns(tuple(ferns))
