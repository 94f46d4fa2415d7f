"""Modular boosted ferns with a global ridge refit of all leaves.

One boosted-ferns regressor is trained per modality group on that group's
slice of the target only. Their leaf matrices are block-embedded into a single
matrix ``W`` over the full target, and ``W`` is then refit jointly against the
whole target by ridge regression on the sparse leaf indicator.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from facecascade import kernels
from facecascade.errors import DimensionError, FaceCascadeError, SingularSystemError
from facecascade.ferns import pixel_covariance, train_boosted


@dataclass(frozen=True)
class ModalityGroup:
    name: str
    offset: int
    width: int
    n_ferns: int


@dataclass(frozen=True)
class ModalityLayout:
    groups: tuple

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise DimensionError("layout needs at least one group")
        pos = 0
        for g in groups:
            if g.offset != pos or g.width < 1:
                raise DimensionError(f"group {g.name!r} does not tile the target at offset {pos}")
            if g.n_ferns < 1:
                raise DimensionError(f"group {g.name!r} needs at least one fern")
            pos += g.width
        object.__setattr__(self, "groups", groups)

    @property
    def dim(self) -> int:
        last = self.groups[-1]
        return last.offset + last.width

    @property
    def total_ferns(self) -> int:
        return sum(g.n_ferns for g in self.groups)

    @classmethod
    def from_widths(cls, widths, n_ferns, names=None) -> "ModalityLayout":
        """Contiguous groups with the given widths; ``n_ferns`` is an int or a list."""
        if np.isscalar(n_ferns):
            n_ferns = [int(n_ferns)] * len(widths)
        names = names or [f"g{i}" for i in range(len(widths))]
        groups, pos = [], 0
        for name, w, k in zip(names, widths, n_ferns):
            groups.append(ModalityGroup(name, pos, int(w), int(k)))
            pos += int(w)
        return cls(tuple(groups))

    @classmethod
    def single(cls, dim: int, n_ferns: int, name: str = "P") -> "ModalityLayout":
        return cls((ModalityGroup(name, 0, int(dim), int(n_ferns)),))


def group_rng(master_seed: int, ordinal: int) -> np.random.Generator:
    """Generator for group ``ordinal``, independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(ordinal),)))


@dataclass(frozen=True, eq=False)
class GoMBFModel:
    layout: ModalityLayout
    group_models: tuple
    fused_leaves: np.ndarray  # (dim, total_ferns * 2**F)
    fused: bool = False

    def __post_init__(self):
        object.__setattr__(self, "group_models", tuple(self.group_models))
        if len(self.group_models) != len(self.layout.groups):
            raise DimensionError("one boosted-ferns model per group required")
        expected = (self.layout.dim, self.n_columns)
        if self.fused_leaves.shape != expected:
            raise DimensionError(f"fused leaves have shape {self.fused_leaves.shape}, expected {expected}")

    @property
    def depth(self) -> int:
        return self.group_models[0].depth

    @property
    def n_features(self) -> int:
        return self.group_models[0].n_features

    @property
    def total_ferns(self) -> int:
        return sum(m.n_ferns for m in self.group_models)

    @property
    def n_columns(self) -> int:
        return self.total_ferns * 2**self.depth

    @cached_property
    def stacked_tests(self):
        parts = [m.stacked_tests for m in self.group_models]
        return tuple(np.ascontiguousarray(np.vstack([p[k] for p in parts])) for k in range(3))

    @cached_property
    def _leaves_T(self):
        return np.ascontiguousarray(self.fused_leaves.T)

    def indicator_columns(self, X) -> np.ndarray:
        """Column index of the one active leaf of every fern, (N, total_ferns)."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != self.n_features:
            raise DimensionError(f"appearance vector length {X.shape[1]} != expected {self.n_features}")
        idx = kernels.descend(X, *self.stacked_tests)
        return idx + (np.arange(self.total_ferns) * 2**self.depth)[None, :]

    def with_leaves(self, W, fused=True) -> "GoMBFModel":
        return GoMBFModel(self.layout, self.group_models, np.asarray(W, dtype=np.float64), fused)


def block_embed(layout: ModalityLayout, group_models) -> np.ndarray:
    """Place each group's leaf matrix in its row slice; zeros elsewhere."""
    blocks = []
    for g, m in zip(layout.groups, group_models):
        block = np.zeros((layout.dim, m.leaf_matrix.shape[1]))
        block[g.offset:g.offset + g.width] = m.leaf_matrix
        blocks.append(block)
    return np.hstack(blocks)


def train_modular(X, targets, layout: ModalityLayout, depth: int, beta: float, seed: int,
                  threads: int = 1, pixel_cov=None) -> GoMBFModel:
    """Train one boosted-ferns regressor per group on its target slice.

    Groups run on up to ``threads`` worker threads; each group draws from its
    own generator (see :func:`group_rng`) so the result does not depend on the
    thread count or completion order.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != layout.dim:
        raise DimensionError(f"targets have shape {Y.shape}, layout covers {layout.dim} columns")
    if pixel_cov is None:
        pixel_cov = pixel_covariance(X)

    def job(ordinal):
        g = layout.groups[ordinal]
        try:
            return train_boosted(X, Y[:, g.offset:g.offset + g.width], g.n_ferns, depth, beta,
                                 group_rng(seed, ordinal), pixel_cov)
        except FaceCascadeError as exc:
            raise type(exc)(f"group {g.name!r}: {exc}") from exc

    ordinals = range(len(layout.groups))
    if threads > 1 and len(layout.groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(job, ordinals))
    else:
        models = [job(k) for k in ordinals]
    return GoMBFModel(layout, tuple(models), block_embed(layout, models), fused=False)


def assemble_indicator(model: GoMBFModel, x) -> np.ndarray:
    """Dense 0/1 indicator over all leaves of all groups for one sample."""
    cols = model.indicator_columns(np.asarray(x, dtype=np.float64)[None, :])[0]
    phi = np.zeros(model.n_columns)
    phi[cols] = 1.0
    return phi


def predict_gombf(model: GoMBFModel, x) -> np.ndarray:
    return predict_gombf_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0]


def predict_gombf_batch(model: GoMBFModel, X) -> np.ndarray:
    return kernels.gather_sum(model._leaves_T, model.indicator_columns(X))


def regularized_objective(W, cols, Y, lam: float) -> float:
    """``sum_i ||W phi(x_i) - y_i||^2 + lam ||W||_F^2`` with ``phi`` given by ``cols``."""
    pred = kernels.gather_sum(np.ascontiguousarray(np.asarray(W).T), cols)
    return float(np.sum((pred - Y) ** 2) + lam * np.sum(np.asarray(W) ** 2))


def global_optimize(model: GoMBFModel, X, targets, lam: float = 1.0, cols=None) -> GoMBFModel:
    """Refit every leaf against the full target by ridge regression.

    Solves ``(Phi^T Phi + lam I) W^T = Phi^T Y`` by Cholesky. Leaves no training
    sample reaches have zero rows and a zero right-hand side; they are left
    out of the solve and stay zero, which is their exact value for ``lam > 0``.
    """
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    Y = np.ascontiguousarray(np.asarray(targets, dtype=np.float64))
    if cols is None:
        cols = model.indicator_columns(X)
    if Y.shape != (cols.shape[0], model.layout.dim):
        raise DimensionError(f"targets have shape {Y.shape}, expected ({cols.shape[0]}, {model.layout.dim})")
    if Y.shape[0] < 1:
        raise DimensionError("global optimisation needs at least one sample")
    n_cols = model.n_columns
    visited = np.zeros(n_cols, dtype=bool)
    visited[cols.ravel()] = True
    remap = np.full(n_cols, -1, dtype=np.int64)
    remap[visited] = np.arange(int(visited.sum()))
    sub = np.ascontiguousarray(remap[cols])
    n_sub = int(visited.sum())
    G = kernels.gram(sub, n_sub)
    B = kernels.indicator_rhs(sub, Y, n_sub)
    G[np.diag_indices(n_sub)] += lam
    try:
        factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        WT_sub = scipy.linalg.cho_solve(factor, B, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("ridge system is singular; use a positive ridge penalty (lam > 0)") from exc
    if lam == 0 and n_sub:
        # Rank-deficient Grams can pass potrf with round-off sized pivots.
        pivots = np.diag(factor[0]) ** 2
        if pivots.min() <= 1e-10 * np.diag(G).max() or not np.all(np.isfinite(WT_sub)):
            raise SingularSystemError("ridge system is singular; use a positive ridge penalty (lam > 0)")
    W = np.zeros((model.layout.dim, n_cols))
    W[:, visited] = WT_sub.T
    return model.with_leaves(W, fused=True)
