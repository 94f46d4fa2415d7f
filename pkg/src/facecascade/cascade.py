"""Cascade training and runtime tracking.

Each stage indexes ``M`` feature points to the current landmark estimate by
barycentric coordinates in a Delaunay triangulation of the reference
landmarks, samples pixel intensities there, and regresses a motion increment
with a modular boosted-ferns model (or the single-group baseline).
"""

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from facecascade import kernels
from facecascade.delaunay import locate, triangulate
from facecascade.errors import ConfigurationError, DimensionError, FaceCascadeError
from facecascade.ferns import pixel_covariance
from facecascade.gombf import (
    ModalityLayout,
    global_optimize,
    predict_gombf_batch,
    regularized_objective,
    train_modular,
)
from facecascade.metrics import aggregate_rmse, normalized_landmark_error
from facecascade.shape_model import (
    Camera,
    MotionLayout,
    ParametricShapeModel,
    interocular_distance,
    landmark_positions_batch,
    landmarks_3d,
)

log = logging.getLogger(__name__)

EXPRESSION, ROTATION, TRANSLATION = 0, 1, 2


@dataclass(frozen=True)
class NoiseConfig:
    n_expression: int = 30
    n_rotation: int = 8
    n_translation: int = 8
    rotation_sigma: float = 0.1
    translation_sigma: float = None  # None: 2% of the face's bounding-sphere diameter

    def translation_std(self, model: ParametricShapeModel) -> float:
        if self.translation_sigma is not None:
            return self.translation_sigma
        V = model.mean_shape.reshape(-1, 3)
        radius = np.linalg.norm(V - V.mean(axis=0), axis=1).max()
        return 0.02 * 2.0 * radius


@dataclass(eq=False)
class GuessTruthSamples:
    image_idx: np.ndarray  # (N,) index into the training images
    init: np.ndarray  # (N, dim) initial guesses
    kind: np.ndarray  # (N,) EXPRESSION / ROTATION / TRANSLATION

    def __len__(self):
        return self.image_idx.size


def generate_guess_truth_pairs(truth, rng, noise: NoiseConfig = NoiseConfig(), layout: MotionLayout = None,
                               translation_std: float = 0.0) -> GuessTruthSamples:
    """Perturbed initial guesses for every training image.

    Per image: expression guesses copy the expression of another, randomly
    chosen image; rotation and translation guesses add Gaussian noise to the
    true angles or translation. The guessed displacements are always zero.
    """
    truth = np.asarray(truth, dtype=np.float64)
    n = truth.shape[0]
    if n == 0:
        raise ConfigurationError("training set is empty")
    if noise.n_expression > 0 and n < 2:
        raise ConfigurationError("expression guesses need at least two training images")
    if layout is None:
        raise ConfigurationError("a motion layout is required")
    per = noise.n_expression + noise.n_rotation + noise.n_translation
    image_idx = np.repeat(np.arange(n), per)
    kind = np.tile(np.repeat([EXPRESSION, ROTATION, TRANSLATION],
                             [noise.n_expression, noise.n_rotation, noise.n_translation]), n)
    init = truth[image_idx].copy()
    init[:, layout.D] = 0.0
    for i in range(n):
        base = i * per
        if noise.n_expression:
            other = rng.integers(0, n - 1, size=noise.n_expression)
            other += other >= i
            init[base:base + noise.n_expression, layout.delta] = truth[other, layout.delta]
        s = base + noise.n_expression
        init[s:s + noise.n_rotation, layout.theta] += rng.normal(0.0, 1.0, (noise.n_rotation, 3)) * noise.rotation_sigma
        s += noise.n_rotation
        init[s:s + noise.n_translation, layout.t] += rng.normal(0.0, 1.0, (noise.n_translation, 3)) * translation_std
    return GuessTruthSamples(image_idx, init, kind)


@dataclass(frozen=True, eq=False)
class FeatureIndexer:
    reference_landmarks: np.ndarray  # (L, 2)
    triangles: np.ndarray  # (T, 3)
    point_triangle: np.ndarray  # (M,)
    barycentric: np.ndarray  # (M, 3)

    @property
    def n_points(self) -> int:
        return self.point_triangle.size

    def points(self, landmarks) -> np.ndarray:
        """Feature point positions for landmark sets (..., L, 2) -> (..., M, 2)."""
        corners = np.asarray(landmarks)[..., self.triangles[self.point_triangle], :]  # (..., M, 3, 2)
        return np.einsum("...mkc,mk->...mc", corners, self.barycentric)


def build_feature_indexer(mean_landmarks, n_points: int, rng, spread: float) -> FeatureIndexer:
    """Sample points around random landmarks and index them barycentrically."""
    lms = np.asarray(mean_landmarks, dtype=np.float64)
    tris = triangulate(lms)
    anchors = rng.integers(0, lms.shape[0], size=n_points)
    pts = lms[anchors] + rng.normal(0.0, spread, (n_points, 2))
    owner, bary = locate(pts, lms, tris)
    return FeatureIndexer(lms, tris, owner, bary)


def extract_batch(images, image_idx, model: ParametricShapeModel, alphas, camera: Camera, P,
                  indexer: FeatureIndexer) -> np.ndarray:
    """Appearance vectors for many (image, alpha, P) triples, (N, M)."""
    lms = landmark_positions_batch(model, alphas, camera, np.atleast_2d(P))
    pts = np.ascontiguousarray(indexer.points(lms))
    return kernels.sample_nearest(images, np.ascontiguousarray(image_idx, dtype=np.int64), pts)


def extract_appearance(image, model: ParametricShapeModel, alpha, camera: Camera, P,
                       indexer: FeatureIndexer) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise DimensionError("appearance extraction needs a non-empty 2D grayscale image")
    return extract_batch(image[None], np.zeros(1, dtype=np.int64), model, alpha, camera,
                         np.asarray(P, dtype=np.float64)[None, :], indexer)[0]


@dataclass(frozen=True)
class CascadeConfig:
    n_stages: int = 6
    depth: int = 5
    ferns_per_group: int = 20
    n_points: int = 200
    beta: float = 1000.0
    ridge: float = 300.0
    spread_factor: float = 0.15
    n_inits: int = 20
    seed: int = 0
    mode: str = "gombf"
    threads: int = 1
    noise: NoiseConfig = NoiseConfig()

    def validate(self):
        if self.mode not in ("gombf", "monolithic"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.n_stages < 0 or self.depth < 1 or self.ferns_per_group < 1 or self.n_points < 2:
            raise ConfigurationError("need n_stages >= 0, depth >= 1, ferns_per_group >= 1, n_points >= 2")
        if self.beta < 0 or self.ridge < 0 or self.spread_factor <= 0 or self.n_inits < 1:
            raise ConfigurationError("need beta >= 0, ridge >= 0, spread_factor > 0, n_inits >= 1")

    def regression_layout(self, motion: MotionLayout) -> ModalityLayout:
        groups = motion.groups()
        if self.mode == "monolithic":
            return ModalityLayout.single(motion.dim, self.ferns_per_group * len(groups))
        return ModalityLayout.from_widths([w for _, _, w in groups], self.ferns_per_group,
                                          [name for name, _, _ in groups])


@dataclass(frozen=True, eq=False)
class CascadeModel:
    shape_model: ParametricShapeModel
    camera: Camera
    stages: tuple  # ((FeatureIndexer, GoMBFModel), ...)
    bank_delta: np.ndarray  # (B, m_exp) training expressions
    n_inits: int = 20
    mode: str = "gombf"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        for indexer, reg in self.stages:
            if reg.n_features != indexer.n_points:
                raise DimensionError("stage regressor and indexer disagree on the appearance length")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def motion_layout(self) -> MotionLayout:
        return MotionLayout.for_model(self.shape_model)

    @property
    def bank_landmarks(self) -> np.ndarray:
        cached = self.__dict__.get("_bank_lms")
        if cached is None:
            cached = landmarks_3d(self.shape_model, self.shape_model.mean_identity(), self.bank_delta)
            self.__dict__["_bank_lms"] = cached
        return cached


@dataclass
class TrainReport:
    stage_rmse: list = field(default_factory=list)  # entry 0 is the initial guesses
    extract_seconds: list = field(default_factory=list)
    modular_seconds: list = field(default_factory=list)
    fusion_seconds: list = field(default_factory=list)
    objective_before_fusion: list = field(default_factory=list)
    objective_after_fusion: list = field(default_factory=list)
    seed: int = 0
    threads: int = 1
    n_samples: int = 0

    def stage_seconds(self, stage: int) -> float:
        return self.modular_seconds[stage] + self.fusion_seconds[stage]


def train_stage(X, targets, config: CascadeConfig, layout: ModalityLayout, seed: int, report: TrainReport = None):
    """Fit one stage regressor: modular ferns, then the global refit unless monolithic."""
    t0 = time.perf_counter()
    reg = train_modular(X, targets, layout, config.depth, config.beta, seed, config.threads,
                        pixel_cov=pixel_covariance(X))
    t1 = time.perf_counter()
    if config.mode == "gombf":
        cols = reg.indicator_columns(X)
        fused = global_optimize(reg, X, targets, config.ridge, cols=cols)
        t2 = time.perf_counter()
        if report is not None:
            report.objective_before_fusion.append(regularized_objective(reg.fused_leaves, cols, targets, config.ridge))
            report.objective_after_fusion.append(regularized_objective(fused.fused_leaves, cols, targets, config.ridge))
        reg = fused
    else:
        t2 = t1
    if report is not None:
        report.modular_seconds.append(t1 - t0)
        report.fusion_seconds.append(t2 - t1)
    return reg


def train_cascade(images, truth, alphas, model: ParametricShapeModel, camera: Camera,
                  config: CascadeConfig = CascadeConfig(), samples: GuessTruthSamples = None):
    """Train the cascade on rendered training images.

    ``truth`` holds each image's ground-truth motion vector and ``alphas`` its
    identity. Returns ``(CascadeModel, TrainReport)``.
    """
    config.validate()
    images = np.ascontiguousarray(np.asarray(images, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    motion = MotionLayout.for_model(model)
    if truth.ndim != 2 or truth.shape[1] != motion.dim or truth.shape[0] != images.shape[0]:
        raise DimensionError(f"ground truth shape {truth.shape} does not match {images.shape[0]} images x {motion.dim}")
    seeds = np.random.SeedSequence(config.seed)
    pair_ss, index_ss, fern_ss = seeds.spawn(3)
    if samples is None:
        samples = generate_guess_truth_pairs(truth, np.random.default_rng(pair_ss), config.noise, motion,
                                             config.noise.translation_std(model))
    layout = config.regression_layout(motion)
    sample_alpha = alphas[samples.image_idx]
    target = truth[samples.image_idx]
    current = samples.init.copy()
    truth_lms = landmark_positions_batch(model, sample_alpha, camera, target)
    report = TrainReport(seed=config.seed, threads=config.threads, n_samples=len(samples))

    def rmse(P):
        lms = landmark_positions_batch(model, sample_alpha, camera, P)
        return aggregate_rmse(normalized_landmark_error(lms, truth_lms, model.interocular_pair))

    report.stage_rmse.append(rmse(current))
    index_rngs = [np.random.default_rng(s) for s in index_ss.spawn(config.n_stages)]
    fern_seeds = fern_ss.generate_state(max(config.n_stages, 1))
    stages = []
    for t in range(config.n_stages):
        try:
            t0 = time.perf_counter()
            cur_lms = landmark_positions_batch(model, sample_alpha, camera, current)
            mean_lms = cur_lms.mean(axis=0)
            spread = config.spread_factor * float(interocular_distance(model, mean_lms))
            indexer = build_feature_indexer(mean_lms, config.n_points, index_rngs[t], spread)
            X = kernels.sample_nearest(images, samples.image_idx, np.ascontiguousarray(indexer.points(cur_lms)))
            report.extract_seconds.append(time.perf_counter() - t0)
            reg = train_stage(X, target - current, config, layout, int(fern_seeds[t]), report)
        except FaceCascadeError as exc:
            raise type(exc)(f"stage {t}: {exc}") from exc
        current = current + predict_gombf_batch(reg, X)
        stages.append((indexer, reg))
        report.stage_rmse.append(rmse(current))
        log.info("stage %d: rmse %.5f (modular %.2fs, fusion %.2fs)", t, report.stage_rmse[-1],
                 report.modular_seconds[-1], report.fusion_seconds[-1])
    bank = np.ascontiguousarray(truth[:, motion.delta])
    cascade = CascadeModel(model, camera, tuple(stages), bank, config.n_inits, config.mode)
    return cascade, report


def expression_distance(delta_a, delta_b, model: ParametricShapeModel) -> float:
    """Mean 3D landmark distance between two expressions on the mean identity."""
    delta_a = np.asarray(delta_a, dtype=np.float64)
    delta_b = np.asarray(delta_b, dtype=np.float64)
    if delta_a.shape != (model.m_exp,) or delta_b.shape != (model.m_exp,):
        raise DimensionError(f"expression vectors must have length {model.m_exp}")
    alpha = model.mean_identity()
    diff = landmarks_3d(model, alpha, delta_a) - landmarks_3d(model, alpha, delta_b)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def select_initializations(delta_prev, bank_delta, n_inits: int, model: ParametricShapeModel,
                           bank_landmarks=None) -> np.ndarray:
    """Indices of the ``n_inits`` bank expressions closest to ``delta_prev``.

    Ties go to the lower bank index. A bank smaller than ``n_inits`` is used
    whole, with a warning.
    """
    bank_delta = np.asarray(bank_delta, dtype=np.float64)
    if bank_landmarks is None:
        bank_landmarks = landmarks_3d(model, model.mean_identity(), bank_delta)
    if bank_delta.shape[0] < n_inits:
        warnings.warn(f"expression bank has {bank_delta.shape[0]} entries, fewer than {n_inits} initialisations",
                      RuntimeWarning, stacklevel=2)
        n_inits = bank_delta.shape[0]
    ref = landmarks_3d(model, model.mean_identity(), np.asarray(delta_prev, dtype=np.float64))
    dist = np.mean(np.linalg.norm(bank_landmarks - ref[None], axis=2), axis=1)
    return np.argsort(dist, kind="stable")[:n_inits]


def run_cascade(cascade: CascadeModel, image, alpha, init) -> np.ndarray:
    """Apply every stage to the (L, dim) initial guesses on one image."""
    images = np.ascontiguousarray(np.asarray(image, dtype=np.float64)[None])
    P = np.array(init, dtype=np.float64, ndmin=2)
    zeros = np.zeros(P.shape[0], dtype=np.int64)
    for indexer, reg in cascade.stages:
        X = extract_batch(images, zeros, cascade.shape_model, alpha, cascade.camera, P, indexer)
        P += predict_gombf_batch(reg, X)
    return P


def initial_guesses(cascade: CascadeModel, prev) -> np.ndarray:
    lay = cascade.motion_layout
    prev = np.asarray(prev, dtype=np.float64)
    if prev.shape != (lay.dim,):
        raise DimensionError(f"previous motion has shape {prev.shape}, expected ({lay.dim},)")
    picks = select_initializations(prev[lay.delta], cascade.bank_delta, cascade.n_inits,
                                   cascade.shape_model, cascade.bank_landmarks)
    init = np.tile(prev, (picks.size, 1))
    init[:, lay.delta] = cascade.bank_delta[picks]
    init[:, lay.D] = 0.0
    return init


def track_frame(image, prev, alpha, cascade: CascadeModel) -> np.ndarray:
    """Regress the motion of ``image`` from several initialisations and average them."""
    outputs = run_cascade(cascade, image, alpha, initial_guesses(cascade, prev))
    return outputs.mean(axis=0)
