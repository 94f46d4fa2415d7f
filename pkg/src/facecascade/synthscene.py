"""Toy face model and splat renderer that stand in for real face data.

The toy model is a deformed vertex grid with smooth random identity and
localised expression bases. Frames are rendered by splatting a Gaussian
intensity kernel at every projected vertex, so pixel values change smoothly
with expression, pose, translation and the 2D landmark displacements (which
warp nearby vertices).
"""

from dataclasses import dataclass, field

import numpy as np

from facecascade import kernels
from facecascade.errors import ConfigurationError
from facecascade.shape_model import (
    Camera,
    MotionLayout,
    ParametricShapeModel,
    evaluate_shape,
    euler_to_rotation,
    landmark_positions,
    project_points,
)


@dataclass(frozen=True)
class ToyModelSpec:
    n_vertices: int = 576
    m_id: int = 10
    m_exp: int = 12
    n_landmarks: int = 66
    face_radius: float = 20.0  # world units; half-width of the face
    face_depth: float = 12.0
    smoothness: int = 3  # number of cosine frequencies per axis in identity fields
    id_rms: tuple = (0.6, 1.2)  # per-vertex RMS displacement of an identity column
    exp_rms: tuple = (0.8, 1.6)  # per-vertex RMS displacement of a blendshape
    exp_width: float = 0.35  # blendshape support, in normalised face units
    depth_weight: float = 0.2  # scale of basis motion along the viewing axis
    seed: int = 0

    def validate(self):
        if self.n_landmarks < 3:
            raise ConfigurationError("need at least three landmarks")
        if self.n_vertices < self.n_landmarks:
            raise ConfigurationError(
                f"vertex count {self.n_vertices} is smaller than landmark count {self.n_landmarks}"
            )
        if self.m_id < 1 or self.m_exp < 1:
            raise ConfigurationError("identity and expression ranks must be at least 1")
        if self.smoothness < 1:
            raise ConfigurationError("smoothness must be at least 1")
        for lo, hi in (self.id_rms, self.exp_rms):
            if not 0 < lo <= hi:
                raise ConfigurationError("basis RMS ranges must satisfy 0 < lo <= hi")


@dataclass(frozen=True, eq=False)
class ToyFace:
    """Toy model plus the generator-side data the renderer needs."""

    model: ParametricShapeModel
    identity_sigma: np.ndarray  # prior std of alpha[1:]
    template_uv: np.ndarray  # (n, 2) normalised grid coordinates
    spec: ToyModelSpec


def _grid_uv(n):
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    u = np.linspace(-1.0, 1.0, cols)
    v = np.linspace(-1.0, 1.0, rows)
    uu, vv = np.meshgrid(u, v)
    return np.column_stack([uu.ravel(), vv.ravel()])[:n]


def _cosine_field(uv, coeffs):
    """Smooth scalar field: sum of separable cosines with the given (k, k) coefficients."""
    k = coeffs.shape[0]
    freqs = np.arange(k)
    cu = np.cos(np.pi * freqs[None, :] * (uv[:, 0:1] + 1.0) / 2.0)
    cv = np.cos(np.pi * freqs[None, :] * (uv[:, 1:2] + 1.0) / 2.0)
    return np.einsum("na,nb,ab->n", cu, cv, coeffs)


def _rms(col):
    return float(np.sqrt(np.mean(np.sum(col.reshape(-1, 3) ** 2, axis=1))))


def _farthest_points(uv, count, region=0.85):
    cand = np.flatnonzero(np.max(np.abs(uv), axis=1) <= region)
    if cand.size < count:
        cand = np.arange(uv.shape[0])
    start = cand[np.argmin(np.sum(uv[cand] ** 2, axis=1))]
    chosen = [start]
    dist = np.sum((uv[cand] - uv[start]) ** 2, axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(cand[nxt])
        dist = np.minimum(dist, np.sum((uv[cand] - uv[cand[nxt]]) ** 2, axis=1))
    return np.array(chosen, dtype=np.int64)


def _similarity_modes(shape):
    """Infinitesimal translations, rotations and scaling of ``shape``, (3n, 7)."""
    V = shape.reshape(-1, 3)
    n = V.shape[0]
    modes = []
    for axis in range(3):
        tr = np.zeros((n, 3))
        tr[:, axis] = 1.0
        modes.append(tr.ravel())
        w = np.zeros(3)
        w[axis] = 1.0
        modes.append(np.cross(w, V).ravel())
    modes.append(V.ravel())
    return np.column_stack(modes)


#: (yaw, pitch) views at which bases are decorrelated from pose and identity
_DECORRELATION_VIEWS = ((0.0, 0.0), (0.2, 0.0), (-0.2, 0.0), (0.0, 0.2), (0.0, -0.2))


def _view_fields(fields, n):
    """For each view rotation R with image rows P, map every field m to
    ``R^T P^T P R m`` so that dot products with it measure image-plane overlap."""
    out = []
    for yaw, pitch in _DECORRELATION_VIEWS:
        R = euler_to_rotation(np.array([yaw, pitch, 0.0]))
        Q = R[:2].T @ R[:2]
        out.append((fields.T.reshape(-1, n, 3) @ Q.T).reshape(fields.shape[1], -1).T)
    return np.column_stack(out)


def _project_out(cols, fields, landmarks):
    """Remove from ``cols`` what overlaps ``fields`` in the landmark image
    motion seen from each decorrelation view."""
    n = cols.shape[0] // 3
    G = _view_fields(fields, n)
    rows = (3 * landmarks[:, None] + np.arange(3)[None, :]).ravel()
    coef = np.linalg.lstsq(G[rows], cols[rows], rcond=1e-10)[0]
    return cols - G @ coef


def _orthogonalize(cols, landmarks):
    rows = (3 * landmarks[:, None] + np.arange(2)[None, :]).ravel()
    _, r = np.linalg.qr(cols[rows])
    return np.linalg.solve(r.T, cols.T).T


def _rescale(cols, rms_range, rng):
    out = np.empty_like(cols)
    for c in range(cols.shape[1]):
        out[:, c] = cols[:, c] * rng.uniform(*rms_range) / _rms(cols[:, c])
    return out


def make_toy_model(spec: ToyModelSpec = ToyModelSpec()) -> ToyFace:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    uv = _grid_uv(spec.n_vertices)
    u, v = uv[:, 0], uv[:, 1]
    r = spec.face_radius
    mean = np.column_stack([
        r * u * (1.0 - 0.15 * v),
        1.2 * r * v,
        -spec.face_depth * (1.0 - 0.6 * u**2 - 0.4 * v**2),
    ]).ravel()

    id_cols = [mean]
    for _ in range(spec.m_id):
        col = np.column_stack([
            _cosine_field(uv, rng.standard_normal((spec.smoothness, spec.smoothness))) for _ in range(3)
        ])
        col[:, 2] *= spec.depth_weight
        col = col.ravel()
        id_cols.append(col * rng.uniform(*spec.id_rms) / _rms(col))
    identity_basis = np.column_stack(id_cols)

    exp_cols = []
    for _ in range(spec.m_exp):
        center = rng.uniform(-0.6, 0.6, size=2)
        bump = np.exp(-np.sum((uv - center) ** 2, axis=1) / (2.0 * spec.exp_width**2))
        direction = rng.standard_normal(3)
        direction[2] *= spec.depth_weight
        swirl = rng.standard_normal((2, 2)) * 0.5
        local = (uv - center) @ swirl.T
        disp = bump[:, None] * (direction[None, :] + np.column_stack([local, np.zeros(len(uv))]))
        col = disp.ravel()
        exp_cols.append(col * rng.uniform(*spec.exp_rms) / _rms(col))
    expression_basis = np.column_stack(exp_cols)

    landmarks = _farthest_points(uv, spec.n_landmarks)
    # Components whose landmark image motion looks like a pose change (or, for
    # expression, like an identity change) would leave the fit ambiguous.
    # Each basis is also made orthogonal on the landmarks so that no mix of
    # its columns is nearly invisible there.
    rigid = _similarity_modes(mean)
    identity_basis[:, 1:] = _rescale(
        _orthogonalize(_project_out(identity_basis[:, 1:], rigid, landmarks), landmarks), spec.id_rms, rng
    )
    expression_basis = _rescale(
        _orthogonalize(_project_out(expression_basis, np.column_stack([rigid, identity_basis[:, 1:]]), landmarks),
                       landmarks),
        spec.exp_rms, rng,
    )
    lm_uv = uv[landmarks]
    left = int(np.argmin(np.sum((lm_uv - [-0.45, -0.3]) ** 2, axis=1)))
    d_right = np.sum((lm_uv - [0.45, -0.3]) ** 2, axis=1)
    d_right[left] = np.inf
    right = int(np.argmin(d_right))

    model = ParametricShapeModel(identity_basis, expression_basis, landmarks, (left, right))
    sigma = np.ones(spec.m_id)
    return ToyFace(model, sigma, uv, spec)


@dataclass(frozen=True)
class RenderConfig:
    height: int = 64
    width: int = 64
    kernel_sigma: float = 0.9  # pixels
    gain: float = 0.45
    background: float = 0.1
    pixel_noise: float = 0.01
    warp_radius: float = 0.1  # normalised face units; reach of each landmark displacement
    appearance_seed: int = 1234


def vertex_albedo(n_vertices: int, template_uv, appearance_seed: int) -> np.ndarray:
    rng = np.random.default_rng(appearance_seed)
    smooth = _cosine_field(template_uv, rng.standard_normal((4, 4)) * 0.5)
    speckle = rng.uniform(-1.0, 1.0, n_vertices)
    return np.clip(0.55 + 0.25 * np.tanh(smooth) + 0.25 * speckle, 0.05, 1.0)


def displacement_weights(face: ToyFace, radius: float) -> np.ndarray:
    """(n, L) row-normalised weights spreading landmark displacements to vertices."""
    lm_uv = face.template_uv[face.model.landmark_indices]
    d2 = np.sum((face.template_uv[:, None, :] - lm_uv[None, :, :]) ** 2, axis=2)
    w = np.exp(-d2 / (2.0 * radius**2))
    return w / w.sum(axis=1, keepdims=True)


class Renderer:
    """Renders frames of one toy face; caches albedo and warp weights."""

    def __init__(self, face: ToyFace, config: RenderConfig = RenderConfig()):
        self.face = face
        self.config = config
        self.camera = Camera.for_image(config.width, config.height)
        self.albedo = vertex_albedo(face.model.n_vertices, face.template_uv, config.appearance_seed)
        self.warp = displacement_weights(face, config.warp_radius)
        self.layout = MotionLayout.for_model(face.model)

    def vertex_positions(self, alpha, P) -> np.ndarray:
        lay = self.layout
        S = evaluate_shape(self.face.model, alpha, P[lay.delta]).reshape(-1, 3)
        pts = project_points(S, euler_to_rotation(P[lay.theta]), P[lay.t], self.camera)
        return pts + self.warp @ P[lay.D].reshape(-1, 2)

    def render(self, alpha, P, noise_seed=None) -> np.ndarray:
        """Float image in [0, 1]. ``noise_seed=None`` renders without pixel noise."""
        cfg = self.config
        P = np.asarray(P, dtype=np.float64)
        pts = np.ascontiguousarray(self.vertex_positions(alpha, P))
        img = cfg.background + cfg.gain * kernels.splat(
            pts, self.albedo, cfg.height, cfg.width, cfg.kernel_sigma, 3.0 * cfg.kernel_sigma
        )
        if noise_seed is not None and cfg.pixel_noise > 0:
            img = img + np.random.default_rng(noise_seed).normal(0.0, cfg.pixel_noise, img.shape)
        return np.clip(img, 0.0, 1.0)


def render_frame(face: ToyFace, alpha, camera: Camera, P, size=(64, 64), appearance_seed: int = 1234,
                 noise_seed=None, config: RenderConfig = None) -> np.ndarray:
    cfg = config or RenderConfig(height=size[0], width=size[1], appearance_seed=appearance_seed)
    renderer = Renderer(face, cfg)
    if camera != renderer.camera:
        renderer.camera = camera
    return renderer.render(alpha, P, noise_seed)


@dataclass(frozen=True)
class MotionConfig:
    """Sampling ranges for ground-truth motion and per-frame random-walk steps."""

    delta_max: float = 0.8
    theta_std: float = 0.12
    theta_max: float = 0.3
    t_xy: float = 3.0
    t_z: float = 1000.0
    t_z_range: float = 30.0
    D_std: float = 0.4
    D_max: float = 1.0
    delta_step: float = 0.03
    theta_step: float = 0.015
    t_step: tuple = (0.25, 0.25, 2.0)
    D_step: float = 0.1


def sample_identity(face: ToyFace, rng) -> np.ndarray:
    alpha = np.zeros(face.model.m_id + 1)
    alpha[0] = 1.0
    alpha[1:] = rng.standard_normal(face.model.m_id) * face.identity_sigma
    return alpha


def sample_motion(face: ToyFace, rng, cfg: MotionConfig = MotionConfig()) -> np.ndarray:
    lay = MotionLayout.for_model(face.model)
    P = np.zeros(lay.dim)
    P[lay.delta] = rng.uniform(0.0, cfg.delta_max, lay.m_exp)
    P[lay.theta] = np.clip(rng.normal(0.0, cfg.theta_std, 3), -cfg.theta_max, cfg.theta_max)
    P[lay.t] = [rng.uniform(-cfg.t_xy, cfg.t_xy), rng.uniform(-cfg.t_xy, cfg.t_xy),
                cfg.t_z + rng.uniform(-cfg.t_z_range, cfg.t_z_range)]
    P[lay.D] = np.clip(rng.normal(0.0, cfg.D_std, 2 * lay.n_landmarks), -cfg.D_max, cfg.D_max)
    return P


def _walk_bounds(lay: MotionLayout, cfg: MotionConfig):
    lo = np.empty(lay.dim)
    hi = np.empty(lay.dim)
    lo[lay.delta], hi[lay.delta] = 0.0, 1.0
    lo[lay.theta], hi[lay.theta] = -cfg.theta_max, cfg.theta_max
    lo[lay.t] = [-cfg.t_xy, -cfg.t_xy, cfg.t_z - cfg.t_z_range]
    hi[lay.t] = [cfg.t_xy, cfg.t_xy, cfg.t_z + cfg.t_z_range]
    lo[lay.D], hi[lay.D] = -cfg.D_max, cfg.D_max
    return lo, hi


def step_sizes(lay: MotionLayout, cfg: MotionConfig) -> np.ndarray:
    step = np.empty(lay.dim)
    step[lay.delta] = cfg.delta_step
    step[lay.theta] = cfg.theta_step
    step[lay.t] = cfg.t_step
    step[lay.D] = cfg.D_step
    return step


@dataclass(eq=False)
class SceneSequence:
    frames: np.ndarray  # (T, H, W) float in [0, 1]
    truth: np.ndarray  # (T, dim)
    alpha: np.ndarray
    camera: Camera
    first_landmarks: np.ndarray  # detected landmarks of frame 0, (L, 2)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.frames.shape[0]


def generate_sequence(renderer: Renderer, length: int, seed: int, motion: MotionConfig = MotionConfig(),
                      script=None, alpha=None, landmark_noise: float = 0.0) -> SceneSequence:
    """Render a sequence whose ground truth follows a bounded random walk.

    ``script`` optionally gives the (length, dim) ground truth directly.
    Increments are uniform in ``[-step, step]`` per coordinate and the walk is
    clipped to the motion box, which can only shrink an increment.
    """
    if length < 1:
        raise ConfigurationError("sequence length must be at least 1")
    face = renderer.face
    lay = renderer.layout
    ss = np.random.SeedSequence(int(seed))
    motion_rng, noise_ss = np.random.default_rng(ss.spawn(1)[0]), ss.spawn(1)[0]
    if alpha is None:
        alpha = sample_identity(face, motion_rng)
    if script is not None:
        truth = np.asarray(script, dtype=np.float64)
        if truth.shape != (length, lay.dim):
            raise ConfigurationError(f"motion script has shape {truth.shape}, expected ({length}, {lay.dim})")
    else:
        lo, hi = _walk_bounds(lay, motion)
        step = step_sizes(lay, motion)
        truth = np.empty((length, lay.dim))
        truth[0] = np.clip(sample_motion(face, motion_rng, motion), lo, hi)
        for k in range(1, length):
            truth[k] = np.clip(truth[k - 1] + motion_rng.uniform(-step, step), lo, hi)
    frame_seeds = noise_ss.generate_state(length)
    frames = np.stack([renderer.render(alpha, truth[k], int(frame_seeds[k])) for k in range(length)])
    lms = landmark_positions(face.model, alpha, renderer.camera, truth[0])
    if landmark_noise > 0:
        lms = lms + motion_rng.normal(0.0, landmark_noise, lms.shape)
    return SceneSequence(frames, truth, alpha, renderer.camera, lms, int(seed),
                         {"frame_seeds": frame_seeds})


@dataclass(eq=False)
class TrainingSet:
    """Independent frames with ground truth and per-frame identity."""

    images: np.ndarray  # (n, H, W)
    truth: np.ndarray  # (n, dim)
    alphas: np.ndarray  # (n, m_id + 1)
    camera: Camera

    def __len__(self):
        return self.images.shape[0]


def generate_training_set(renderer: Renderer, n_frames: int, seed: int,
                          motion: MotionConfig = MotionConfig()) -> TrainingSet:
    ss = np.random.SeedSequence(int(seed))
    rng = np.random.default_rng(ss.spawn(1)[0])
    noise_seeds = ss.spawn(1)[0].generate_state(n_frames)
    alphas = np.stack([sample_identity(renderer.face, rng) for _ in range(n_frames)])
    truth = np.stack([sample_motion(renderer.face, rng, motion) for _ in range(n_frames)])
    images = np.stack([renderer.render(alphas[k], truth[k], int(noise_seeds[k])) for k in range(n_frames)])
    return TrainingSet(images, truth, alphas, renderer.camera)
