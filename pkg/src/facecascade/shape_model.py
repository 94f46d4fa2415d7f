"""Linear 3D face model, rigid motion and pinhole projection.

Shapes are stacked vertex vectors ``[x1, y1, z1, ..., xn, yn, zn]``. A shape is
the identity basis times ``alpha`` (whose first entry is pinned to 1 so column
0 acts as the mean neutral face) plus the delta-blendshape expression basis
times ``delta``.

Euler convention: ``R = Ry(yaw) @ Rx(pitch) @ Rz(roll)``, i.e. intrinsic
yaw about Y, then pitch about X, then roll about Z. The camera looks down +z
and points in front of it have positive depth.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from facecascade.errors import BehindCameraError, DimensionError


@dataclass(frozen=True, eq=False)
class ParametricShapeModel:
    identity_basis: np.ndarray
    expression_basis: np.ndarray
    landmark_indices: np.ndarray
    interocular_pair: tuple = (0, 1)

    def __post_init__(self):
        id_b = np.asarray(self.identity_basis, dtype=np.float64)
        ex_b = np.asarray(self.expression_basis, dtype=np.float64)
        lms = np.asarray(self.landmark_indices, dtype=np.int64)
        if id_b.ndim != 2 or id_b.shape[0] % 3 or id_b.shape[1] < 1:
            raise DimensionError(f"identity basis must be (3n, m_id+1), got {id_b.shape}")
        if ex_b.ndim != 2 or ex_b.shape[0] != id_b.shape[0]:
            raise DimensionError(
                f"expression basis rows {ex_b.shape} do not match identity basis rows {id_b.shape[0]}"
            )
        n = id_b.shape[0] // 3
        if lms.ndim != 1 or lms.size == 0 or lms.min() < 0 or lms.max() >= n:
            raise DimensionError(f"landmark indices must lie in [0, {n})")
        a, b = (int(v) for v in self.interocular_pair)
        if a == b or not (0 <= a < lms.size and 0 <= b < lms.size):
            raise DimensionError(f"bad inter-ocular pair {self.interocular_pair}")
        object.__setattr__(self, "identity_basis", id_b)
        object.__setattr__(self, "expression_basis", ex_b)
        object.__setattr__(self, "landmark_indices", lms)
        object.__setattr__(self, "interocular_pair", (a, b))

    @property
    def n_vertices(self) -> int:
        return self.identity_basis.shape[0] // 3

    @property
    def m_id(self) -> int:
        return self.identity_basis.shape[1] - 1

    @property
    def m_exp(self) -> int:
        return self.expression_basis.shape[1]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_indices.size

    @property
    def mean_shape(self) -> np.ndarray:
        return self.identity_basis[:, 0]

    @cached_property
    def _landmark_rows(self):
        return (3 * self.landmark_indices[:, None] + np.arange(3)[None, :]).ravel()

    @cached_property
    def landmark_identity_basis(self) -> np.ndarray:
        """Rows of the identity basis belonging to landmark vertices, (3L, m_id+1)."""
        return np.ascontiguousarray(self.identity_basis[self._landmark_rows])

    @cached_property
    def landmark_expression_basis(self) -> np.ndarray:
        return np.ascontiguousarray(self.expression_basis[self._landmark_rows])

    def mean_identity(self) -> np.ndarray:
        alpha = np.zeros(self.m_id + 1)
        alpha[0] = 1.0
        return alpha


@dataclass(frozen=True)
class Camera:
    f: float = 1000.0
    u0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")

    @classmethod
    def for_image(cls, width: int, height: int, f: float = 1000.0) -> "Camera":
        return cls(f=f, u0=width / 2.0, v0=height / 2.0)


@dataclass(frozen=True, eq=False)
class StaticParams:
    alpha: np.ndarray
    camera: Camera = field(default_factory=Camera)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        alpha[0] = 1.0
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class MotionLayout:
    """Slicing of the flat motion vector ``[delta; theta; t; D]``."""

    m_exp: int
    n_landmarks: int = 66

    @property
    def dim(self) -> int:
        return self.m_exp + 6 + 2 * self.n_landmarks

    @property
    def delta(self) -> slice:
        return slice(0, self.m_exp)

    @property
    def theta(self) -> slice:
        return slice(self.m_exp, self.m_exp + 3)

    @property
    def t(self) -> slice:
        return slice(self.m_exp + 3, self.m_exp + 6)

    @property
    def D(self) -> slice:
        return slice(self.m_exp + 6, self.dim)

    def groups(self):
        """(name, offset, width) for the four modality groups, in order."""
        return [
            ("delta", 0, self.m_exp),
            ("theta", self.m_exp, 3),
            ("t", self.m_exp + 3, 3),
            ("D", self.m_exp + 6, 2 * self.n_landmarks),
        ]

    @classmethod
    def for_model(cls, model: ParametricShapeModel) -> "MotionLayout":
        return cls(model.m_exp, model.n_landmarks)


@dataclass(frozen=True, eq=False)
class MotionParams:
    delta: np.ndarray
    theta: np.ndarray
    t: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("delta", "theta", "t", "D"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64).ravel())
        if self.theta.size != 3 or self.t.size != 3 or self.D.size % 2:
            raise DimensionError("theta and t need 3 entries, D an even count")

    @property
    def layout(self) -> MotionLayout:
        return MotionLayout(self.delta.size, self.D.size // 2)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.theta, self.t, self.D])

    @classmethod
    def from_vector(cls, vec, layout: MotionLayout) -> "MotionParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (layout.dim,):
            raise DimensionError(f"motion vector has shape {vec.shape}, expected ({layout.dim},)")
        return cls(vec[layout.delta], vec[layout.theta], vec[layout.t], vec[layout.D])


def evaluate_shape(model: ParametricShapeModel, alpha, delta) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if alpha.shape != (model.m_id + 1,):
        raise DimensionError(f"alpha has shape {alpha.shape}, model needs ({model.m_id + 1},)")
    if delta.shape != (model.m_exp,):
        raise DimensionError(f"delta has shape {delta.shape}, model needs ({model.m_exp},)")
    return model.identity_basis @ alpha + model.expression_basis @ delta


def euler_to_rotation(theta) -> np.ndarray:
    """Rotation matrix for (yaw, pitch, roll) in radians."""
    return euler_to_rotation_batch(np.asarray(theta, dtype=np.float64)[None, :])[0]


def euler_to_rotation_batch(theta: np.ndarray) -> np.ndarray:
    """(N, 3) Euler angles -> (N, 3, 3) rotation matrices."""
    ca, sa = np.cos(theta[:, 0]), np.sin(theta[:, 0])
    cb, sb = np.cos(theta[:, 1]), np.sin(theta[:, 1])
    cc, sc = np.cos(theta[:, 2]), np.sin(theta[:, 2])
    R = np.empty((theta.shape[0], 3, 3))
    R[:, 0, 0] = ca * cc + sa * sb * sc
    R[:, 0, 1] = -ca * sc + sa * sb * cc
    R[:, 0, 2] = sa * cb
    R[:, 1, 0] = cb * sc
    R[:, 1, 1] = cb * cc
    R[:, 1, 2] = -sb
    R[:, 2, 0] = -sa * cc + ca * sb * sc
    R[:, 2, 1] = sa * sc + ca * sb * cc
    R[:, 2, 2] = ca * cb
    return R


def rotation_to_euler(R) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation` (pitch restricted to [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=np.float64)
    pitch = np.arcsin(np.clip(-R[1, 2], -1.0, 1.0))
    yaw = np.arctan2(R[0, 2], R[2, 2])
    roll = np.arctan2(R[1, 0], R[1, 1])
    return np.array([yaw, pitch, roll])


def project_points(V: np.ndarray, R: np.ndarray, t, camera: Camera) -> np.ndarray:
    """Project (k, 3) world points with one rigid transform; returns (k, 2)."""
    Xc = V @ R.T + np.asarray(t, dtype=np.float64)
    z = Xc[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"{int(np.sum(z <= 0))} point(s) at or behind the camera plane")
    return np.column_stack([camera.f * Xc[:, 0] / z + camera.u0, camera.f * Xc[:, 1] / z + camera.v0])


def project_point(v, theta, t, camera: Camera) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(1, 3)
    return project_points(v, euler_to_rotation(theta), t, camera)[0]


def landmarks_3d(model: ParametricShapeModel, alpha, delta) -> np.ndarray:
    """World-space landmark vertices, (L, 3). ``delta`` may be (m_exp,) or (N, m_exp)."""
    base = model.landmark_identity_basis @ np.asarray(alpha, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    S = base + delta @ model.landmark_expression_basis.T
    return S.reshape(S.shape[:-1] + (-1, 3))


def landmark_positions(model: ParametricShapeModel, alpha, camera: Camera, P) -> np.ndarray:
    """Projected landmarks plus 2D displacements, (L, 2)."""
    if isinstance(P, MotionParams):
        P = P.to_vector()
    layout = MotionLayout.for_model(model)
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (layout.dim,):
        raise DimensionError(f"motion vector has shape {P.shape}, expected ({layout.dim},)")
    return landmark_positions_batch(model, alpha, camera, P[None, :])[0]


def landmark_positions_batch(model: ParametricShapeModel, alpha, camera: Camera, P: np.ndarray) -> np.ndarray:
    """Vectorised :func:`landmark_positions` for (N, dim) motion vectors.

    ``alpha`` is either one identity vector shared by all rows or an (N, m_id+1)
    array. Returns (N, L, 2).
    """
    layout = MotionLayout.for_model(model)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 1:
        base = (model.landmark_identity_basis @ alpha)[None, :]
    else:
        base = alpha @ model.landmark_identity_basis.T
    S = base + P[:, layout.delta] @ model.landmark_expression_basis.T
    V = S.reshape(P.shape[0], -1, 3)
    R = euler_to_rotation_batch(P[:, layout.theta])
    Xc = np.einsum("nij,nlj->nli", R, V) + P[:, None, layout.t]
    z = Xc[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"{int(np.sum(z <= 0))} landmark(s) at or behind the camera plane")
    u = camera.f * Xc[..., 0] / z + camera.u0
    v = camera.f * Xc[..., 1] / z + camera.v0
    D = P[:, layout.D].reshape(P.shape[0], -1, 2)
    return np.stack([u, v], axis=-1) + D


def interocular_distance(model: ParametricShapeModel, landmarks: np.ndarray) -> np.ndarray:
    a, b = model.interocular_pair
    return np.linalg.norm(landmarks[..., a, :] - landmarks[..., b, :], axis=-1)
