"""First-frame fit of identity, expression and rigid pose to 2D landmarks.

The energy is the squared landmark reprojection error plus a Gaussian prior on
identity (weight ``w1``, per-mode deviations ``sigma``) and an L1 sparsity
term on expression (weight ``w2``). Coordinate descent alternates a damped
Gauss-Newton identity solve, a box-constrained projected-gradient expression
solve, and a POSIT pose estimate; each sub-step is kept only if it does not
raise the energy.
"""

from dataclasses import dataclass, field

import numpy as np

from facecascade.errors import (
    BehindCameraError,
    ConvergenceError,
    DegenerateConfigurationError,
    DimensionError,
    FaceCascadeError,
)
from facecascade.shape_model import (
    Camera,
    MotionLayout,
    ParametricShapeModel,
    euler_to_rotation,
    rotation_to_euler,
)


@dataclass(frozen=True)
class FitConfig:
    w1: float = 10.0
    w2: float = 1.0
    outer_iterations: int = 3
    lower: float = 0.0
    upper: float = 1.0
    pg_max_iter: int = 500
    pg_tol: float = 1e-10
    gn_max_iter: int = 20
    posit_max_iter: int = 200
    posit_tol: float = 1e-12

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("energy weights must be non-negative")
        if self.outer_iterations < 1:
            raise ValueError("need at least one outer iteration")


@dataclass(eq=False)
class FitResult:
    alpha: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    t: np.ndarray
    D: np.ndarray
    energy: float
    energy_trace: list = field(default_factory=list)

    def motion_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.theta, self.t, self.D])


def _check_sigma(sigma, model):
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (model.m_id,):
        raise DimensionError(f"identity deviations need {model.m_id} entries")
    if np.any(sigma == 0):
        raise ValueError("identity deviations must be non-zero")
    return sigma


def _project_with_jac(V, R, t, camera):
    """Projections (L, 2) and d(uv)/d(camera point) as (L, 2, 3)."""
    Xc = V @ R.T + t
    z = Xc[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"{int(np.sum(z <= 0))} landmark(s) at or behind the camera plane")
    f = camera.f
    uv = np.column_stack([f * Xc[:, 0] / z + camera.u0, f * Xc[:, 1] / z + camera.v0])
    J = np.zeros((V.shape[0], 2, 3))
    J[:, 0, 0] = f / z
    J[:, 1, 1] = f / z
    J[:, 0, 2] = -f * Xc[:, 0] / z**2
    J[:, 1, 2] = -f * Xc[:, 1] / z**2
    return uv, J


def landmark_energy(alpha, delta, theta, t, detected, model: ParametricShapeModel, camera: Camera,
                    config: FitConfig = FitConfig(), sigma=None):
    """Energy and its gradient with respect to ``alpha[1:]`` and ``delta``.

    Returns ``(E, grad_alpha, grad_delta)``. The gradient of ``|delta_i|`` is
    taken as ``sign(delta_i)`` (zero at zero).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    sigma = _check_sigma(np.ones(model.m_id) if sigma is None else sigma, model)
    detected = np.asarray(detected, dtype=np.float64)
    if detected.shape != (model.n_landmarks, 2):
        raise DimensionError(f"detected landmarks must be ({model.n_landmarks}, 2)")
    R = euler_to_rotation(theta)
    S = model.landmark_identity_basis @ alpha + model.landmark_expression_basis @ delta
    uv, J = _project_with_jac(S.reshape(-1, 3), R, np.asarray(t, dtype=np.float64), camera)
    r = uv - detected
    e_lan = float(np.sum(r * r))
    free = alpha[1:]
    e_reg = config.w1 * float(np.sum((free / sigma) ** 2)) + config.w2 * float(np.sum(np.abs(delta)))
    dV = (2.0 * np.einsum("lk,lkc->lc", r, J)) @ R  # d E_lan / d vertex, (L, 3)
    g = dV.ravel()
    grad_alpha = model.landmark_identity_basis[:, 1:].T @ g + 2.0 * config.w1 * free / sigma**2
    grad_delta = model.landmark_expression_basis.T @ g + config.w2 * np.sign(delta)
    return e_lan + e_reg, grad_alpha, grad_delta


def _energy(alpha, delta, theta, t, detected, model, camera, config, sigma):
    return landmark_energy(alpha, delta, theta, t, detected, model, camera, config, sigma)[0]


def posit(model_points, image_points, camera: Camera, max_iter: int = 200, tol: float = 1e-12):
    """Rigid pose from 3D-2D correspondences by POSIT.

    Iterates scaled-orthographic pose estimates, correcting the image points
    for perspective each round, until the correction terms settle. Returns
    Euler angles and translation such that ``image ~ project(R @ X + t)``.
    """
    M = np.asarray(model_points, dtype=np.float64)
    uv = np.asarray(image_points, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != 3 or M.shape[0] < 4 or uv.shape != (M.shape[0], 2):
        raise DimensionError("POSIT needs at least four 3D points and matching 2D points")
    ref = M.mean(axis=0)
    A = M - ref
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("POSIT needs non-coplanar model points")
    B = np.linalg.pinv(A)
    x = (uv[:, 0] - camera.u0) / camera.f
    y = (uv[:, 1] - camera.v0) / camera.f
    eps = np.zeros(M.shape[0])
    for _ in range(max_iter):
        # The centroid is a virtual reference point; its image follows from
        # the weak-perspective relation averaged over all points.
        w = 1.0 + eps
        x0 = np.mean(x * w)
        y0 = np.mean(y * w)
        I = B @ (x * w - x0)
        J = B @ (y * w - y0)
        ni, nj = np.linalg.norm(I), np.linalg.norm(J)
        if ni == 0 or nj == 0:
            raise ConvergenceError("POSIT produced a degenerate pose")
        s = np.sqrt(ni * nj)
        r1, r2 = I / ni, J / nj
        r3 = np.cross(r1, r2)
        r3 /= np.linalg.norm(r3)
        Z0 = 1.0 / s
        new_eps = A @ r3 / Z0
        if np.max(np.abs(new_eps - eps)) < tol:
            eps = new_eps
            break
        eps = new_eps
    else:
        raise ConvergenceError(f"POSIT did not converge in {max_iter} iterations")
    w = 1.0 + eps
    x0 = np.mean(x * w)
    y0 = np.mean(y * w)
    I = B @ (x * w - x0)
    J = B @ (y * w - y0)
    s = np.sqrt(np.linalg.norm(I) * np.linalg.norm(J))
    U, _, Vt = np.linalg.svd(np.vstack([I / np.linalg.norm(I), J / np.linalg.norm(J),
                                        np.cross(I, J) / np.linalg.norm(np.cross(I, J))]))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        raise ConvergenceError("POSIT produced a reflection")
    Z0 = 1.0 / s
    t_ref = np.array([x0 * Z0, y0 * Z0, Z0])
    t = t_ref - R @ ref
    if t_ref[2] <= 0:
        raise BehindCameraError("POSIT placed the object behind the camera")
    return rotation_to_euler(R), t


def solve_expression_bounded(alpha, theta, t, detected, model: ParametricShapeModel, camera: Camera,
                             config: FitConfig = FitConfig(), sigma=None, delta0=None, trace=None) -> np.ndarray:
    """Minimise the energy over ``delta`` inside the box by projected gradient.

    Trial steps use a Barzilai-Borwein length and are backtracked until the
    projected step gives sufficient decrease, so accepted iterates never raise
    the energy and never leave the box.
    """
    lo, hi = config.lower, config.upper
    delta = np.clip(np.zeros(model.m_exp) if delta0 is None else np.asarray(delta0, dtype=np.float64), lo, hi)

    def fg(d):
        e, _, g = landmark_energy(alpha, d, theta, t, detected, model, camera, config, sigma)
        if lo >= 0:
            # |d| = d on the box, so use its one-sided slope at zero too
            g = g + config.w2 * (d == 0)
        return e, g

    e, g = fg(delta)
    if trace is not None:
        trace.append(e)
    step = 1.0 / max(1e-12, float(np.linalg.norm(g))) if np.any(g) else 1.0
    prev_d = prev_g = None
    for _ in range(config.pg_max_iter):
        if prev_d is not None:
            s, yv = delta - prev_d, g - prev_g
            sy = float(s @ yv)
            if sy > 0:
                step = float(s @ s) / sy
        accepted = False
        for _ in range(60):
            cand = np.clip(delta - step * g, lo, hi)
            move = cand - delta
            if not np.any(move):
                break
            e_new, g_new = fg(cand)
            if e_new <= e + 1e-4 * float(g @ move):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if e_new > e:
            raise FaceCascadeError("projected gradient accepted an energy increase")
        prev_d, prev_g = delta, g
        delta, g, e_old, e = cand, g_new, e, e_new
        if trace is not None:
            trace.append(e)
        if np.max(np.abs(move)) < config.pg_tol or e_old - e <= config.pg_tol * max(1.0, e):
            break
    return delta


def _solve_identity(alpha, delta, theta, t, detected, model, camera, config, sigma):
    """Damped Gauss-Newton on ``alpha[1:]`` with pose and expression fixed."""
    R = euler_to_rotation(theta)
    t = np.asarray(t, dtype=np.float64)
    prior = 2.0 * config.w1 / sigma**2
    A_lm = model.landmark_identity_basis
    alpha = alpha.copy()
    e = _energy(alpha, delta, theta, t, detected, model, camera, config, sigma)
    for _ in range(config.gn_max_iter):
        S = A_lm @ alpha + model.landmark_expression_basis @ delta
        uv, Jp = _project_with_jac(S.reshape(-1, 3), R, t, camera)
        r = (uv - detected).ravel()
        # d uv / d alpha_free: (2L, m_id)
        dV = A_lm[:, 1:].reshape(model.n_landmarks, 3, -1)
        Jac = np.einsum("lkc,cd,ldm->lkm", Jp, R, dV).reshape(2 * model.n_landmarks, -1)
        H = 2.0 * Jac.T @ Jac + np.diag(prior)
        grad = 2.0 * Jac.T @ r + prior * alpha[1:]
        step = np.linalg.solve(H, grad)
        lam = 1.0
        improved = False
        for _ in range(30):
            cand = alpha.copy()
            cand[1:] -= lam * step
            e_new = _energy(cand, delta, theta, t, detected, model, camera, config, sigma)
            if e_new <= e:
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        alpha, e_old, e = cand, e, e_new
        if e_old - e <= 1e-13 * max(1.0, e):
            break
    return alpha


def _rotation_derivatives(theta):
    """d R / d theta_k for the three Euler angles, by central differences."""
    h = 1e-6
    out = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        out.append((euler_to_rotation(theta + e) - euler_to_rotation(theta - e)) / (2 * h))
    return out


def refine_pose(V, detected, theta, t, camera: Camera, max_iter: int = 10):
    """Gauss-Newton on the reprojection error over ``(theta, t)``.

    POSIT solves a scaled-orthographic surrogate, so when the shape does not
    match the landmarks exactly its pose is not the reprojection minimiser.
    Steps are halved until the error does not grow.
    """
    theta = np.asarray(theta, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)

    def err(th, tt):
        uv = _project_with_jac(V, euler_to_rotation(th), tt, camera)[0]
        return float(np.sum((uv - detected) ** 2))

    e = err(theta, t)
    for _ in range(max_iter):
        R = euler_to_rotation(theta)
        uv, J = _project_with_jac(V, R, t, camera)
        r = (uv - detected).ravel()
        cols = [np.einsum("lkc,lc->lk", J, V @ dR.T).ravel() for dR in _rotation_derivatives(theta)]
        A = np.column_stack(cols + [J[:, :, c].ravel() for c in range(3)])
        step = np.linalg.lstsq(A, r, rcond=None)[0]
        lam = 1.0
        for _ in range(30):
            th_new, t_new = theta - lam * step[:3], t - lam * step[3:]
            try:
                e_new = err(th_new, t_new)
            except BehindCameraError:
                e_new = np.inf
            if e_new <= e:
                break
            lam *= 0.5
        else:
            break
        theta, t, e_old, e = th_new, t_new, e, e_new
        if e_old - e <= 1e-14 * max(1.0, e):
            break
    return theta, t


def fit_first_frame(detected, model: ParametricShapeModel, camera: Camera, config: FitConfig = FitConfig(),
                    sigma=None) -> FitResult:
    """Fit identity, expression and pose to detected landmarks by coordinate descent.

    Pose is initialised by POSIT on the mean face. Each outer iteration solves
    identity, then expression, then pose. Displacements are the residual
    between detected and projected landmarks, so the fitted parameters plus
    ``D`` reproduce ``detected`` exactly.
    """
    detected = np.asarray(detected, dtype=np.float64)
    if detected.shape != (model.n_landmarks, 2):
        raise DimensionError(f"detected landmarks must be ({model.n_landmarks}, 2)")
    sigma = _check_sigma(np.ones(model.m_id) if sigma is None else sigma, model)
    alpha = model.mean_identity()
    delta = np.zeros(model.m_exp)

    def landmarks_of(a, d):
        S = model.landmark_identity_basis @ a + model.landmark_expression_basis @ d
        return S.reshape(-1, 3)

    step = "initial pose"
    try:
        theta, t = posit(landmarks_of(alpha, delta), detected, camera, config.posit_max_iter, config.posit_tol)
        energy = _energy(alpha, delta, theta, t, detected, model, camera, config, sigma)
        trace = [energy]
        for _ in range(config.outer_iterations):
            step = "identity"
            alpha = _solve_identity(alpha, delta, theta, t, detected, model, camera, config, sigma)
            step = "expression"
            delta = solve_expression_bounded(alpha, theta, t, detected, model, camera, config, sigma, delta0=delta)
            step = "pose"
            V = landmarks_of(alpha, delta)
            th_new, t_new = posit(V, detected, camera, config.posit_max_iter, config.posit_tol)
            th_new, t_new = refine_pose(V, detected, th_new, t_new, camera)
            e_pose = _energy(alpha, delta, th_new, t_new, detected, model, camera, config, sigma)
            if e_pose <= _energy(alpha, delta, theta, t, detected, model, camera, config, sigma):
                theta, t = th_new, t_new
            energy = _energy(alpha, delta, theta, t, detected, model, camera, config, sigma)
            trace.append(energy)
    except FaceCascadeError as exc:
        raise type(exc)(f"first-frame fit failed in {step} step: {exc}") from exc

    projected = _project_with_jac(landmarks_of(alpha, delta), euler_to_rotation(theta), t, camera)[0]
    D = (detected - projected).ravel()
    return FitResult(alpha, delta, np.asarray(theta), np.asarray(t), D, energy, trace)


def fit_motion_vector(result: FitResult, model: ParametricShapeModel) -> np.ndarray:
    lay = MotionLayout.for_model(model)
    vec = result.motion_vector()
    assert vec.shape == (lay.dim,)
    return vec
