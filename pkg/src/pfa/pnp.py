"""Perspective-n-point solving: closed-form initialization plus refinement.

The closed form expresses the 3D points in a barycentric basis of four
control points (three when the cloud is planar), solves the projection
constraints for the control points' camera coordinates via the null space
of the constraint matrix, resolves the combination weights from pairwise
control-point distances, and recovers the pose by rigid alignment. A
damped Gauss-Newton pass then minimizes the reprojection error directly;
damping guarantees the cost never increases between accepted steps.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverError
from .geometry import (
    CameraIntrinsics,
    RigidPose,
    project_camera_points,
    rotation_from_rotvec,
)

DEGENERACY_TOL = 1e-6
GN_MAX_ITERATIONS = 20
GN_STEP_TOL = 1e-10

_PAIRS4 = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
_PAIRS3 = [(0, 1), (0, 2), (1, 2)]


def singular_profile(points: np.ndarray) -> np.ndarray:
    """Singular values of the centered point cloud (shape analysis)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centered = pts - pts.mean(axis=0)
    return np.linalg.svd(centered, compute_uv=False)


def is_degenerate_sample(points, tol: float = DEGENERACY_TOL) -> bool:
    """True when points are within ``tol`` of coplanar (or worse)."""
    s = singular_profile(points)
    return s[0] <= 0 or s[2] < tol * s[0]


def reprojection_residuals(
    camera: CameraIntrinsics, pose: RigidPose, points: np.ndarray, pixels: np.ndarray
) -> np.ndarray:
    """Per-correspondence residuals (N, 2): projected minus observed."""
    q = pose.transform(points)
    return project_camera_points(camera, q) - np.asarray(pixels, dtype=np.float64)


def reprojection_jacobian(
    camera: CameraIntrinsics, pose: RigidPose, points: np.ndarray
) -> np.ndarray:
    """Analytic Jacobian (N, 2, 6) of the residual in (rotvec, translation).

    The pose is perturbed as (exp([w]) R, t + dt); derivatives are taken at
    zero perturbation. Column order: wx, wy, wz, tx, ty, tz.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rotated = pts @ pose.rotation.T
    q = rotated + pose.translation
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    inv_z = 1.0 / z
    n = len(pts)

    duv_dq = np.zeros((n, 2, 3))
    duv_dq[:, 0, 0] = camera.fx * inv_z
    duv_dq[:, 0, 2] = -camera.fx * x * inv_z * inv_z
    duv_dq[:, 1, 1] = camera.fy * inv_z
    duv_dq[:, 1, 2] = -camera.fy * y * inv_z * inv_z

    # dq/dw = -[rotated]_x, dq/dt = identity
    dq_dw = np.zeros((n, 3, 3))
    dq_dw[:, 0, 1] = rotated[:, 2]
    dq_dw[:, 0, 2] = -rotated[:, 1]
    dq_dw[:, 1, 0] = -rotated[:, 2]
    dq_dw[:, 1, 2] = rotated[:, 0]
    dq_dw[:, 2, 0] = rotated[:, 1]
    dq_dw[:, 2, 1] = -rotated[:, 0]

    jac = np.empty((n, 2, 6))
    jac[:, :, :3] = np.einsum("nij,njk->nik", duv_dq, dq_dw)
    jac[:, :, 3:] = duv_dq
    return jac


def gauss_newton(
    camera: CameraIntrinsics,
    pose: RigidPose,
    points: np.ndarray,
    pixels: np.ndarray,
    max_iterations: int = GN_MAX_ITERATIONS,
    step_tol: float = GN_STEP_TOL,
):
    """Minimize the summed squared reprojection error from a starting pose.

    Returns (pose, costs) where costs lists the accepted cost after each
    iteration, starting with the initial cost; it is non-increasing.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    obs = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    current = pose
    residuals = reprojection_residuals(camera, current, pts, obs)
    cost = float(np.sum(residuals**2))
    costs = [cost]
    damping = 0.0

    for _ in range(max_iterations):
        jac = reprojection_jacobian(camera, current, pts).reshape(-1, 6)
        grad = jac.T @ residuals.reshape(-1)
        hess = jac.T @ jac
        scale = np.diag(np.maximum(np.diag(hess), 1e-12))

        accepted = None
        for _ in range(30):
            try:
                step = np.linalg.solve(hess + damping * scale, -grad)
            except np.linalg.LinAlgError:
                damping = max(damping * 10.0, 1e-8)
                continue
            candidate = RigidPose(
                rotation_from_rotvec(step[:3]) @ current.rotation,
                current.translation + step[3:],
            )
            new_residuals = reprojection_residuals(camera, candidate, pts, obs)
            new_cost = float(np.sum(new_residuals**2))
            if new_cost <= cost:
                accepted = (candidate, new_residuals, new_cost, step)
                break
            damping = max(damping * 10.0, 1e-8)
        if accepted is None:
            break
        current, residuals, cost, step = accepted
        costs.append(cost)
        damping *= 0.1
        if float(np.abs(step).max()) < step_tol:
            break
    return current, costs


def solve_pnp(points, pixels, camera: CameraIntrinsics) -> RigidPose:
    """Recover the pose from >= 4 3D-to-2D correspondences.

    Raises:
        SolverError: fewer than 4 points, or a collinear configuration.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    obs = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 4:
        raise SolverError(f"need at least 4 correspondences, got {len(pts)}")
    if len(pts) != len(obs):
        raise SolverError("point and pixel counts disagree")

    s = singular_profile(pts)
    if s[0] <= 0 or s[1] < DEGENERACY_TOL * s[0]:
        raise SolverError("correspondence points are collinear or coincident")
    planar = s[2] < DEGENERACY_TOL * s[0]

    initial = _epnp(pts, obs, camera, planar)
    if initial is None:
        raise SolverError("closed-form initialization found no valid pose")
    pose, _ = gauss_newton(camera, initial, pts, obs)
    return pose


# ---------------------------------------------------------------------------
# Closed-form core
# ---------------------------------------------------------------------------


def _epnp(pts, obs, camera, planar: bool) -> RigidPose | None:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scales = s / np.sqrt(len(pts))

    if planar:
        ctrl = np.vstack(
            [centroid + scales[0] * vt[0], centroid + scales[1] * vt[1], centroid]
        )
        rel0 = centered @ vt[0] / scales[0]
        rel1 = centered @ vt[1] / scales[1]
        alphas = np.stack([rel0, rel1, 1.0 - rel0 - rel1], axis=1)
        pairs = _PAIRS3
    else:
        ctrl = np.vstack([centroid + scales[i] * vt[i] for i in range(3)] + [centroid])
        system = np.vstack([ctrl.T, np.ones((1, 4))])
        rhs = np.vstack([pts.T, np.ones((1, len(pts)))])
        alphas = np.linalg.solve(system, rhs).T
        pairs = _PAIRS4

    n_ctrl = len(ctrl)
    basis = _null_basis(_constraint_matrix(alphas, obs, camera), n_ctrl)
    dist_w = np.array([np.linalg.norm(ctrl[i] - ctrl[j]) for i, j in pairs])
    rho = dist_w**2

    candidates = [_betas_case1(n_ctrl)]
    if planar:
        candidates.append(_betas_case2_planar(basis, pairs, rho))
    else:
        ell = _distance_constraints(basis, pairs)
        candidates.append(_betas_case2(ell, rho))
        candidates.append(_betas_case3(ell, rho))
        candidates = [
            _refine_betas(basis, b, pairs, rho) for b in candidates if b is not None
        ]

    best = None
    for betas in candidates:
        if betas is None:
            continue
        solved = _pose_from_betas(basis, betas, alphas, pts, obs, camera, pairs, dist_w)
        if solved is None:
            continue
        err, pose = solved
        if best is None or err < best[0]:
            best = (err, pose)
    return None if best is None else best[1]


def _constraint_matrix(alphas, obs, camera) -> np.ndarray:
    n, k = alphas.shape
    m = np.zeros((2 * n, 3 * k))
    u = obs[:, 0]
    v = obs[:, 1]
    m[0::2, 0::3] = alphas * camera.fx
    m[0::2, 2::3] = alphas * (camera.cx - u)[:, None]
    m[1::2, 1::3] = alphas * camera.fy
    m[1::2, 2::3] = alphas * (camera.cy - v)[:, None]
    return m


def _null_basis(m: np.ndarray, n_ctrl: int) -> np.ndarray:
    """Eigenvectors of M^T M for the ``n_ctrl`` smallest eigenvalues."""
    _, vectors = np.linalg.eigh(m.T @ m)
    return vectors[:, :n_ctrl]


def _distance_constraints(basis, pairs) -> np.ndarray:
    """Rows: one per control-point pair; columns: quadratic beta terms.

    Column order for 4 basis vectors:
    B11 B12 B13 B14 B22 B23 B24 B33 B34 B44.
    """
    k = basis.shape[1]
    vecs = [basis[:, i].reshape(-1, 3) for i in range(k)]
    rows = []
    for i, j in pairs:
        diffs = [v[i] - v[j] for v in vecs]
        row = []
        for a in range(k):
            for b in range(a, k):
                coeff = 1.0 if a == b else 2.0
                row.append(coeff * float(diffs[a] @ diffs[b]))
        rows.append(row)
    return np.array(rows)


def _betas_case1(n_ctrl: int) -> np.ndarray:
    betas = np.zeros(n_ctrl)
    betas[0] = 1.0
    return betas


def _betas_case2(ell: np.ndarray, rho: np.ndarray) -> np.ndarray | None:
    sub = ell[:, [0, 1, 4]]
    sol, *_ = np.linalg.lstsq(sub, rho, rcond=None)
    b11, b12, b22 = sol
    betas = np.zeros(4)
    betas[0] = np.sqrt(abs(b11))
    sign = -1.0 if (b11 > 0) != (b12 > 0) else 1.0
    betas[1] = sign * np.sqrt(abs(b22))
    return betas


def _betas_case3(ell: np.ndarray, rho: np.ndarray) -> np.ndarray | None:
    sub = ell[:, [0, 1, 2, 4, 5, 7]]
    try:
        sol = np.linalg.solve(sub, rho)
    except np.linalg.LinAlgError:
        return None
    b11, b12, b13, b22, _, b33 = sol
    betas = np.zeros(4)
    betas[0] = np.sqrt(abs(b11))
    betas[1] = (-1.0 if (b11 > 0) != (b12 > 0) else 1.0) * np.sqrt(abs(b22))
    betas[2] = (-1.0 if (b11 > 0) != (b13 > 0) else 1.0) * np.sqrt(abs(b33))
    return betas


def _betas_case2_planar(basis, pairs, rho) -> np.ndarray | None:
    ell = _distance_constraints(basis[:, :2], pairs)  # columns B11 B12 B22
    sol, *_ = np.linalg.lstsq(ell, rho, rcond=None)
    b11, b12, b22 = sol
    betas = np.zeros(basis.shape[1])
    betas[0] = np.sqrt(abs(b11))
    betas[1] = (-1.0 if (b11 > 0) != (b12 > 0) else 1.0) * np.sqrt(abs(b22))
    return betas


def _refine_betas(basis, betas, pairs, rho, iterations: int = 5) -> np.ndarray:
    """Gauss-Newton on the pairwise-distance residuals of the betas."""
    k = basis.shape[1]
    vecs = [basis[:, i].reshape(-1, 3) for i in range(k)]
    diffs = np.array([[v[i] - v[j] for v in vecs] for i, j in pairs])  # (P, k, 3)
    betas = betas.copy()
    for _ in range(iterations):
        combo = np.einsum("pkd,k->pd", diffs, betas)
        res = np.einsum("pd,pd->p", combo, combo) - rho
        jac = 2.0 * np.einsum("pd,pkd->pk", combo, diffs)
        try:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        betas += step
    return betas


def _pose_from_betas(basis, betas, alphas, pts, obs, camera, pairs, dist_w):
    ctrl_cam = (basis @ betas).reshape(-1, 3)
    dist_c = np.array([np.linalg.norm(ctrl_cam[i] - ctrl_cam[j]) for i, j in pairs])
    denom = float(dist_c @ dist_c)
    if denom <= 0:
        return None
    ctrl_cam = ctrl_cam * (float(dist_c @ dist_w) / denom)
    cam_pts = alphas @ ctrl_cam
    if cam_pts[:, 2].mean() < 0:
        cam_pts = -cam_pts
    if np.any(cam_pts[:, 2] <= 0):
        return None
    rotation, translation = _rigid_align(pts, cam_pts)
    try:
        pose = RigidPose(rotation, translation)
    except ValueError:
        return None
    res = reprojection_residuals(camera, pose, pts, obs)
    return float(np.linalg.norm(res, axis=1).mean()), pose


def _rigid_align(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation and translation with dst ~ R @ src + t."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rotation, cd - rotation @ cs
