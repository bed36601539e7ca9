"""Shared test utilities: independent oracles and synthetic geometry."""

from __future__ import annotations

import numpy as np

from pfa.geometry import CameraIntrinsics, RigidPose
from pfa.mesh import MeshModel


def ray_trace_reference(mesh: MeshModel, pose: RigidPose, camera: CameraIntrinsics, size):
    """Brute-force per-pixel ray/triangle intersection (depth oracle).

    Casts a ray through every pixel center and intersects it with every
    triangle (Moller-Trumbore), keeping the smallest positive depth. This
    is the O(pixels x triangles) reference the rasterizer must match.
    """
    if np.isscalar(size):
        width = height = int(size)
    else:
        width, height = (int(s) for s in size)
    cam_v = pose.transform(mesh.vertices)
    a = cam_v[mesh.triangles[:, 0]]
    e1 = cam_v[mesh.triangles[:, 1]] - a
    e2 = cam_v[mesh.triangles[:, 2]] - a

    depth = np.full((height, width), np.inf)
    for row in range(height):
        for col in range(width):
            direction = np.array(
                [
                    (col + 0.5 - camera.cx) / camera.fx,
                    (row + 0.5 - camera.cy) / camera.fy,
                    1.0,
                ]
            )
            pvec = np.cross(direction, e2)
            det = np.einsum("ij,ij->i", e1, pvec)
            ok = np.abs(det) > 1e-15
            inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            tvec = -a
            u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
            qvec = np.cross(tvec, e1)
            v = (qvec @ direction) * inv_det
            t = np.einsum("ij,ij->i", e2, qvec) * inv_det
            hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
            if hit.any():
                depth[row, col] = t[hit].min()
    return np.isfinite(depth), depth


def random_small_mesh(rng: np.random.Generator, n_triangles: int = 12) -> MeshModel:
    """Random triangle soup in front of the camera, non-degenerate."""
    while True:
        vertices = rng.uniform(-0.5, 0.5, size=(max(4, n_triangles), 3))
        vertices[:, 2] += 2.0
        triangles = []
        for _ in range(n_triangles):
            tri = rng.choice(len(vertices), size=3, replace=False)
            a, b, c = vertices[tri]
            if np.linalg.norm(np.cross(b - a, c - a)) > 1e-6:
                triangles.append(tri)
        if len(triangles) >= 1:
            try:
                return MeshModel(vertices, np.array(triangles))
            except Exception:
                continue


def random_pose(rng: np.random.Generator, depth: float = 1.0) -> RigidPose:
    from pfa.geometry import random_rotation

    lateral = rng.uniform(-0.05, 0.05, size=2)
    return RigidPose(
        random_rotation(rng), [lateral[0], lateral[1], depth * rng.uniform(0.9, 1.1)]
    )


def reprojection_residual_max(cmap, pose: RigidPose, camera: CameraIntrinsics) -> float:
    """Largest distance between masked-pixel centers and their reprojection."""
    from pfa.geometry import project_points

    ys, xs = np.nonzero(cmap.mask)
    if len(xs) == 0:
        return 0.0
    uv = project_points(camera, pose, cmap.points[cmap.mask])
    centers = np.stack([xs + 0.5, ys + 0.5], axis=1)
    return float(np.linalg.norm(uv - centers, axis=1).max())
