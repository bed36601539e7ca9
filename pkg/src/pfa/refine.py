"""Robust pose recovery: RANSAC over PnP and the one-shot refinement pass."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .correspond import (
    CorrespondenceSet,
    aggregate,
    lift_correspondences,
    subsample_per_exemplar,
)
from .crops import DEFAULT_CROP_PAD, DEFAULT_CROP_SIZE, CropTransform, compute_crop
from .errors import RobustFailureError, SolverError
from .exemplars import ExemplarSet, ensure_mesh_binding, query_nearest
from .flow import FlowField
from .geometry import CameraIntrinsics, RigidPose, geodesic_distance
from .mesh import MeshModel
from .pnp import is_degenerate_sample, reprojection_residuals, solve_pnp

MAX_CORRESPONDENCES = 20000


@dataclass(frozen=True)
class RansacConfig:
    """Hypothesize-and-verify parameters for robust PnP."""

    inlier_threshold: float = 2.0  # pixels
    max_iterations: int = 1000
    confidence: float = 0.999
    min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be at least 4")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(eq=False)
class PoseEstimate:
    """A solved pose with its supporting inliers."""

    pose: RigidPose
    inlier_count: int
    inlier_ids: np.ndarray  # (N,) bool over the input correspondences
    mean_reproj_err: float  # pixels, over inliers

    def __post_init__(self):
        self.inlier_ids = np.asarray(self.inlier_ids, dtype=bool)
        if self.inlier_count != int(self.inlier_ids.sum()):
            raise ValueError("inlier_count disagrees with inlier_ids")


@dataclass(frozen=True)
class ExemplarReport:
    """Per-exemplar diagnostics of one refinement pass."""

    exemplar_id: int
    distance_deg: float
    n_correspondences: int
    inlier_count: int


@dataclass(eq=False)
class RefineResult:
    """Estimate plus the per-exemplar diagnostics that produced it."""

    estimate: PoseEstimate
    exemplar_reports: list


class FlowSource(Protocol):
    """Anything that can produce a flow field for a retrieved exemplar."""

    def flow_for(
        self, exemplar, rank: int, crop_exemplar: CropTransform, crop_target: CropTransform
    ) -> FlowField: ...


def _adaptive_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio >= 1.0:
        return 0
    p_sample = inlier_ratio**4
    if p_sample <= 0.0:
        return cap
    denom = math.log1p(-min(p_sample, 1.0 - 1e-15))
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / denom)))


def ransac_pnp(
    correspondences: CorrespondenceSet, camera: CameraIntrinsics, cfg: RansacConfig
) -> PoseEstimate:
    """Robust PnP: minimal 4-point hypotheses, inlier voting, final solve.

    Deterministic for a fixed seed. Minimal samples within 1e-6 of coplanar
    are rejected. The iteration budget shrinks adaptively with the best
    inlier ratio under the configured confidence.

    Raises:
        RobustFailureError: no hypothesis reached ``min_inliers``; the error
            carries the best attempt (possibly None).
    """
    n = len(correspondences)
    if n < cfg.min_inliers:
        raise SolverError(
            f"need at least min_inliers={cfg.min_inliers} correspondences, got {n}"
        )
    pts = correspondences.points
    obs = correspondences.pixels
    rng = np.random.default_rng(cfg.seed)

    best_count = 0
    best_inliers = None
    best_pose = None
    needed = cfg.max_iterations
    iteration = 0
    while iteration < needed:
        iteration += 1
        sample = rng.choice(n, size=4, replace=False)
        if is_degenerate_sample(pts[sample]):
            continue
        try:
            hypothesis = solve_pnp(pts[sample], obs[sample], camera)
        except SolverError:
            continue
        residuals = np.linalg.norm(
            reprojection_residuals(camera, hypothesis, pts, obs), axis=1
        )
        inliers = residuals < cfg.inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            best_pose = hypothesis
            needed = min(
                cfg.max_iterations,
                max(iteration, _adaptive_iterations(count / n, cfg.confidence, cfg.max_iterations)),
            )

    if best_count < cfg.min_inliers:
        best = None
        if best_pose is not None:
            res = np.linalg.norm(
                reprojection_residuals(camera, best_pose, pts, obs), axis=1
            )
            mean_err = float(res[best_inliers].mean()) if best_count else float("inf")
            best = PoseEstimate(best_pose, best_count, best_inliers, mean_err)
        raise RobustFailureError(
            f"no hypothesis reached min_inliers={cfg.min_inliers} "
            f"(best consensus {best_count}/{n})",
            best_estimate=best,
        )

    # final stage: re-solve on the consensus set, re-select, and iterate to
    # the fixed point so the estimate sheds the minimal-sample selection bias
    pose = best_pose
    inliers = best_inliers
    for _ in range(10):
        try:
            refined = solve_pnp(pts[inliers], obs[inliers], camera)
        except SolverError:
            break  # keep the previous pose; its inliers remain valid
        res = np.linalg.norm(reprojection_residuals(camera, refined, pts, obs), axis=1)
        refit = res < cfg.inlier_threshold
        if int(refit.sum()) < cfg.min_inliers:
            break
        pose = refined
        if np.array_equal(refit, inliers):
            inliers = refit
            break
        inliers = refit

    final_res = np.linalg.norm(reprojection_residuals(camera, pose, pts, obs), axis=1)
    mean_err = float(final_res[inliers].mean())
    return PoseEstimate(pose, int(inliers.sum()), inliers, mean_err)


def refine_pose(
    initial: RigidPose,
    exemplar_set: ExemplarSet,
    mesh: MeshModel,
    target_camera: CameraIntrinsics,
    flow_source: FlowSource,
    n_exemplars: int,
    cfg: RansacConfig,
    *,
    crop_pad: float = DEFAULT_CROP_PAD,
    crop_size: int = DEFAULT_CROP_SIZE,
    max_correspondences: int = MAX_CORRESPONDENCES,
) -> RefineResult:
    """One-shot refinement: retrieve, lift per-exemplar flow, solve jointly.

    Retrieves the nearest exemplars to the initial pose, computes crops for
    each exemplar view and one crop for the target (from the initial pose,
    expressed under the exemplar camera so crops compose with the
    intrinsics alignment), lifts every flow field to correspondences,
    aggregates, and runs robust PnP once.
    """
    ensure_mesh_binding(exemplar_set, mesh)
    neighbors = query_nearest(exemplar_set, initial, n_exemplars)
    crop_target = compute_crop(initial, exemplar_set.camera, mesh, crop_size, crop_pad)

    per_exemplar = []
    distances = []
    for rank, exemplar in enumerate(neighbors):
        crop_exemplar = compute_crop(
            exemplar.pose, exemplar.camera, mesh, crop_size, crop_pad
        )
        field = flow_source.flow_for(exemplar, rank, crop_exemplar, crop_target)
        per_exemplar.append(
            lift_correspondences(exemplar, field, crop_exemplar, crop_target, target_camera)
        )
        distances.append(geodesic_distance(initial.rotation, exemplar.pose.rotation))

    per_exemplar = subsample_per_exemplar(per_exemplar, max_correspondences)
    merged = aggregate(per_exemplar)

    def _reports(inlier_mask=None):
        reports = []
        for exemplar, corr, dist in zip(neighbors, per_exemplar, distances):
            if inlier_mask is None:
                inl = 0
            else:
                inl = int(inlier_mask[merged.exemplar_ids == exemplar.id].sum())
            reports.append(
                ExemplarReport(exemplar.id, float(dist), len(corr), inl)
            )
        return reports

    try:
        estimate = ransac_pnp(merged, target_camera, cfg)
    except RobustFailureError as failure:
        mask = None
        if failure.best_estimate is not None:
            mask = failure.best_estimate.inlier_ids
        failure.exemplar_reports = _reports(mask)
        raise
    return RefineResult(estimate, _reports(estimate.inlier_ids))
