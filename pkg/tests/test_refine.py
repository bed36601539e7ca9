"""Correspondence lifting, aggregation, RANSAC-PnP, and the one-shot pass."""

import numpy as np
import pytest

from pfa.correspond import (
    CorrespondenceSet,
    aggregate,
    lift_correspondences,
    subsample_per_exemplar,
)
from pfa.crops import CropTransform, compute_crop
from pfa.errors import ConfigurationError, RobustFailureError, SolverError
from pfa.exemplars import generate_exemplar_set
from pfa.flow import OracleFlowSource, oracle_flow
from pfa.geometry import (
    CameraIntrinsics,
    RigidPose,
    geodesic_distance,
    pose_jitter,
    project_points,
    sample_rotations,
)
from pfa.mesh import make_box
from pfa.metrics import add_error
from pfa.pnp import reprojection_residuals, solve_pnp
from pfa.raster import SceneSpec
from pfa.refine import PoseEstimate, RansacConfig, ransac_pnp, refine_pose

K_R = CameraIntrinsics(400.0, 400.0, 128.0, 128.0, 256, 256)
K_T = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
BOX = make_box((0.10, 0.08, 0.06))
IDENTITY_CROP = CropTransform.identity(256)


@pytest.fixture(scope="module")
def box_set():
    return generate_exemplar_set(BOX, 128, 1.0, K_R, seed=8)


def _random_target(rng):
    r = sample_rotations(1, int(rng.integers(1 << 30)))[0]
    return RigidPose(
        r, [rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.8, 1.2)]
    )


class TestLift:
    def test_zero_flow_self_consistency(self, box_set):
        ex = box_set.exemplars[0]
        scene = SceneSpec(BOX, ex.pose, (), K_R)
        field = oracle_flow(ex, IDENTITY_CROP, scene, ex.pose, IDENTITY_CROP)
        corr = lift_correspondences(ex, field, IDENTITY_CROP, IDENTITY_CROP, K_R)
        assert len(corr) == int(field.valid.sum())
        direct = project_points(K_R, ex.pose, corr.points)
        assert np.linalg.norm(direct - corr.pixels, axis=1).max() < 0.75

    def test_count_matches_valid_pixels(self, box_set):
        rng = np.random.default_rng(61)
        ex = box_set.exemplars[1]
        target = _random_target(rng)
        scene = SceneSpec(BOX, target, (), K_T)
        crop_r = compute_crop(ex.pose, K_R, BOX)
        crop_t = compute_crop(target, K_R, BOX)
        field = oracle_flow(ex, crop_r, scene, target, crop_t)
        corr = lift_correspondences(ex, field, crop_r, crop_t, K_T)
        assert len(corr) == int(field.valid.sum())
        assert np.all(corr.exemplar_ids == ex.id)

    def test_monte_carlo_reprojection_residuals(self, box_set):
        rng = np.random.default_rng(62)
        residuals = []
        for trial in range(10):
            target = _random_target(rng)
            initial = pose_jitter(target, K_T, BOX, 15.0, 8.0, seed=trial)
            scene = SceneSpec(BOX, target, (), K_T)
            from pfa.exemplars import query_nearest

            ex = query_nearest(box_set, initial, 1)[0]
            crop_r = compute_crop(ex.pose, K_R, BOX)
            crop_t = compute_crop(initial, K_R, BOX)
            field = oracle_flow(ex, crop_r, scene, target, crop_t)
            corr = lift_correspondences(ex, field, crop_r, crop_t, K_T)
            res = np.linalg.norm(
                reprojection_residuals(K_T, target, corr.points, corr.pixels), axis=1
            )
            residuals.append(res)
        residuals = np.concatenate(residuals)
        assert np.mean(residuals < 0.75) >= 0.99

    def test_dimension_mismatch_rejected(self, box_set):
        ex = box_set.exemplars[0]
        scene = SceneSpec(BOX, ex.pose, (), K_R)
        field = oracle_flow(ex, IDENTITY_CROP, scene, ex.pose, IDENTITY_CROP)
        with pytest.raises(ConfigurationError):
            lift_correspondences(ex, field, IDENTITY_CROP, CropTransform.identity(128), K_R)


class TestAggregate:
    def _set_for(self, exemplar_id, n, seed):
        rng = np.random.default_rng(seed)
        return CorrespondenceSet(
            rng.normal(size=(n, 3)), rng.normal(size=(n, 2)),
            np.full(n, exemplar_id, dtype=np.int32),
        )

    def test_single_set_identity(self):
        s = self._set_for(3, 40, 1)
        merged = aggregate([s])
        assert np.array_equal(merged.points, s.points)
        assert np.array_equal(merged.pixels, s.pixels)

    def test_sizes_sum_and_order(self):
        sets = [self._set_for(i, 10 * (i + 1), i) for i in (2, 0, 1)]
        merged = aggregate(sets)
        assert len(merged) == 30 + 10 + 20
        assert np.all(np.diff(merged.exemplar_ids) >= 0)

    def test_empty_input(self):
        assert len(aggregate([])) == 0

    def test_subsample_caps_total_proportionally(self):
        sets = [self._set_for(0, 15000, 4), self._set_for(1, 5000, 5)]
        thinned = subsample_per_exemplar(sets, 10000)
        total = sum(len(s) for s in thinned)
        assert total <= 10000
        assert len(thinned[0]) == 7500 and len(thinned[1]) == 2500
        # deterministic, evenly spaced, no duplicates
        again = subsample_per_exemplar(sets, 10000)
        assert np.array_equal(thinned[0].points, again[0].points)
        assert len(np.unique(thinned[0].points, axis=0)) == len(thinned[0])

    def test_subsample_noop_below_cap(self):
        sets = [self._set_for(0, 100, 6)]
        assert subsample_per_exemplar(sets, 10000)[0] is sets[0]


def _synthetic_correspondences(rng, n, outlier_ratio=0.0, sigma=0.0):
    pts = rng.uniform(-0.06, 0.06, size=(n, 3))
    gt = _random_target(rng)
    uv = project_points(K_T, gt, pts)
    if sigma > 0:
        uv = uv + rng.normal(0, sigma, size=uv.shape)
    n_out = int(round(outlier_ratio * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        uv[idx] = rng.uniform([0, 0], [K_T.width, K_T.height], size=(n_out, 2))
    return gt, CorrespondenceSet(pts, uv, np.zeros(n, dtype=np.int32))


class TestRansac:
    def test_all_inliers_matches_plain_solve(self):
        rng = np.random.default_rng(71)
        gt, corr = _synthetic_correspondences(rng, 500)
        cfg = RansacConfig(seed=5)
        est = ransac_pnp(corr, K_T, cfg)
        assert est.inlier_count == 500
        direct = solve_pnp(corr.points, corr.pixels, K_T)
        assert np.abs(est.pose.rotation - direct.rotation).max() < 1e-9
        assert np.abs(est.pose.translation - direct.translation).max() < 1e-9

    def test_thirty_percent_outliers(self):
        # full 100-trial sweep lives in the acceptance suite
        k_tele = CameraIntrinsics(1000.0, 1000.0, 320.0, 240.0, 640, 480)
        rng = np.random.default_rng(72)
        ok = 0
        for trial in range(20):
            pts = rng.uniform(-0.2, 0.2, size=(2000, 3))
            gt = _random_target(rng)
            uv = project_points(k_tele, gt, pts) + rng.normal(0, 1.0, size=(2000, 2))
            idx = rng.choice(2000, size=600, replace=False)
            uv[idx] = rng.uniform([0, 0], [640, 480], size=(600, 2))
            corr = CorrespondenceSet(pts, uv, np.zeros(2000, dtype=np.int32))
            est = ransac_pnp(corr, k_tele, RansacConfig(seed=trial))
            rot = geodesic_distance(gt.rotation, est.pose.rotation)
            trans = np.linalg.norm(gt.translation - est.pose.translation)
            if rot < 0.5 and trans < 1e-3:
                ok += 1
        assert ok >= 19

    def test_all_outliers_fails_robustly(self):
        rng = np.random.default_rng(73)
        pts = rng.uniform(-0.06, 0.06, size=(300, 3))
        uv = rng.uniform([0, 0], [K_T.width, K_T.height], size=(300, 2))
        corr = CorrespondenceSet(pts, uv, np.zeros(300, dtype=np.int32))
        with pytest.raises(RobustFailureError):
            ransac_pnp(corr, K_T, RansacConfig(seed=1, max_iterations=50))

    def test_too_few_correspondences(self):
        rng = np.random.default_rng(74)
        _, corr = _synthetic_correspondences(rng, 8)
        with pytest.raises(SolverError):
            ransac_pnp(corr, K_T, RansacConfig(min_inliers=12, seed=0))

    def test_inlier_mean_error_below_threshold(self):
        rng = np.random.default_rng(75)
        _, corr = _synthetic_correspondences(rng, 1000, outlier_ratio=0.2, sigma=1.0)
        cfg = RansacConfig(seed=9)
        est = ransac_pnp(corr, K_T, cfg)
        assert est.mean_reproj_err <= cfg.inlier_threshold
        assert est.inlier_count == int(est.inlier_ids.sum())

    def test_deterministic(self):
        rng = np.random.default_rng(76)
        _, corr = _synthetic_correspondences(rng, 800, outlier_ratio=0.25, sigma=1.0)
        a = ransac_pnp(corr, K_T, RansacConfig(seed=33))
        b = ransac_pnp(corr, K_T, RansacConfig(seed=33))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.inlier_ids, b.inlier_ids)

    def test_estimate_validation(self):
        with pytest.raises(ValueError):
            PoseEstimate(RigidPose.identity(), 3, np.array([True, False]), 0.0)


class TestRefinePose:
    def test_exact_flow_single_exemplar(self, box_set):
        rng = np.random.default_rng(81)
        for trial in range(5):
            target = _random_target(rng)
            initial = pose_jitter(target, K_T, BOX, 20.0, 10.0, seed=trial)
            scene = SceneSpec(BOX, target, (), K_T)
            source = OracleFlowSource(scene, target)
            result = refine_pose(
                initial, box_set, BOX, K_T, source, 1, RansacConfig(seed=trial)
            )
            assert add_error(target, result.estimate.pose, BOX) < 0.001 * BOX.diameter

    def test_zero_jitter_still_works(self, box_set):
        rng = np.random.default_rng(82)
        target = _random_target(rng)
        scene = SceneSpec(BOX, target, (), K_T)
        source = OracleFlowSource(scene, target)
        result = refine_pose(target, box_set, BOX, K_T, source, 1, RansacConfig(seed=0))
        assert geodesic_distance(target.rotation, result.estimate.pose.rotation) < 0.1
        assert np.linalg.norm(target.translation - result.estimate.pose.translation) < 1e-3

    def test_diagnostics_cover_all_exemplars(self, box_set):
        rng = np.random.default_rng(83)
        target = _random_target(rng)
        initial = pose_jitter(target, K_T, BOX, 15.0, 5.0, seed=4)
        scene = SceneSpec(BOX, target, (), K_T)
        source = OracleFlowSource(scene, target)
        result = refine_pose(initial, box_set, BOX, K_T, source, 4, RansacConfig(seed=4))
        assert len(result.exemplar_reports) == 4
        assert len({r.exemplar_id for r in result.exemplar_reports}) == 4
        assert all(r.n_correspondences > 0 for r in result.exemplar_reports)
        assert sum(r.inlier_count for r in result.exemplar_reports) == result.estimate.inlier_count
        distances = [r.distance_deg for r in result.exemplar_reports]
        assert distances == sorted(distances)

    def test_solution_independent_of_exemplar_tags(self, box_set):
        # solving on the aggregated set ignores the tags entirely
        rng = np.random.default_rng(84)
        _, corr = _synthetic_correspondences(rng, 600, outlier_ratio=0.1, sigma=0.5)
        retagged = CorrespondenceSet(
            corr.points, corr.pixels, (corr.exemplar_ids + 7).astype(np.int32)
        )
        a = ransac_pnp(corr, K_T, RansacConfig(seed=2))
        b = ransac_pnp(retagged, K_T, RansacConfig(seed=2))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)

    def test_dropout_aggregation_helps(self, box_set):
        # dropout so heavy that one exemplar sometimes starves below
        # min_inliers: N=4 must succeed at least as often as N=1
        from pfa.errors import SolverError
        from pfa.flow import FlowNoiseSpec

        rng = np.random.default_rng(85)
        noise = FlowNoiseSpec.default_preset(dropout_ratio=0.999)
        success = {1: 0, 4: 0}
        for trial in range(10):
            target = _random_target(rng)
            initial = pose_jitter(target, K_T, BOX, 20.0, 10.0, seed=trial)
            scene = SceneSpec(BOX, target, (), K_T)
            for n in (1, 4):
                source = OracleFlowSource(scene, target, noise, base_seed=trial)
                try:
                    result = refine_pose(
                        initial, box_set, BOX, K_T, source, n, RansacConfig(seed=trial)
                    )
                except (RobustFailureError, SolverError):
                    continue
                if add_error(target, result.estimate.pose, BOX) < 0.1 * BOX.diameter:
                    success[n] += 1
        assert success[4] >= success[1]
        assert success[4] >= 8  # aggregation rescues the starved trials
