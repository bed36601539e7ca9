"""Exemplar set generation, queries, and the binary container format."""

import hashlib
import struct

import numpy as np
import pytest

from helpers import reprojection_residual_max
from pfa.errors import (
    BadMagicError,
    ConfigurationError,
    MeshHashMismatchError,
    TruncationError,
    VersionMismatchError,
)
from pfa.exemplars import (
    EXEMPLAR_SIZE,
    ensure_mesh_binding,
    generate_exemplar_set,
    load_set,
    mean_query_distance,
    query_nearest,
    save_set,
)
from pfa.geometry import RigidPose, geodesic_distance, sample_rotations
from pfa.geometry import CameraIntrinsics
from pfa.mesh import make_box, make_tetrahedron

K_R = CameraIntrinsics(400.0, 400.0, 128.0, 128.0, 256, 256)
BOX = make_box((0.10, 0.08, 0.06))


@pytest.fixture(scope="module")
def small_set():
    return generate_exemplar_set(BOX, 32, 1.0, K_R, seed=5)


class TestGeneration:
    def test_translation_fixed_and_ids_dense(self, small_set):
        for i, ex in enumerate(small_set.exemplars):
            assert ex.id == i
            assert np.array_equal(ex.pose.translation, [0.0, 0.0, 1.0])

    def test_single_exemplar_round_trip_invariant(self):
        one = generate_exemplar_set(BOX, 1, 1.0, K_R, seed=2)
        ex = one.exemplars[0]
        cmap = ex.coordinate_map()
        assert reprojection_residual_max(cmap, ex.pose, K_R) < 0.71

    def test_rotations_match_sampler(self, small_set):
        expected = sample_rotations(32, 5)
        for ex, rot in zip(small_set.exemplars, expected):
            assert np.array_equal(ex.pose.rotation, rot)

    def test_deterministic_and_bit_identical_file(self, tmp_path):
        a = generate_exemplar_set(BOX, 8, 1.0, K_R, seed=9)
        b = generate_exemplar_set(BOX, 8, 1.0, K_R, seed=9)
        assert a.mesh_hash == b.mesh_hash
        save_set(a, tmp_path / "a.pfax")
        save_set(b, tmp_path / "b.pfax")
        ha = hashlib.sha256((tmp_path / "a.pfax").read_bytes()).digest()
        hb = hashlib.sha256((tmp_path / "b.pfax").read_bytes()).digest()
        assert ha == hb

    def test_zero_count_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_exemplar_set(BOX, 0, 1.0, K_R, seed=0)

    def test_out_of_frustum_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_exemplar_set(BOX, 4, 0.08, K_R, seed=0)  # z_bar inside the mesh
        big = make_box((1.2, 1.2, 1.2))
        with pytest.raises(ConfigurationError):
            generate_exemplar_set(big, 4, 1.1, K_R, seed=0)  # projects past the frame

    def test_wrong_camera_size_rejected(self):
        bad = CameraIntrinsics(400.0, 400.0, 64.0, 64.0, 128, 128)
        with pytest.raises(ConfigurationError):
            generate_exemplar_set(BOX, 4, 1.0, bad, seed=0)


class TestQueries:
    def test_exact_pose_returns_distance_zero(self, small_set):
        target = small_set.exemplars[11]
        found = query_nearest(small_set, target.pose, 1)
        assert found[0].id == 11
        assert geodesic_distance(found[0].pose.rotation, target.pose.rotation) == 0.0

    def test_four_neighbors_sorted(self, small_set):
        query = RigidPose(sample_rotations(1, 77)[0], [0, 0, 1.0])
        found = query_nearest(small_set, query, 4)
        assert len(found) == 4
        assert len({ex.id for ex in found}) == 4
        distances = [geodesic_distance(query.rotation, ex.pose.rotation) for ex in found]
        assert all(b >= a for a, b in zip(distances, distances[1:]))

    def test_count_exceeding_size_returns_all(self, small_set):
        query = RigidPose(sample_rotations(1, 3)[0], [0, 0, 1.0])
        assert len(query_nearest(small_set, query, 1000)) == len(small_set)

    def test_empty_set_rejected(self, small_set):
        empty = small_set.prefix(0)
        with pytest.raises(ConfigurationError):
            query_nearest(empty, RigidPose.identity(), 1)

    def test_matches_brute_force_sort(self, small_set):
        rng = np.random.default_rng(40)
        for _ in range(10):
            query = RigidPose(sample_rotations(1, int(rng.integers(1 << 30)))[0], [0, 0, 1.0])
            for count in (1, 3, 32):
                found = query_nearest(small_set, query, count)
                brute = sorted(
                    small_set.exemplars,
                    key=lambda ex: (
                        geodesic_distance(query.rotation, ex.pose.rotation),
                        ex.id,
                    ),
                )[:count]
                assert [ex.id for ex in found] == [ex.id for ex in brute]

    def test_mean_query_distance_deterministic_and_zero_on_hit(self, small_set):
        a = mean_query_distance(small_set, 50, seed=13)
        b = mean_query_distance(small_set, 50, seed=13)
        assert a == b
        # a set containing the query rotation itself contributes zero
        hit_set = small_set.prefix(1)
        queries = sample_rotations(1, 5)  # prefix(1) holds sample_rotations(.., 5)[0]
        assert np.array_equal(hit_set.exemplars[0].pose.rotation, queries[0])
        assert mean_query_distance(hit_set, 1, seed=5) < 1e-6

    def test_nested_prefix_monotonicity(self, small_set):
        distances = [
            mean_query_distance(small_set.prefix(n), 200, seed=3) for n in (8, 16, 32)
        ]
        assert distances[0] >= distances[1] >= distances[2]


class TestPersistence:
    def test_round_trip_equality(self, small_set, tmp_path):
        path = tmp_path / "set.pfax"
        save_set(small_set, path)
        loaded = load_set(path)
        assert loaded.equals(small_set)
        # depth reconstruction matches the source render on masked pixels
        src = small_set.exemplars[3].coordinate_map()
        back = loaded.exemplars[3].coordinate_map()
        assert np.array_equal(src.depth[src.mask], back.depth[back.mask])

    def test_file_size_is_exactly_additive(self, tmp_path):
        a = generate_exemplar_set(BOX, 4, 1.0, K_R, seed=9)
        b = generate_exemplar_set(BOX, 8, 1.0, K_R, seed=9)
        save_set(a, tmp_path / "n4.pfax")
        save_set(b, tmp_path / "n8.pfax")
        per_exemplar = [
            4 + 72 + len(ex.mask_bits) + 16 * len(ex.points) for ex in b.exemplars
        ]
        size4 = (tmp_path / "n4.pfax").stat().st_size
        size8 = (tmp_path / "n8.pfax").stat().st_size
        assert size8 - size4 == sum(per_exemplar[4:])

    def test_bad_magic(self, tmp_path, small_set):
        path = tmp_path / "set.pfax"
        save_set(small_set, path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_set(path)

    def test_version_mismatch_names_both(self, tmp_path, small_set):
        path = tmp_path / "set.pfax"
        save_set(small_set, path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError) as info:
            load_set(path)
        assert "2" in str(info.value) and "1" in str(info.value)

    def test_truncation_reports_counts(self, tmp_path, small_set):
        path = tmp_path / "set.pfax"
        save_set(small_set, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 37])
        with pytest.raises(TruncationError) as info:
            load_set(path)
        assert info.value.expected_bytes > info.value.actual_bytes

    def test_mesh_hash_binding(self, small_set):
        ensure_mesh_binding(small_set, BOX)
        with pytest.raises(MeshHashMismatchError):
            ensure_mesh_binding(small_set, make_tetrahedron(0.08))

    def test_loaded_exemplar_reprojection_invariant(self, small_set, tmp_path):
        path = tmp_path / "set.pfax"
        save_set(small_set, path)
        loaded = load_set(path)
        for ex in loaded.exemplars[:4]:
            assert reprojection_residual_max(ex.coordinate_map(), ex.pose, K_R) < 0.71
