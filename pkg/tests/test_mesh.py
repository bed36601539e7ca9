"""Mesh loading, validation, and primitives."""

import struct

import numpy as np
import pytest

from pfa.errors import DegenerateTriangleError, EmptyMeshError, MeshParseError
from pfa.mesh import (
    MeshModel,
    face_normals,
    load_mesh,
    make_box,
    make_plate,
    make_tetrahedron,
    mesh_digest,
    save_obj,
)

UNIT_CUBE_OBJ = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 3 4 8
f 3 8 7
f 1 5 8
f 1 8 4
f 2 3 7
f 2 7 6
"""

TETRA_PLY = """\
ply
format ascii 1.0
element vertex 4
property float x
property float y
property float z
element face 4
property list uchar int vertex_indices
end_header
1 1 1
1 -1 -1
-1 1 -1
-1 -1 1
3 0 1 2
3 0 3 1
3 0 2 3
3 1 3 2
"""


def _binary_tetra_ply() -> bytes:
    header = (
        b"ply\nformat binary_little_endian 1.0\n"
        b"element vertex 4\n"
        b"property float x\nproperty float y\nproperty float z\n"
        b"element face 4\n"
        b"property list uchar int vertex_indices\n"
        b"end_header\n"
    )
    verts = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype="<f4"
    ).tobytes()
    faces = b""
    for tri in [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]:
        faces += struct.pack("<B3i", 3, *tri)
    return header + verts + faces


class TestLoadMesh:
    def test_unit_cube_obj(self, tmp_path):
        path = tmp_path / "cube.obj"
        path.write_text(UNIT_CUBE_OBJ)
        mesh = load_mesh(path)
        assert len(mesh.vertices) == 8
        assert len(mesh.triangles) == 12
        assert abs(mesh.diameter - np.sqrt(3.0)) < 1e-12

    def test_tetrahedron_ascii_ply(self, tmp_path):
        path = tmp_path / "tetra.ply"
        path.write_text(TETRA_PLY)
        mesh = load_mesh(path)
        assert len(mesh.vertices) == 4
        assert len(mesh.triangles) == 4

    def test_tetrahedron_binary_ply(self, tmp_path):
        path = tmp_path / "tetra_bin.ply"
        path.write_bytes(_binary_tetra_ply())
        mesh = load_mesh(path)
        assert len(mesh.vertices) == 4
        assert len(mesh.triangles) == 4
        ascii_path = tmp_path / "tetra.ply"
        ascii_path.write_text(TETRA_PLY)
        assert np.allclose(mesh.vertices, load_mesh(ascii_path).vertices)

    def test_truncated_binary_names_offset(self, tmp_path):
        data = _binary_tetra_ply()
        path = tmp_path / "trunc.ply"
        path.write_bytes(data[: len(data) - 20])
        with pytest.raises(MeshParseError) as info:
            load_mesh(path)
        assert info.value.byte_offset is not None
        assert "byte offset" in str(info.value)

    def test_truncated_ascii_vertices(self, tmp_path):
        path = tmp_path / "trunc_ascii.ply"
        path.write_text("\n".join(TETRA_PLY.splitlines()[:11]) + "\n")
        with pytest.raises(MeshParseError):
            load_mesh(path)

    def test_empty_obj(self, tmp_path):
        path = tmp_path / "empty.obj"
        path.write_text("# nothing here\n")
        with pytest.raises(EmptyMeshError):
            load_mesh(path)

    def test_degenerate_triangle(self, tmp_path):
        path = tmp_path / "degen.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 1 2\n")
        with pytest.raises(DegenerateTriangleError):
            load_mesh(path)

    def test_face_index_out_of_range(self, tmp_path):
        path = tmp_path / "oob.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 9\n")
        with pytest.raises(MeshParseError):
            load_mesh(path)

    def test_obj_slash_indices_and_quads(self, tmp_path):
        path = tmp_path / "quads.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\n"
            "f 1/1 2/2 3/3 4/4\nf 1//1 2//2 5//5\n"
        )
        mesh = load_mesh(path)
        assert len(mesh.triangles) == 3  # quad fan-split + one triangle

    def test_save_load_round_trip(self, tmp_path):
        mesh = make_box((0.2, 0.3, 0.4))
        save_obj(mesh, tmp_path / "box.obj")
        back = load_mesh(tmp_path / "box.obj")
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.triangles, mesh.triangles)


class TestMeshModel:
    def test_requires_four_vertices(self):
        with pytest.raises(EmptyMeshError):
            MeshModel(np.zeros((3, 3)), np.array([[0, 1, 2]]))

    def test_diameter_matches_brute_force(self):
        rng = np.random.default_rng(3)
        verts = rng.normal(size=(600, 3))
        mesh = make_tetrahedron()
        big = MeshModel(verts, mesh.triangles)  # indices still in range
        brute = max(
            np.linalg.norm(verts[i] - verts[j])
            for i in range(0, 600, 7)
            for j in range(0, 600, 11)
        )
        assert big.diameter >= brute - 1e-12
        d2 = np.sum((verts[:, None] - verts[None]) ** 2, axis=2)
        assert abs(big.diameter - np.sqrt(d2.max())) < 1e-9

    def test_box_diameter(self):
        assert abs(make_box((1, 1, 1)).diameter - np.sqrt(3.0)) < 1e-12

    def test_digest_sensitive_to_geometry(self):
        a = make_box((0.1, 0.1, 0.1))
        b = make_box((0.1, 0.1, 0.100001))
        assert mesh_digest(a) != mesh_digest(b)
        assert mesh_digest(a) == mesh_digest(make_box((0.1, 0.1, 0.1)))

    def test_face_normals_unit(self):
        n = face_normals(make_tetrahedron(0.3))
        assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)

    def test_plate_symmetry_vertices(self):
        plate = make_plate(0.2)
        flipped = plate.vertices @ np.diag([-1.0, -1.0, 1.0]).T
        # 180 deg rotation about z permutes the vertex set exactly
        for v in flipped:
            assert min(np.linalg.norm(plate.vertices - v, axis=1)) < 1e-15
