"""Offline exemplar sets: generation, nearest-pose queries, persistence.

An exemplar is one pre-rendered view of the object at a known rotation,
with the translation fixed to (0, 0, z_bar) for the whole set. Pixel data
is stored sparsely (bit-packed mask plus per-masked-pixel arrays in
float32), which is also exactly the on-disk layout, so save/load round
trips are bit-exact.

File format (little-endian), magic "PFAX", version 1:

    header:  magic[4] | u32 version | u32 count | f64 z_bar |
             f64 fx, fy, cx, cy, width, height | mesh_hash[32] |
             u32 name_len | name (UTF-8)
    per exemplar:
             u32 id | f64 rotation[9] (row-major) |
             mask bits (256*256/8 bytes, row-major, MSB first) |
             f32 points[3 * n_masked] (row-major mask order) |
             f32 shade[n_masked]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ConfigurationError,
    FileFormatError,
    MeshHashMismatchError,
    TruncationError,
    VersionMismatchError,
)
from .geometry import (
    CameraIntrinsics,
    RigidPose,
    angles_from_traces,
    geodesic_distances,
    sample_rotations,
)
from .mesh import MeshModel, mesh_digest
from .raster import CoordinateMap, rasterize

EXEMPLAR_SIZE = 256
MAGIC = b"PFAX"
FORMAT_VERSION = 1

_MASK_BYTES = EXEMPLAR_SIZE * EXEMPLAR_SIZE // 8


@dataclass(eq=False)
class Exemplar:
    """One pre-rendered view: pose, camera, and sparse pixel geometry."""

    id: int
    pose: RigidPose
    camera: CameraIntrinsics
    mask_bits: np.ndarray  # (MASK_BYTES,) uint8, row-major, MSB first
    points: np.ndarray  # (n_masked, 3) float32, model frame
    shade: np.ndarray  # (n_masked,) float32
    mesh_hash: bytes
    tri: np.ndarray | None = None  # (n_masked,) int32; session-only

    @property
    def z_bar(self) -> float:
        return float(self.pose.translation[2])

    def mask(self) -> np.ndarray:
        bits = np.unpackbits(self.mask_bits)[: EXEMPLAR_SIZE * EXEMPLAR_SIZE]
        return bits.reshape(EXEMPLAR_SIZE, EXEMPLAR_SIZE).astype(bool)

    def coordinate_map(self) -> CoordinateMap:
        """Materialize dense buffers; depth is recomputed from the points."""
        size = EXEMPLAR_SIZE
        mask = self.mask()
        points = np.full((size, size, 3), np.nan)
        points[mask] = self.points.astype(np.float64)
        depth = np.full((size, size), np.inf)
        depth[mask] = self.pose.transform(self.points.astype(np.float64))[:, 2]
        shade = np.zeros((size, size))
        shade[mask] = self.shade.astype(np.float64)
        tri = None
        if self.tri is not None:
            tri = np.full((size, size), -1, dtype=np.int32)
            tri[mask] = self.tri
        return CoordinateMap(size, size, points, depth, mask, shade, tri)

    def equals(self, other: "Exemplar") -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.pose.rotation, other.pose.rotation)
            and np.array_equal(self.pose.translation, other.pose.translation)
            and self.camera == other.camera
            and np.array_equal(self.mask_bits, other.mask_bits)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.shade, other.shade)
            and self.mesh_hash == other.mesh_hash
        )


@dataclass(eq=False)
class ExemplarSet:
    """All exemplars of one object, sharing camera and z_bar."""

    object_name: str
    mesh_hash: bytes
    z_bar: float
    camera: CameraIntrinsics
    exemplars: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.mesh_hash) != 32:
            raise ValueError("mesh_hash must be 32 bytes")
        for i, ex in enumerate(self.exemplars):
            if ex.id != i:
                raise ValueError(f"exemplar ids must be dense 0..n-1, found {ex.id} at {i}")
        self._rotation_stack = None

    def __len__(self) -> int:
        return len(self.exemplars)

    def rotation_stack(self) -> np.ndarray:
        """(n, 9) row-major rotations, cached for vectorized queries."""
        if self._rotation_stack is None:
            self._rotation_stack = np.array(
                [ex.pose.rotation.reshape(9) for ex in self.exemplars]
            )
        return self._rotation_stack

    def prefix(self, count: int) -> "ExemplarSet":
        """View of the first ``count`` exemplars (ids stay dense)."""
        return ExemplarSet(
            self.object_name, self.mesh_hash, self.z_bar, self.camera,
            self.exemplars[:count],
        )

    def equals(self, other: "ExemplarSet") -> bool:
        return (
            self.object_name == other.object_name
            and self.mesh_hash == other.mesh_hash
            and self.z_bar == other.z_bar
            and self.camera == other.camera
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.exemplars, other.exemplars))
        )


def ensure_mesh_binding(owner, mesh: MeshModel) -> None:
    """Refuse to pair exemplar data with a mesh it was not generated from."""
    if owner.mesh_hash != mesh_digest(mesh):
        raise MeshHashMismatchError(
            "mesh digest does not match the one the exemplar set was built from"
        )


def _check_frustum(mesh: MeshModel, z_bar: float, camera: CameraIntrinsics) -> None:
    r = mesh.bounding_radius
    if not z_bar - r > 0:
        raise ConfigurationError(
            f"z_bar {z_bar} places the mesh (bounding radius {r:.4g}) behind or "
            "across the camera plane"
        )
    # conservative: the projected bounding sphere must fit for every rotation
    extent = max(camera.fx, camera.fy) * r / (z_bar - r)
    if (
        camera.cx - extent < 0
        or camera.cx + extent >= camera.width
        or camera.cy - extent < 0
        or camera.cy + extent >= camera.height
    ):
        raise ConfigurationError(
            f"object projects up to {extent:.1f} px from the principal point and "
            f"can leave the {camera.width}x{camera.height} exemplar frame; "
            "increase z_bar or the focal length"
        )


def compact_exemplar(
    index: int, pose: RigidPose, camera: CameraIntrinsics, cmap: CoordinateMap,
    digest: bytes,
) -> Exemplar:
    """Quantize a rendered view to its storable (float32, sparse) form."""
    mask = cmap.mask
    bits = np.packbits(mask.reshape(-1))
    points = np.ascontiguousarray(cmap.points[mask], dtype="<f4")
    shade = np.ascontiguousarray(cmap.shade[mask], dtype="<f4")
    tri = None
    if cmap.tri is not None:
        tri = np.ascontiguousarray(cmap.tri[mask], dtype=np.int32)
    return Exemplar(index, pose, camera, bits, points, shade, digest, tri)


def generate_exemplar_set(
    mesh: MeshModel,
    count: int,
    z_bar: float,
    camera: CameraIntrinsics,
    seed: int,
    object_name: str = "object",
) -> ExemplarSet:
    """Render ``count`` views at uniformly sampled rotations, fixed translation."""
    if count < 1:
        raise ConfigurationError("exemplar count must be >= 1")
    if camera.width != EXEMPLAR_SIZE or camera.height != EXEMPLAR_SIZE:
        raise ConfigurationError(
            f"exemplar camera must be {EXEMPLAR_SIZE}x{EXEMPLAR_SIZE}, "
            f"got {camera.width}x{camera.height}"
        )
    _check_frustum(mesh, z_bar, camera)
    digest = mesh_digest(mesh)
    rotations = sample_rotations(count, seed)
    translation = np.array([0.0, 0.0, z_bar])
    exemplars = []
    for i in range(count):
        pose = RigidPose(rotations[i], translation)
        cmap = rasterize(mesh, pose, camera, EXEMPLAR_SIZE)
        exemplars.append(compact_exemplar(i, pose, camera, cmap, digest))
    return ExemplarSet(object_name, digest, float(z_bar), camera, exemplars)


def query_nearest(exemplar_set: ExemplarSet, query: RigidPose, count: int) -> list:
    """The ``count`` exemplars nearest to the query by rotation angle.

    Ties break toward the lower id. Returns min(count, set size) exemplars
    in non-decreasing distance order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(exemplar_set) == 0:
        raise ConfigurationError("cannot query an empty exemplar set")
    distances = geodesic_distances(exemplar_set.rotation_stack(), query.rotation)
    order = np.argsort(distances, kind="stable")
    return [exemplar_set.exemplars[i] for i in order[: min(count, len(order))]]


def mean_query_distance(exemplar_set: ExemplarSet, n_queries: int, seed: int) -> float:
    """Mean nearest-exemplar angle over random query rotations (degrees)."""
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    if len(exemplar_set) == 0:
        raise ConfigurationError("cannot query an empty exemplar set")
    queries = sample_rotations(n_queries, seed).reshape(n_queries, 9)
    stack = exemplar_set.rotation_stack()
    best = np.empty(n_queries)
    chunk = 256
    for start in range(0, n_queries, chunk):
        dots = queries[start : start + chunk] @ stack.T
        best[start : start + chunk] = dots.max(axis=1)
    return float(angles_from_traces(best).mean())


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, f):
        self._f = f
        self.offset = 0

    def read_exact(self, n: int, context: str) -> bytes:
        data = self._f.read(n)
        self.offset += len(data)
        if len(data) != n:
            raise TruncationError(n, len(data), context)
        return data


def save_set(exemplar_set: ExemplarSet, path) -> None:
    cam = exemplar_set.camera
    name = exemplar_set.object_name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(exemplar_set)))
        f.write(struct.pack("<d", exemplar_set.z_bar))
        f.write(
            struct.pack(
                "<6d", cam.fx, cam.fy, cam.cx, cam.cy, float(cam.width), float(cam.height)
            )
        )
        f.write(exemplar_set.mesh_hash)
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        for ex in exemplar_set.exemplars:
            f.write(struct.pack("<I", ex.id))
            f.write(np.ascontiguousarray(ex.pose.rotation, dtype="<f8").tobytes())
            f.write(ex.mask_bits.tobytes())
            f.write(np.ascontiguousarray(ex.points, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(ex.shade, dtype="<f4").tobytes())


def load_set(path) -> ExemplarSet:
    with open(path, "rb") as f:
        reader = _Reader(f)
        magic = reader.read_exact(4, "magic")
        if magic != MAGIC:
            raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
        version, count = struct.unpack("<II", reader.read_exact(8, "header"))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(version, FORMAT_VERSION)
        (z_bar,) = struct.unpack("<d", reader.read_exact(8, "z_bar"))
        fx, fy, cx, cy, width, height = struct.unpack(
            "<6d", reader.read_exact(48, "camera")
        )
        camera = CameraIntrinsics(fx, fy, cx, cy, int(width), int(height))
        digest = reader.read_exact(32, "mesh hash")
        (name_len,) = struct.unpack("<I", reader.read_exact(4, "name length"))
        name = reader.read_exact(name_len, "object name").decode("utf-8")

        translation = np.array([0.0, 0.0, z_bar])
        exemplars = []
        for i in range(count):
            (ex_id,) = struct.unpack("<I", reader.read_exact(4, f"exemplar {i} id"))
            rotation = np.frombuffer(
                reader.read_exact(72, f"exemplar {i} rotation"), dtype="<f8"
            ).reshape(3, 3)
            bits = np.frombuffer(
                reader.read_exact(_MASK_BYTES, f"exemplar {i} mask"), dtype=np.uint8
            ).copy()
            n_masked = int(np.unpackbits(bits).sum())
            points = np.frombuffer(
                reader.read_exact(12 * n_masked, f"exemplar {i} points"), dtype="<f4"
            ).reshape(n_masked, 3).copy()
            shade = np.frombuffer(
                reader.read_exact(4 * n_masked, f"exemplar {i} shade"), dtype="<f4"
            ).copy()
            pose = RigidPose(rotation, translation)
            exemplars.append(Exemplar(ex_id, pose, camera, bits, points, shade, digest))
        if f.read(1):
            raise FileFormatError("unexpected trailing data after last exemplar")
    return ExemplarSet(name, digest, z_bar, camera, exemplars)
