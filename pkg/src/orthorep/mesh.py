"""Triangle mesh loading, validation, normalization, and augmentation.

Canonical axis frame used throughout the package: +x is longitudinal
(front of the vehicle points toward +x), +y is lateral (left side), +z is
up. Meshes in a different frame can be remapped with :func:`remap_axes`.

All meshes are immutable after construction; every operation returns a
new mesh, so instances are safe to share across threads.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# Faces with area at or below this are dropped on load: their normals are
# undefined and they contribute nothing to rasterization.
DEGENERATE_AREA = 1e-12

# STL facets duplicate vertices; coordinates within this distance are welded.
WELD_TOLERANCE = 1e-8

NORMAL_UNIT_TOL = 1e-6


class MeshError(ValueError):
    """Raised for unreadable, malformed, or geometrically invalid mesh data.

    Attributes:
        path: Source file, when the error is tied to one.
        line: 1-based line number within the source file, when known.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)
        self.path = path
        self.line = line


def _triangle_geometry(vertices: np.ndarray, faces: np.ndarray):
    """Return (raw cross products, areas) for each face, right-hand rule."""
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    return cross, areas


def compute_face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit face normals from vertex winding (right-hand rule).

    Raises:
        MeshError: If any face is degenerate (area <= 1e-12).
    """
    cross, areas = _triangle_geometry(vertices, faces)
    if faces.size and np.any(areas <= DEGENERATE_AREA):
        bad = int(np.argmax(areas <= DEGENERATE_AREA))
        raise MeshError(f"face {bad} is degenerate (area {areas[bad]:.3e})")
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    return cross / np.where(norms == 0.0, 1.0, norms)


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh with per-face unit normals.

    Fields:
        vertices: (N, 3) float64 positions in meters.
        faces: (M, 3) int64 vertex indices.
        face_normals: (M, 3) float64 unit normals, right-hand rule winding.

    Construction validates that coordinates are finite, indices are in
    range, no face is degenerate, and every normal has unit length. Arrays
    are frozen (non-writeable) afterwards.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        n = np.ascontiguousarray(np.asarray(self.face_normals, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (M, 3), got {f.shape}")
        if n.shape != f.shape[:1] + (3,):
            raise MeshError(f"face_normals shape {n.shape} does not match faces {f.shape}")
        if v.size and not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError("face index out of range")
            _, areas = _triangle_geometry(v, f)
            if np.any(areas <= DEGENERATE_AREA):
                bad = int(np.argmax(areas <= DEGENERATE_AREA))
                raise MeshError(f"face {bad} is degenerate (area {areas[bad]:.3e})")
            lengths = np.linalg.norm(n, axis=1)
            if np.any(np.abs(lengths - 1.0) > NORMAL_UNIT_TOL):
                raise MeshError("face normal is not unit length")
        for arr in (v, f, n):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "face_normals", n)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as (min, max) corners."""
        if not len(self.vertices):
            raise MeshError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def face_areas(self) -> np.ndarray:
        _, areas = _triangle_geometry(self.vertices, self.faces)
        return areas

    def surface_area(self) -> float:
        return float(self.face_areas().sum())


def make_mesh(vertices, faces, *, drop_degenerate: bool = False) -> TriMesh:
    """Build a TriMesh, computing normals from winding.

    Args:
        vertices: (N, 3) array-like of positions.
        faces: (M, 3) array-like of vertex indices.
        drop_degenerate: Silently drop faces with area <= 1e-12 instead of
            raising. The number dropped is logged as a warning.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshError("face index out of range")
    if drop_degenerate and len(f):
        _, areas = _triangle_geometry(v, f)
        keep = areas > DEGENERATE_AREA
        dropped = int((~keep).sum())
        if dropped:
            logger.warning("dropped %d degenerate face(s)", dropped)
            f = f[keep]
    normals = compute_face_normals(v, f) if len(f) else np.zeros((0, 3))
    return TriMesh(v, f, normals)


# ---------------------------------------------------------------------------
# Augmentation

class AugKind(enum.Enum):
    IDENTITY = "identity"
    WIDTH_RESIZE = "width_resize"
    BILATERAL_FLIP = "bilateral_flip"


WIDTH_RESIZE_MIN = 1.0 / 1.2
WIDTH_RESIZE_MAX = 1.2


@dataclass(frozen=True)
class Augmentation:
    """A single mesh augmentation step.

    ``width_resize`` scales the lateral (y) coordinate by ``factor``,
    constrained to [1/1.2, 1.2]. Compositions (e.g. resize then flip) are
    represented as ordered sequences of Augmentation values; see
    :func:`apply_augmentations`.
    """

    kind: AugKind
    factor: float = 1.0

    def __post_init__(self):
        if self.kind is AugKind.WIDTH_RESIZE:
            if not (WIDTH_RESIZE_MIN - 1e-12 <= self.factor <= WIDTH_RESIZE_MAX + 1e-12):
                raise ValueError(
                    f"width_resize factor {self.factor} outside "
                    f"[{WIDTH_RESIZE_MIN:.4f}, {WIDTH_RESIZE_MAX}]"
                )
        elif self.factor != 1.0:
            raise ValueError(f"{self.kind.value} takes no factor")

    @staticmethod
    def identity() -> "Augmentation":
        return Augmentation(AugKind.IDENTITY)

    @staticmethod
    def width_resize(factor: float) -> "Augmentation":
        return Augmentation(AugKind.WIDTH_RESIZE, float(factor))

    @staticmethod
    def bilateral_flip() -> "Augmentation":
        return Augmentation(AugKind.BILATERAL_FLIP)

    def to_json(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind is AugKind.WIDTH_RESIZE:
            d["factor"] = self.factor
        return d

    @staticmethod
    def from_json(d: dict) -> "Augmentation":
        kind = AugKind(d["kind"])
        if kind is AugKind.WIDTH_RESIZE:
            return Augmentation(kind, float(d["factor"]))
        return Augmentation(kind)


def apply_augmentation(mesh: TriMesh, aug: Augmentation) -> TriMesh:
    """Apply one augmentation step, returning a new mesh.

    width_resize multiplies y by the factor and recomputes normals from the
    deformed geometry. bilateral_flip negates y, reverses face winding so
    normals keep pointing outward, and recomputes normals. identity returns
    an equal mesh.
    """
    if aug.kind is AugKind.IDENTITY:
        return TriMesh(mesh.vertices, mesh.faces, mesh.face_normals)
    if aug.kind is AugKind.WIDTH_RESIZE:
        v = mesh.vertices.copy()
        v[:, 1] *= aug.factor
        return make_mesh(v, mesh.faces)
    if aug.kind is AugKind.BILATERAL_FLIP:
        v = mesh.vertices.copy()
        v[:, 1] = -v[:, 1]
        f = mesh.faces[:, [0, 2, 1]]
        return make_mesh(v, f)
    raise ValueError(f"unknown augmentation kind {aug.kind!r}")


def apply_augmentations(mesh: TriMesh, augs) -> TriMesh:
    """Apply a sequence of augmentation steps in order."""
    for aug in augs:
        mesh = apply_augmentation(mesh, aug)
    return mesh


def normalize_length(mesh: TriMesh, target_length: float = 3.5) -> TriMesh:
    """Uniformly scale so the bounding-box x extent equals target_length.

    Normals are unchanged (uniform positive scaling preserves direction).

    Raises:
        MeshError: If the mesh is empty or has zero longitudinal extent.
    """
    lo, hi = mesh.bounds()
    extent = hi[0] - lo[0]
    if extent <= 0.0:
        raise MeshError("zero longitudinal (x) extent, cannot normalize length")
    scale = target_length / extent
    return TriMesh(mesh.vertices * scale, mesh.faces, mesh.face_normals)


def remap_axes(mesh: TriMesh, frame: str) -> TriMesh:
    """Remap mesh axes into the canonical frame.

    Args:
        mesh: Input mesh.
        frame: Comma-separated signed source axes for canonical (x, y, z),
            e.g. ``"x,y,z"`` (identity) or ``"-y,x,z"`` meaning canonical x
            is the input's -y axis.
    """
    parts = [p.strip() for p in frame.split(",")]
    if len(parts) != 3:
        raise ValueError(f"axis frame needs 3 entries, got {frame!r}")
    cols = []
    for p in parts:
        sign = -1.0 if p.startswith("-") else 1.0
        name = p.lstrip("+-")
        if name not in ("x", "y", "z"):
            raise ValueError(f"bad axis {p!r} in frame {frame!r}")
        col = np.zeros(3)
        col["xyz".index(name)] = sign
        cols.append(col)
    m = np.stack(cols, axis=1)  # world = m @ canonical basis columns
    v = mesh.vertices @ m
    f = mesh.faces
    if np.linalg.det(m) < 0:
        f = f[:, [0, 2, 1]]
    return make_mesh(v, f)


# ---------------------------------------------------------------------------
# OBJ input/output

def _parse_obj(path: Path) -> TriMesh:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise MeshError("vertex record needs 3 coordinates", path, lineno)
                try:
                    vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError:
                    raise MeshError(f"bad vertex coordinate in {line!r}", path, lineno)
            elif tag == "f":
                idx = []
                for offset, tok in enumerate(tokens[1:], start=1):
                    ref = tok.split("/")[0]
                    try:
                        i = int(ref)
                    except ValueError:
                        raise MeshError(
                            f"bad face index {tok!r} (token {offset})", path, lineno
                        )
                    if i == 0:
                        raise MeshError(
                            f"face index 0 out of range (token {offset}; indices are 1-based)",
                            path, lineno,
                        )
                    if i < 0:
                        i = len(vertices) + i  # relative reference
                    else:
                        i -= 1
                    if not 0 <= i < len(vertices):
                        raise MeshError(
                            f"face index {tok!r} out of range (token {offset}, "
                            f"{len(vertices)} vertices so far)", path, lineno,
                        )
                    idx.append(i)
                if len(idx) < 3:
                    raise MeshError("face needs at least 3 vertices", path, lineno)
                # Fan-triangulate polygons.
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # Other records (vn, vt, usemtl, ...) are ignored.
    if not faces:
        raise MeshError("no faces found", path)
    return make_mesh(np.array(vertices), np.array(faces), drop_degenerate=True)


def save_mesh_obj(mesh: TriMesh, path) -> None:
    """Write an ASCII OBJ with v/f records (1-based indices)."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"# orthorep mesh: {mesh.num_vertices} vertices, {mesh.num_faces} faces\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# STL input

def _weld_vertices(tri_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge duplicated facet vertices within WELD_TOLERANCE.

    Args:
        tri_points: (M, 3, 3) per-facet corner positions.

    Returns:
        (vertices, faces) arrays for the welded mesh.
    """
    flat = tri_points.reshape(-1, 3)
    keys = np.round(flat / WELD_TOLERANCE).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    vertices = flat[first]
    faces = inverse.reshape(-1, 3)
    return vertices, faces


def _parse_stl_binary(data: bytes, path: Path) -> TriMesh:
    if len(data) < 84:
        raise MeshError("binary STL shorter than 84-byte header", path)
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise MeshError(
            f"binary STL truncated: {count} facets declared, "
            f"{len(data)} bytes < {expected}", path,
        )
    records = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    records = records.reshape(count, 50)
    floats = records[:, :48].copy().view("<f4").reshape(count, 4, 3)
    tri_points = floats[:, 1:4, :].astype(np.float64)  # row 0 is the stored normal
    vertices, faces = _weld_vertices(tri_points)
    return make_mesh(vertices, faces, drop_degenerate=True)


def _parse_stl_ascii(path: Path) -> TriMesh:
    tris: list[list[tuple[float, float, float]]] = []
    current: list[tuple[float, float, float]] = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if tokens[0] == "vertex":
                if len(tokens) < 4:
                    raise MeshError("vertex record needs 3 coordinates", path, lineno)
                try:
                    current.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
                except ValueError:
                    raise MeshError(f"bad vertex coordinate in {raw.strip()!r}", path, lineno)
            elif tokens[0] == "endloop":
                if len(current) != 3:
                    raise MeshError(
                        f"facet loop has {len(current)} vertices, expected 3", path, lineno
                    )
                tris.append(current)
                current = []
    if not tris:
        raise MeshError("no facets found in ASCII STL", path)
    vertices, faces = _weld_vertices(np.array(tris, dtype=np.float64))
    return make_mesh(vertices, faces, drop_degenerate=True)


def _stl_is_ascii(path: Path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(512)
    if not head.lstrip().startswith(b"solid"):
        return False
    # Some binary files also start with "solid"; require a facet keyword.
    return b"facet" in head or b"endsolid" in head


def load_mesh(path, fmt: str | None = None) -> TriMesh:
    """Load a triangle mesh from an OBJ or STL file.

    Polygonal OBJ faces are fan-triangulated; STL vertices are welded at
    1e-8 m; degenerate faces are dropped with a logged warning. Face
    normals are computed from winding (right-hand rule).

    Args:
        path: Input file.
        fmt: "obj" or "stl"; inferred from the extension when None.

    Raises:
        MeshError: On missing files, parse failures (with line numbers for
            text formats), out-of-range indices, or degenerate-only geometry.
    """
    path = Path(path)
    if not path.exists():
        raise MeshError("no such file", path)
    if fmt is None:
        fmt = path.suffix.lower().lstrip(".")
    fmt = fmt.lower()
    if fmt == "obj":
        return _parse_obj(path)
    if fmt == "stl":
        if _stl_is_ascii(path):
            return _parse_stl_ascii(path)
        with open(path, "rb") as fh:
            return _parse_stl_binary(fh.read(), path)
    raise MeshError(f"unsupported mesh format {fmt!r}", path)
