"""Orthographic projection and software rasterization into depth/normal buffers.

Conventions (shared with the reconstruction path):
  - camera basis is (right, up, view_dir) with right = up x view_dir;
  - pixel centers sit at (i + 0.5, j + 0.5) with pixel (0, 0) top-left;
  - image x = width/2 + scale_x * dot(p, right),
    image y = height/2 - scale_y * dot(p, up)   (up points up the image);
  - depth is camera-plane distance: dot(p, view_dir) - near_plane_offset.

Rasterization does no backface culling and no anti-aliasing: the nearest
surface wins each pixel regardless of orientation, the winning face normal
is flipped toward the camera, and exactly one sample per pixel keeps the
representation invertible.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh

logger = logging.getLogger(__name__)

# Depth ties within this window are broken by lower face index.
TIE_EPS = 1e-9

_UNIT_TOL = 1e-9


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera: view axis, up vector, pixel scales, image size.

    scale_x/scale_y are in pixels per meter. near_plane_offset shifts the
    depth origin: depth = dot(p, view_dir) - near_plane_offset. Callers
    that need non-negative depths must choose near_plane_offset at or
    below the nearest geometry.
    """

    view_dir: np.ndarray
    up: np.ndarray
    scale_x: float
    scale_y: float
    width: int
    height: int
    near_plane_offset: float = 0.0

    def __post_init__(self):
        vd = np.asarray(self.view_dir, dtype=np.float64).reshape(3)
        up = np.asarray(self.up, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(vd) - 1.0) > _UNIT_TOL:
            raise CameraError(f"view_dir is not unit length: {vd}")
        if abs(np.linalg.norm(up) - 1.0) > _UNIT_TOL:
            raise CameraError(f"up is not unit length: {up}")
        if abs(float(np.dot(vd, up))) > _UNIT_TOL:
            raise CameraError("up is not orthogonal to view_dir")
        if not (self.scale_x > 0.0 and self.scale_y > 0.0):
            raise CameraError("scale factors must be positive")
        if self.width < 1 or self.height < 1:
            raise CameraError("image must be at least 1x1")
        vd.flags.writeable = False
        up.flags.writeable = False
        object.__setattr__(self, "view_dir", vd)
        object.__setattr__(self, "up", up)

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.up, self.view_dir)


@dataclass
class ViewRendering:
    """Per-pixel buffers for one view.

    depth holds camera-plane distance in meters where covered and +inf
    elsewhere; normal holds world-frame unit normals (zero where
    uncovered); coverage marks pixels whose center ray hits any triangle.
    """

    depth: np.ndarray
    normal: np.ndarray
    coverage: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def project(camera: OrthoCamera, points: np.ndarray):
    """Project world points through the orthographic camera.

    Args:
        camera: Valid camera.
        points: (..., 3) world positions.

    Returns:
        (px, py, depth) arrays of shape (...): pixel coordinates (image
        center at (width/2, height/2)) and camera-plane depth.
    """
    p = np.asarray(points, dtype=np.float64)
    right = camera.right
    px = camera.width / 2.0 + camera.scale_x * (p @ right)
    py = camera.height / 2.0 - camera.scale_y * (p @ camera.up)
    depth = (p @ camera.view_dir) - camera.near_plane_offset
    return px, py, depth


def _scan_triangles(vx: np.ndarray, vy: np.ndarray, vval: np.ndarray,
                    faces: np.ndarray, height: int, width: int,
                    keep_max: bool = False):
    """Z-buffer scan over triangles, lower face index winning ties.

    Interpolates vval (one value per vertex) over pixel centers with
    barycentric weights. Faces are processed in ascending index order and
    a candidate must beat the stored value by more than TIE_EPS, which
    makes the output deterministic and independent of any outer
    parallelism across views.

    Returns:
        (value buffer, face index buffer); face index is -1 where empty.
    """
    buf = np.full((height, width), -np.inf if keep_max else np.inf)
    fidx = np.full((height, width), -1, dtype=np.int64)
    for k in range(len(faces)):
        i0, i1, i2 = faces[k]
        ax, ay = vx[i0], vy[i0]
        bx, by = vx[i1], vy[i1]
        cx, cy = vx[i2], vy[i2]
        den = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if den == 0.0:
            continue  # edge-on: zero-area footprint
        xmin = min(ax, bx, cx)
        xmax = max(ax, bx, cx)
        ymin = min(ay, by, cy)
        ymax = max(ay, by, cy)
        x0 = max(0, int(np.ceil(xmin - 0.5)))
        x1 = min(width - 1, int(np.floor(xmax - 0.5)))
        y0 = max(0, int(np.ceil(ymin - 0.5)))
        y1 = min(height - 1, int(np.floor(ymax - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        pxs = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
        pys = np.arange(y0, y1 + 1, dtype=np.float64) + 0.5
        px = pxs[None, :]
        py = pys[:, None]
        e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        mask = ((e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)) | \
               ((e0 <= 0.0) & (e1 <= 0.0) & (e2 <= 0.0))
        if not mask.any():
            continue
        # Barycentric weights; e1 is opposite vertex 0, e2 opposite vertex 1.
        w0 = e1 / den
        w1 = e2 / den
        w2 = e0 / den
        val = w0 * vval[i0] + w1 * vval[i1] + w2 * vval[i2]
        local_buf = buf[y0:y1 + 1, x0:x1 + 1]
        local_idx = fidx[y0:y1 + 1, x0:x1 + 1]
        if keep_max:
            upd = mask & (val > local_buf + TIE_EPS)
        else:
            upd = mask & (val < local_buf - TIE_EPS)
        local_buf[upd] = val[upd]
        local_idx[upd] = k
    return buf, fidx


def _camera_facing_normals(face_normals: np.ndarray, toward: np.ndarray) -> np.ndarray:
    """Flip normals so dot(normal, toward) <= 0 per face."""
    flip = (face_normals @ toward) > 0.0
    out = face_normals.copy()
    out[flip] = -out[flip]
    return out


def rasterize(mesh: TriMesh, camera: OrthoCamera) -> ViewRendering:
    """Render per-pixel nearest-surface depth, normal, and coverage buffers.

    Pure and deterministic: identical inputs give bit-identical buffers.
    An empty or fully off-screen mesh yields all-false coverage (logged,
    not an error).
    """
    h, w = camera.height, camera.width
    if mesh.num_faces == 0:
        return ViewRendering(
            depth=np.full((h, w), np.inf),
            normal=np.zeros((h, w, 3)),
            coverage=np.zeros((h, w), dtype=bool),
        )
    px, py, vdepth = project(camera, mesh.vertices)
    buf, fidx = _scan_triangles(px, py, vdepth, mesh.faces, h, w)
    coverage = fidx >= 0
    if not coverage.any():
        logger.info("mesh projects entirely outside the %dx%d image", w, h)
    normals = _camera_facing_normals(mesh.face_normals, camera.view_dir)
    nbuf = np.zeros((h, w, 3))
    nbuf[coverage] = normals[fidx[coverage]]
    return ViewRendering(depth=buf, normal=nbuf, coverage=coverage)


def rasterize_perspective(mesh: TriMesh, view_dir, up, width: int, height: int,
                          distance_factor: float = 2.5,
                          fill: float = 0.95) -> ViewRendering:
    """Pinhole-projection rendering, ablation baseline only.

    The camera sits at ``distance_factor`` times the bounding radius along
    -view_dir from the origin. Focal scale and principal point are fitted
    so the projected vertex bounding box fills ``fill`` of the image.
    Depth is perspective-correct (screen-linear 1/z) and measured from the
    nearest vertex plane, mirroring the orthographic convention.
    """
    view_dir = np.asarray(view_dir, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, view_dir)
    if mesh.num_faces == 0:
        return ViewRendering(
            depth=np.full((height, width), np.inf),
            normal=np.zeros((height, width, 3)),
            coverage=np.zeros((height, width), dtype=bool),
        )
    radius = float(np.linalg.norm(mesh.vertices, axis=1).max())
    position = -distance_factor * max(radius, 1e-6) * view_dir
    rel = mesh.vertices - position
    z = rel @ view_dir
    if np.any(z <= 0.0):
        raise CameraError("perspective camera has geometry behind it")
    u = (rel @ right) / z
    v = (rel @ up) / z
    span_u = max(u.max() - u.min(), 1e-12)
    span_v = max(v.max() - v.min(), 1e-12)
    s = fill * min(width / span_u, height / span_v)
    mid_u = 0.5 * (u.max() + u.min())
    mid_v = 0.5 * (v.max() + v.min())
    px = width / 2.0 + s * (u - mid_u)
    py = height / 2.0 - s * (v - mid_v)
    inv_z = 1.0 / z
    buf, fidx = _scan_triangles(px, py, inv_z, mesh.faces, height, width,
                                keep_max=True)
    coverage = fidx >= 0
    near = float(z.min())
    depth = np.full((height, width), np.inf)
    depth[coverage] = 1.0 / buf[coverage] - near
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    flip = np.einsum("ij,ij->i", mesh.face_normals, centroids - position) > 0.0
    normals = mesh.face_normals.copy()
    normals[flip] = -normals[flip]
    nbuf = np.zeros((height, width, 3))
    nbuf[coverage] = normals[fidx[coverage]]
    return ViewRendering(depth=depth, normal=nbuf, coverage=coverage)


# ---------------------------------------------------------------------------
# Raw buffer debug dump: 16-byte header (magic, width, height, channels),
# then row-major little-endian float32 samples.

RAW_MAGIC = b"ORFB"


def dump_raw_buffer(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected HxW or HxWxC buffer, got shape {array.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_raw_buffer(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"bad raw buffer magic {magic!r}")
        w, h, c = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != w * h * c:
        raise ValueError("raw buffer size does not match header")
    arr = data.reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr
