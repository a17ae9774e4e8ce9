"""Normal/depth encodings, six-view integration, and inverse reconstruction.

A shape is rendered from six orthographic views (front, rear, top, bottom,
left, right in the canonical axis frame) and the encoded views are tiled
into one square canvas: 2 rows x 3 columns, row-major in that view order.
Each view is letterboxed by choosing a uniform per-view camera scale that
fits the shape into its tile with a small margin; no image resampling
takes place, so the pipeline is exactly invertible up to quantization.

Codecs:
  - normal rendering: color = (normal + 1) / 2 per channel, so the full
    unit sphere of normals maps losslessly into [0, 1]; background is
    mid-gray (0.5, 0.5, 0.5), which decodes to the zero vector and can
    never collide with a unit normal.
  - depth rendering: gray = (dist - d_min) / (d_max - d_min) replicated
    across R=G=B, with the per-view range stored as metadata; background
    is white (reads as "far"). On quantization the top code is reserved
    for background so coverage stays decodable; the induced error is at
    most one quantization step.

Per-view camera parameters travel with the image as PNG tEXt chunks so a
rendering alone suffices to reconstruct an oriented point cloud.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh
from .pngio import read_png, write_png
from .rasterize import OrthoCamera, ViewRendering, rasterize, rasterize_perspective

logger = logging.getLogger(__name__)

VIEW_ORDER = ("front", "rear", "top", "bottom", "left", "right")

VIEW_DIRS = {
    "front": np.array([-1.0, 0.0, 0.0]),
    "rear": np.array([1.0, 0.0, 0.0]),
    "top": np.array([0.0, 0.0, -1.0]),
    "bottom": np.array([0.0, 0.0, 1.0]),
    "left": np.array([0.0, -1.0, 0.0]),
    "right": np.array([0.0, 1.0, 0.0]),
}

VIEW_UPS = {
    "front": np.array([0.0, 0.0, 1.0]),
    "rear": np.array([0.0, 0.0, 1.0]),
    "left": np.array([0.0, 0.0, 1.0]),
    "right": np.array([0.0, 0.0, 1.0]),
    "top": np.array([1.0, 0.0, 0.0]),
    "bottom": np.array([1.0, 0.0, 0.0]),
}

NORMAL_BACKGROUND = (0.5, 0.5, 0.5)
DEPTH_BACKGROUND = (1.0, 1.0, 1.0)

# Fraction of the tile the content may fill; keeps silhouettes off tile edges.
LETTERBOX_FILL = 0.95

# Degenerate depth ranges (single covered distance) are widened by this.
DEPTH_RANGE_EPS = 1e-6

DEFAULT_RESOLUTION = 384

META_PREFIX = "orthorep"


class RepresentationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Per-view encodings

@dataclass
class EncodedRendering:
    """A single view encoded to colors in [0, 1].

    kind is "normal" or "depth"; depth images satisfy R=G=B at every
    pixel. d_min/d_max give the affine depth range (unused placeholders
    for normal images). coverage is carried through from the rasterized
    view so downstream code never has to re-derive it from colors.
    """

    pixels: np.ndarray
    kind: str
    d_min: float
    d_max: float
    background: tuple
    coverage: np.ndarray

    def __post_init__(self):
        if self.kind not in ("normal", "depth"):
            raise RepresentationError(f"unknown rendering kind {self.kind!r}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise RepresentationError("encoded pixels outside [0, 1]")
        if not self.d_max > self.d_min:
            raise RepresentationError("d_max must exceed d_min")
        if self.kind == "depth":
            if not (np.array_equal(self.pixels[:, :, 0], self.pixels[:, :, 1])
                    and np.array_equal(self.pixels[:, :, 0], self.pixels[:, :, 2])):
                raise RepresentationError("depth rendering must have R=G=B")


def encode_normal(view: ViewRendering) -> EncodedRendering:
    """Map unit normals to colors: color = (normal + 1) / 2 per channel."""
    h, w = view.coverage.shape
    pixels = np.full((h, w, 3), NORMAL_BACKGROUND[0])
    pixels[view.coverage] = (view.normal[view.coverage] + 1.0) / 2.0
    return EncodedRendering(pixels, "normal", 0.0, 1.0, NORMAL_BACKGROUND,
                            view.coverage.copy())


def decode_normal(pixels: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """Invert the normal codec; optionally renormalize to unit length."""
    n = 2.0 * np.asarray(pixels, dtype=np.float64) - 1.0
    if renormalize:
        norms = np.linalg.norm(n, axis=-1, keepdims=True)
        n = n / np.where(norms == 0.0, 1.0, norms)
    return n


def encode_depth(view: ViewRendering, d_range: tuple | None = None) -> EncodedRendering:
    """Map depths to grayscale: gray = (dist - d_min) / (d_max - d_min).

    The range defaults to the view's own covered depths. A constant-depth
    view gets d_max = d_min + 1e-6 so every covered pixel reads 0.0.

    Raises:
        RepresentationError: If the view has no covered pixel and no
            explicit range, or an explicit degenerate range is given for a
            view with more than one distinct depth.
    """
    covered = view.coverage
    if d_range is None:
        if not covered.any():
            raise RepresentationError(
                "cannot infer depth range from an empty view; pass d_range")
        d_min = float(view.depth[covered].min())
        d_max = float(view.depth[covered].max())
    else:
        d_min, d_max = float(d_range[0]), float(d_range[1])
        if d_max <= d_min and covered.any():
            distinct = np.unique(view.depth[covered])
            if len(distinct) > 1:
                raise RepresentationError(
                    f"degenerate depth range ({d_min}, {d_max}) with "
                    f"{len(distinct)} distinct covered depths")
    if d_max <= d_min:
        d_max = d_min + DEPTH_RANGE_EPS
    h, w = covered.shape
    pixels = np.ones((h, w, 3))
    gray = np.clip((view.depth[covered] - d_min) / (d_max - d_min), 0.0, 1.0)
    pixels[covered] = gray[:, None]
    return EncodedRendering(pixels, "depth", d_min, d_max, DEPTH_BACKGROUND,
                            covered.copy())


def decode_depth(gray: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    return d_min + np.asarray(gray, dtype=np.float64) * (d_max - d_min)


# ---------------------------------------------------------------------------
# Integrated six-view image

@dataclass(frozen=True)
class Tile:
    view: str
    x: int
    y: int
    w: int
    h: int


@dataclass
class ViewMeta:
    """Camera parameters needed to invert one view's projection."""
    d_min: float
    d_max: float
    scale: float       # pixels per meter (uniform per view)
    near: float        # near-plane offset along view_dir, meters


@dataclass
class IntegratedImage:
    """Tiled multi-view representation on a single square canvas.

    pixels are float64 in [0, 1]. layout lists the tiles in view order;
    view_meta maps view name to its camera parameters; center is the
    world-space offset subtracted before rendering (the mesh bounding-box
    center); coverage marks foreground pixels; bit_depth is the target
    PNG quantization (8 or 16); projection records how the views were
    produced ("ortho" is invertible, "perspective" is an ablation input).
    """

    pixels: np.ndarray
    kind: str
    layout: tuple
    view_meta: dict
    center: np.ndarray
    coverage: np.ndarray
    bit_depth: int = 8
    projection: str = "ortho"

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    def tile(self, view: str) -> Tile:
        for t in self.layout:
            if t.view == view:
                return t
        raise KeyError(view)

    def tile_pixels(self, view: str) -> np.ndarray:
        t = self.tile(view)
        return self.pixels[t.y:t.y + t.h, t.x:t.x + t.w]

    def tile_coverage(self, view: str) -> np.ndarray:
        t = self.tile(view)
        return self.coverage[t.y:t.y + t.h, t.x:t.x + t.w]


def six_view_layout(resolution: int) -> tuple:
    """2x3 tile grid in canonical view order; exact partition of the canvas."""
    cols = [round(i * resolution / 3) for i in range(4)]
    rows = [round(j * resolution / 2) for j in range(3)]
    tiles = []
    for idx, view in enumerate(VIEW_ORDER):
        r, c = divmod(idx, 3)
        tiles.append(Tile(view, cols[c], rows[r],
                          cols[c + 1] - cols[c], rows[r + 1] - rows[r]))
    return tuple(tiles)


def _fit_scale(extent_u: float, extent_v: float, tile_w: int, tile_h: int,
               fill: float = LETTERBOX_FILL) -> float:
    eu = max(extent_u, 1e-9)
    ev = max(extent_v, 1e-9)
    return fill * min(tile_w / eu, tile_h / ev)


def _render_view_buffers(mesh: TriMesh, resolution: int, projection: str):
    """Rasterize all six views of the bbox-centered mesh.

    Returns (center, layout, {view: (ViewRendering, ViewMeta)}).
    """
    if projection not in ("ortho", "perspective"):
        raise RepresentationError(f"unknown projection {projection!r}")
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    verts = mesh.vertices - center
    centered = TriMesh(verts, mesh.faces, mesh.face_normals)
    layout = six_view_layout(resolution)
    out = {}
    for t in layout:
        vd = VIEW_DIRS[t.view]
        up = VIEW_UPS[t.view]
        right = np.cross(up, vd)
        u = verts @ right
        v = verts @ up
        scale = _fit_scale(u.max() - u.min(), v.max() - v.min(), t.w, t.h)
        near = float((verts @ vd).min())
        if projection == "ortho":
            cam = OrthoCamera(vd, up, scale, scale, t.w, t.h,
                              near_plane_offset=near)
            rendering = rasterize(centered, cam)
        else:
            rendering = rasterize_perspective(centered, vd, up, t.w, t.h)
        if rendering.coverage.any():
            d_min = float(rendering.depth[rendering.coverage].min())
            d_max = float(rendering.depth[rendering.coverage].max())
        else:
            d_min, d_max = 0.0, 1.0
        out[t.view] = (rendering, ViewMeta(d_min, d_max, scale, near))
    return center, layout, out


def _assemble(kind: str, center, layout, buffers, resolution: int,
              bit_depth: int, projection: str) -> IntegratedImage:
    canvas = np.zeros((resolution, resolution, 3))
    coverage = np.zeros((resolution, resolution), dtype=bool)
    meta = {}
    for t in layout:
        rendering, vm = buffers[t.view]
        if kind == "normal":
            enc = encode_normal(rendering)
        else:
            enc = encode_depth(rendering)
            vm = ViewMeta(enc.d_min, enc.d_max, vm.scale, vm.near)
        canvas[t.y:t.y + t.h, t.x:t.x + t.w] = enc.pixels
        coverage[t.y:t.y + t.h, t.x:t.x + t.w] = enc.coverage
        meta[t.view] = vm
    return IntegratedImage(canvas, kind, layout, meta, np.asarray(center),
                           coverage, bit_depth, projection)


def render_six_views(mesh: TriMesh, resolution: int = DEFAULT_RESOLUTION,
                     mode: str = "normal", bit_depth: int = 8,
                     projection: str = "ortho") -> IntegratedImage:
    """Render the tiled six-view representation of a mesh.

    The mesh bounding-box center is moved to the origin before rendering
    (stored on the image and in PNG metadata, so reconstruction restores
    original coordinates).
    """
    if mode not in ("normal", "depth"):
        raise RepresentationError(f"unknown mode {mode!r}")
    center, layout, buffers = _render_view_buffers(mesh, resolution, projection)
    return _assemble(mode, center, layout, buffers, resolution, bit_depth,
                     projection)


def render_six_views_pair(mesh: TriMesh, resolution: int = DEFAULT_RESOLUTION,
                          bit_depth: int = 8, projection: str = "ortho"):
    """Render normal and depth integrated images from one rasterization pass."""
    center, layout, buffers = _render_view_buffers(mesh, resolution, projection)
    normal = _assemble("normal", center, layout, buffers, resolution,
                       bit_depth, projection)
    depth = _assemble("depth", center, layout, buffers, resolution,
                      bit_depth, projection)
    return normal, depth


def render_single_view(mesh: TriMesh, view: str,
                       resolution: int = DEFAULT_RESOLUTION,
                       mode: str = "normal", bit_depth: int = 8,
                       projection: str = "ortho") -> IntegratedImage:
    """Single-view variant on a full-size canvas (view-ablation input)."""
    if view not in VIEW_ORDER:
        raise RepresentationError(f"unknown view {view!r}")
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    verts = mesh.vertices - center
    centered = TriMesh(verts, mesh.faces, mesh.face_normals)
    vd, up = VIEW_DIRS[view], VIEW_UPS[view]
    right = np.cross(up, vd)
    u = verts @ right
    v = verts @ up
    scale = _fit_scale(u.max() - u.min(), v.max() - v.min(), resolution, resolution)
    near = float((verts @ vd).min())
    if projection == "ortho":
        cam = OrthoCamera(vd, up, scale, scale, resolution, resolution,
                          near_plane_offset=near)
        rendering = rasterize(centered, cam)
    else:
        rendering = rasterize_perspective(centered, vd, up, resolution, resolution)
    enc = encode_normal(rendering) if mode == "normal" else encode_depth(rendering)
    layout = (Tile(view, 0, 0, resolution, resolution),)
    meta = {view: ViewMeta(enc.d_min, enc.d_max, scale, near)}
    return IntegratedImage(enc.pixels, mode, layout, meta, center,
                           enc.coverage, bit_depth, projection)


def mirror_for_bilateral_flip(image: IntegratedImage) -> IntegratedImage:
    """Predicted integrated image of the bilaterally flipped mesh.

    Deterministic transform: swap the left/right tiles, mirror every tile
    horizontally, and (for normal images) invert the lateral color
    channel G -> 1 - G. Exact up to floating-point rounding in the render
    path, so renders of flipped meshes match within one quantization step.
    """
    swap = {"left": "right", "right": "left"}
    pixels = np.empty_like(image.pixels)
    coverage = np.empty_like(image.coverage)
    meta = {}
    for t in image.layout:
        src_view = swap.get(t.view, t.view)
        src_tile = image.tile(src_view)
        if (src_tile.w, src_tile.h) != (t.w, t.h):
            raise RepresentationError(
                "left/right tiles differ in size; flip transform needs a "
                "resolution divisible by 6")
        src = image.pixels[src_tile.y:src_tile.y + src_tile.h,
                           src_tile.x:src_tile.x + src_tile.w]
        cov = image.coverage[src_tile.y:src_tile.y + src_tile.h,
                             src_tile.x:src_tile.x + src_tile.w]
        pixels[t.y:t.y + t.h, t.x:t.x + t.w] = src[:, ::-1]
        coverage[t.y:t.y + t.h, t.x:t.x + t.w] = cov[:, ::-1]
        meta[t.view] = ViewMeta(image.view_meta[src_view].d_min,
                                image.view_meta[src_view].d_max,
                                image.view_meta[src_view].scale,
                                image.view_meta[src_view].near)
    if image.kind == "normal":
        pixels[:, :, 1] = 1.0 - pixels[:, :, 1]
    center = image.center * np.array([1.0, -1.0, 1.0])
    return IntegratedImage(pixels, image.kind, image.layout, meta, center,
                           coverage, image.bit_depth, image.projection)


# ---------------------------------------------------------------------------
# Quantization and PNG round trip

def _background_codes(kind: str, max_code: int) -> tuple:
    if kind == "depth":
        return (max_code,) * 3
    half = int(np.round(0.5 * max_code))
    return (half,) * 3


def quantize(image: IntegratedImage) -> np.ndarray:
    """Quantize to uint8/uint16 samples, reserving the top depth code.

    For depth images the brightest code is kept for background only;
    covered pixels at gray 1.0 land one code below, an error within one
    quantization step. Normal backgrounds are the exact mid code, which
    no unit normal can quantize onto.
    """
    max_code = (1 << image.bit_depth) - 1
    dtype = np.uint8 if image.bit_depth == 8 else np.uint16
    q = np.round(image.pixels * max_code)
    if image.kind == "depth":
        covered = image.coverage
        q[covered] = np.minimum(q[covered], max_code - 1)
    return q.astype(dtype)


def _dequantize(arr: np.ndarray, kind: str) -> tuple:
    max_code = float(np.iinfo(arr.dtype).max)
    pixels = arr.astype(np.float64) / max_code
    bg = _background_codes(kind, int(max_code))
    coverage = ~np.all(arr == np.array(bg, dtype=arr.dtype), axis=-1)
    return pixels, coverage


def integrated_metadata(image: IntegratedImage) -> dict:
    texts = {
        f"{META_PREFIX}:layout": json.dumps({
            "canvas": image.resolution,
            "kind": image.kind,
            "projection": image.projection,
            "tiles": [{"view": t.view, "x": t.x, "y": t.y, "w": t.w, "h": t.h}
                      for t in image.layout],
        }),
        f"{META_PREFIX}:center": " ".join(repr(float(c)) for c in image.center),
    }
    for view, vm in image.view_meta.items():
        texts[f"{META_PREFIX}:dmin:{view}"] = repr(float(vm.d_min))
        texts[f"{META_PREFIX}:dmax:{view}"] = repr(float(vm.d_max))
        texts[f"{META_PREFIX}:scale:{view}"] = repr(float(vm.scale))
        texts[f"{META_PREFIX}:near:{view}"] = repr(float(vm.near))
    return texts


def write_integrated_png(image: IntegratedImage, path) -> None:
    write_png(path, quantize(image), integrated_metadata(image))


def read_integrated_png(path) -> IntegratedImage:
    """Load an integrated rendering and its embedded camera metadata."""
    arr, texts = read_png(path)
    key = f"{META_PREFIX}:layout"
    if key not in texts:
        raise RepresentationError(f"{path}: missing {key} metadata")
    info = json.loads(texts[key])
    kind = info["kind"]
    layout = tuple(Tile(t["view"], t["x"], t["y"], t["w"], t["h"])
                   for t in info["tiles"])
    meta = {}
    for t in layout:
        try:
            meta[t.view] = ViewMeta(
                d_min=float(texts[f"{META_PREFIX}:dmin:{t.view}"]),
                d_max=float(texts[f"{META_PREFIX}:dmax:{t.view}"]),
                scale=float(texts[f"{META_PREFIX}:scale:{t.view}"]),
                near=float(texts[f"{META_PREFIX}:near:{t.view}"]),
            )
        except KeyError as exc:
            raise RepresentationError(f"{path}: missing metadata {exc}") from exc
    center = np.array([float(x) for x in texts[f"{META_PREFIX}:center"].split()])
    pixels, coverage = _dequantize(arr, kind)
    bit_depth = 8 if arr.dtype == np.uint8 else 16
    return IntegratedImage(pixels, kind, layout, meta, center, coverage,
                           bit_depth, info.get("projection", "ortho"))


# ---------------------------------------------------------------------------
# Inverse: oriented point cloud

@dataclass
class OrientedPointCloud:
    """Back-projected surface samples: positions, unit normals, source views."""

    positions: np.ndarray
    normals: np.ndarray
    views: np.ndarray

    def __post_init__(self):
        if len(self.positions):
            if not np.all(np.isfinite(self.positions)):
                raise RepresentationError("non-finite reconstructed position")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-3):
                raise RepresentationError("reconstructed normal not unit length")

    def __len__(self) -> int:
        return len(self.positions)


def reconstruct(normal_img: IntegratedImage,
                depth_img: IntegratedImage) -> OrientedPointCloud:
    """Invert the six-view pipeline back to an oriented point cloud.

    For every covered pixel: undo the letterbox/pixel mapping, decode the
    depth along the view ray, attach the decoded (renormalized) normal,
    and restore the stored world-space center. Only pixels covered in
    both images produce points. Occluded geometry invisible from all six
    views is absent by construction; soundness is one-sided.
    """
    if normal_img.kind != "normal" or depth_img.kind != "depth":
        raise RepresentationError("expected (normal, depth) image pair")
    if normal_img.projection != "ortho" or depth_img.projection != "ortho":
        raise RepresentationError("reconstruction requires orthographic images")
    if normal_img.layout != depth_img.layout:
        raise RepresentationError("images have mismatched tile layouts")
    if not np.allclose(normal_img.center, depth_img.center):
        raise RepresentationError("images have mismatched centers")
    positions, normals, views = [], [], []
    for t in normal_img.layout:
        if t.view not in depth_img.view_meta:
            raise RepresentationError(f"missing encoding metadata for {t.view}")
        vm = depth_img.view_meta[t.view]
        cov = normal_img.tile_coverage(t.view) & depth_img.tile_coverage(t.view)
        if not cov.any():
            continue
        ys, xs = np.nonzero(cov)
        ncolors = normal_img.tile_pixels(t.view)[ys, xs]
        gray = depth_img.tile_pixels(t.view)[ys, xs, 0]
        n = decode_normal(ncolors, renormalize=False)
        lengths = np.linalg.norm(n, axis=1)
        ok = lengths > 1e-6
        if not ok.all():
            logger.debug("%s: dropped %d pixels with degenerate normals",
                         t.view, int((~ok).sum()))
            ys, xs, n, gray, lengths = ys[ok], xs[ok], n[ok], gray[ok], lengths[ok]
        n = n / lengths[:, None]
        depth = decode_depth(gray, vm.d_min, vm.d_max)
        vd = VIEW_DIRS[t.view]
        up = VIEW_UPS[t.view]
        right = np.cross(up, vd)
        u = (xs + 0.5 - t.w / 2.0) / vm.scale
        b = (t.h / 2.0 - (ys + 0.5)) / vm.scale
        along = depth + vm.near
        pos = (u[:, None] * right + b[:, None] * up + along[:, None] * vd
               + depth_img.center)
        positions.append(pos)
        normals.append(n)
        views.append(np.full(len(pos), t.view, dtype="<U6"))
    if not positions:
        return OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)),
                                  np.zeros(0, dtype="<U6"))
    return OrientedPointCloud(np.concatenate(positions),
                              np.concatenate(normals),
                              np.concatenate(views))


def save_ply(cloud: OrientedPointCloud, path) -> None:
    """Write the cloud as ASCII PLY with per-vertex normals."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            fh.write(f"property float {prop}\n")
        fh.write("end_header\n")
        for p, n in zip(cloud.positions, cloud.normals):
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                     f"{n[0]:.6g} {n[1]:.6g} {n[2]:.6g}\n")
