"""Silhouette to pen trajectory, and scoring of the traced result.

Pixel frame: x is the column, y grows upward from the bottom row, and pixel
(x, y) covers the unit square [x, x+1] x [y, y+1]. Contours run along pixel
edges, so a single pixel yields its four corners. Rasters are stored
row-major from the top row, as in PBM files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import IFVFError
from .geometry import Pose, quat_to_matrix

SILHOUETTE_DIR = Path(__file__).resolve().parent / "data" / "silhouettes"
DEFAULT_MARGIN = 0.02  # m
DEFAULT_TOLERANCE = 0.5  # px


class ArtError(IFVFError):
    pass


class EmptyRaster(ArtError):
    pass


class DegenerateSurface(ArtError):
    pass


class DimensionMismatch(ArtError):
    pass


@dataclass
class SilhouetteRaster:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, top row first

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.width < 1 or self.height < 1:
            raise EmptyRaster("raster has no pixels")
        if self.bits.shape != (self.height, self.width):
            raise DimensionMismatch(f"bits shape {self.bits.shape} != ({self.height}, {self.width})")

    @classmethod
    def from_array(cls, bits) -> "SilhouetteRaster":
        b = np.asarray(bits, dtype=bool)
        return cls(b.shape[1], b.shape[0], b)

    @classmethod
    def from_yup(cls, grid) -> "SilhouetteRaster":
        """From an array indexed [y, x] with y up."""
        return cls.from_array(np.asarray(grid, dtype=bool)[::-1])

    @property
    def yup(self) -> np.ndarray:
        """View indexed [y, x] with y up."""
        return self.bits[::-1]

    @property
    def dims(self) -> tuple:
        return self.width, self.height

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass
class ContourPath:
    points: np.ndarray  # (n, 2)
    closed: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def signed_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass
class DrawingSurface:
    """Centre pose of a planar patch; its x and y axes span the drawing area."""

    origin: Pose
    extent: tuple
    normal: np.ndarray

    def __post_init__(self):
        self.extent = (float(self.extent[0]), float(self.extent[1]))
        if min(self.extent) <= 0:
            raise DegenerateSurface(f"extent must be positive, got {self.extent}")
        n = np.asarray(self.normal, dtype=float)
        if abs(float(np.linalg.norm(n)) - 1.0) > 1e-9:
            raise ArtError("surface normal must be unit length")
        self.normal = n

    @property
    def axes(self):
        r = quat_to_matrix(self.origin.orientation)
        return r[:, 0], r[:, 1]

    @classmethod
    def from_dict(cls, d: dict) -> "DrawingSurface":
        o = d["origin"]
        origin = Pose.from_dict(o) if isinstance(o, dict) else Pose(np.asarray(o, dtype=float))
        normal = d.get("normal")
        if normal is None:
            normal = quat_to_matrix(origin.orientation)[:, 2]
        return cls(origin, tuple(d["extent"]), np.asarray(normal, dtype=float))

    def to_dict(self) -> dict:
        return {"origin": self.origin.to_dict(), "extent": list(self.extent), "normal": self.normal.tolist()}


# ------------------------------------------------------------------ PBM files
def _pbm_tokens(data: bytes):
    """Header tokens of a PBM file and the offset just past the last one."""
    tokens, i = [], 0
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ArtError("truncated PBM header")
        tokens.append(data[i:j].decode("ascii"))
        i = j
    return tokens, i


def parse_pbm(data: bytes) -> SilhouetteRaster:
    tokens, i = _pbm_tokens(data)
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    if magic == "P1":
        lines = []
        for ln in data[i:].splitlines():
            lines.append(ln.split(b"#")[0])
        body = bytes(c for c in b"".join(lines) if c in b"01")
        if len(body) < w * h:
            raise ArtError(f"PBM body has {len(body)} pixels, expected {w * h}")
        bits = np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w) == ord("1")
    elif magic == "P4":
        row = (w + 7) // 8
        raw = np.frombuffer(data[i + 1:i + 1 + row * h], dtype=np.uint8)
        if raw.size < row * h:
            raise ArtError("truncated P4 body")
        bits = np.unpackbits(raw.reshape(h, row), axis=1)[:, :w].astype(bool)
    else:
        raise ArtError(f"not a PBM file (magic {magic!r})")
    return SilhouetteRaster(w, h, bits)


def read_pbm(path) -> SilhouetteRaster:
    return parse_pbm(Path(path).read_bytes())


def format_pbm(raster: SilhouetteRaster, comment: str | None = None) -> str:
    lines = ["P1"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"{raster.width} {raster.height}")
    lines += ["".join("1" if b else "0" for b in row) for row in raster.bits]
    return "\n".join(lines) + "\n"


def write_pbm(path, raster: SilhouetteRaster, comment: str | None = None) -> None:
    Path(path).write_text(format_pbm(raster, comment))


def shipped_silhouettes() -> list:
    return sorted(p.stem for p in SILHOUETTE_DIR.glob("*.pbm"))


def load_silhouette(name_or_path) -> SilhouetteRaster:
    p = Path(name_or_path)
    if not p.exists():
        p = SILHOUETTE_DIR / f"{name_or_path}.pbm"
    if not p.exists():
        raise ArtError(f"no silhouette {name_or_path!r}")
    return read_pbm(p)


# ------------------------------------------------------------------ contours
def largest_component(raster: SilhouetteRaster) -> np.ndarray:
    """Mask [y, x] (y up) of the largest 8-connected foreground component."""
    grid = raster.yup
    if not grid.any():
        raise EmptyRaster("raster has no foreground pixels")
    labels, n = ndimage.label(grid, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())[1:]
    # ties go to the component found first in scan order
    return labels == (int(np.argmax(sizes)) + 1)


def trace_cracks(mask: np.ndarray) -> np.ndarray:
    """Unit-step vertex sequence around the outer boundary, foreground on the left.

    Starts at the bottom-left corner of the lowest, leftmost pixel and walks
    counterclockwise. Diagonally touching pixels are kept together
    (8-connected foreground), so the walk turns right whenever the pixel
    ahead-right is foreground.
    """
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptyRaster("empty mask")
    order = np.lexsort((xs, ys))
    x0, y0 = int(xs[order[0]]), int(ys[order[0]])
    h, w = mask.shape

    def fg(px: int, py: int) -> bool:
        return 0 <= px < w and 0 <= py < h and bool(mask[py, px])

    def pixel(vx, vy, ax, ay):
        # pixel whose centre is vertex + 0.5 * a, for a in {-1, 1}^2
        return fg(vx + (ax - 1) // 2, vy + (ay - 1) // 2)

    vx, vy, dx, dy = x0, y0, 1, 0
    start = (vx, vy, dx, dy)
    pts = [(vx, vy)]
    for _ in range(4 * (mask.size + w + h) + 8):
        vx, vy = vx + dx, vy + dy
        nx, ny = -dy, dx  # left normal
        ra = pixel(vx, vy, dx - nx, dy - ny)
        la = pixel(vx, vy, dx + nx, dy + ny)
        if ra:
            dx, dy = -nx, -ny
        elif not la:
            dx, dy = nx, ny
        if (vx, vy, dx, dy) == start:
            pts.append((vx, vy))
            return np.array(pts, dtype=float)
        pts.append((vx, vy))
    raise ArtError("contour walk did not close")


def _drop_collinear(pts: np.ndarray, closed: bool) -> np.ndarray:
    """Remove consecutive duplicates and interior points of straight runs."""
    keep = [pts[0]]
    for p in pts[1:]:
        if np.any(p != keep[-1]):
            keep.append(p)
    pts = np.array(keep)
    if closed and len(pts) > 1 and np.all(pts[0] == pts[-1]):
        ring = pts[:-1]
        n = len(ring)
        if n < 3:
            return pts
        out = []
        for i in range(n):
            a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1])
            if cross != 0 or dot < 0:
                out.append(b)
        out = np.array(out) if out else ring[:1]
        return np.vstack([out, out[:1]])
    if len(pts) < 3:
        return pts
    out = [pts[0]]
    for i in range(1, len(pts) - 1):
        a, b, c = out[-1], pts[i], pts[i + 1]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1])
        if cross != 0 or dot < 0:
            out.append(b)
    out.append(pts[-1])
    return np.array(out)


def extract_contour(raster: SilhouetteRaster) -> ContourPath:
    """Closed counterclockwise outline of the largest component, on pixel corners."""
    cracks = trace_cracks(largest_component(raster))
    return ContourPath(_drop_collinear(cracks, True), closed=True)


def outline_pixels(raster: SilhouetteRaster) -> SilhouetteRaster:
    """Foreground pixels of the largest component with a 4-neighbour outside it."""
    mask = largest_component(raster)
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return SilhouetteRaster.from_yup(mask & ~inner)


# ------------------------------------------------------------------ simplification
def point_segment_distance(p, a, b) -> np.ndarray:
    """Distance of each row of `p` to the segment ab."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def _dp(pts: np.ndarray, tol: float) -> np.ndarray:
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = point_segment_distance(pts[i + 1:j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > tol:
            m = i + 1 + k
            keep[m] = True
            stack += [(i, m), (m, j)]
    return pts[keep]


def simplify_path(path: ContourPath, tolerance: float) -> ContourPath:
    """Douglas-Peucker reduction; closed paths are split at the vertex farthest from the start."""
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    pts = _drop_collinear(path.points, path.closed) if len(path) > 1 else path.points.copy()
    if len(pts) < 3:
        return ContourPath(pts, path.closed)
    if path.closed and np.all(pts[0] == pts[-1]):
        far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
        if far == 0:
            return ContourPath(pts, True)
        out = np.vstack([_dp(pts[:far + 1], tolerance)[:-1], _dp(pts[far:], tolerance)])
        return ContourPath(out, True)
    return ContourPath(_dp(pts, tolerance), path.closed)


# ------------------------------------------------------------------ surface mapping
@dataclass(frozen=True)
class SurfaceMap:
    """Uniform scale plus centring from pixel coordinates onto a surface."""

    surface: DrawingSurface
    scale: float  # m per pixel
    center_px: tuple

    def forward(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        u, v = self.surface.axes
        rel = (pts - np.asarray(self.center_px)) * self.scale
        return self.surface.origin.position + rel[:, :1] * u + rel[:, 1:2] * v

    def inverse(self, pts) -> np.ndarray:
        """Project base-frame points (2 or 3 columns) back to pixel coordinates."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        u, v = self.surface.axes
        o = self.surface.origin.position
        if pts.shape[1] == 2:
            # ground-plane points: project along the surface normal onto its plane
            n = self.surface.normal
            z = o[2] - ((pts[:, 0] - o[0]) * n[0] + (pts[:, 1] - o[1]) * n[1]) / n[2]
            pts = np.column_stack([pts, z])
        rel = pts - o
        return np.column_stack([rel @ u, rel @ v]) / self.scale + np.asarray(self.center_px)


def fit_to_surface(path: ContourPath, dims, surface: DrawingSurface, margin: float = DEFAULT_MARGIN) -> SurfaceMap:
    w, h = surface.extent
    if 2 * margin >= w or 2 * margin >= h:
        raise DegenerateSurface(f"margin {margin} m leaves no room on a {w} x {h} m surface")
    pts = path.points
    if dims is not None:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        if lo.min() < 0 or hi[0] > dims[0] or hi[1] > dims[1]:
            raise DimensionMismatch(f"path exceeds raster dims {tuple(dims)}")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = hi - lo
    avail = np.array([w - 2 * margin, h - 2 * margin])
    with np.errstate(divide="ignore"):
        ratios = np.where(size > 0, avail / np.where(size > 0, size, 1.0), np.inf)
    scale = float(ratios.min()) if np.isfinite(ratios.min()) else 1.0
    return SurfaceMap(surface, scale, tuple((lo + hi) / 2.0))


def scale_to_surface(path: ContourPath, dims, surface: DrawingSurface, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Bounding box fitted inside extent minus margins, centred, in base coordinates."""
    return fit_to_surface(path, dims, surface, margin).forward(path.points)


def waypoints_for(raster: SilhouetteRaster, surface: DrawingSurface, margin: float = DEFAULT_MARGIN,
                  tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
    path = simplify_path(extract_contour(raster), tolerance)
    return scale_to_surface(path, raster.dims, surface, margin)


# ------------------------------------------------------------------ scoring
def _bresenham(x0: int, y0: int, x1: int, y1: int):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x1 >= x0 else -1), (1 if y1 >= y0 else -1)
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_path(points, dims) -> SilhouetteRaster:
    """Bresenham lines between consecutive points; point (x, y) lands in cell (round x, round y)."""
    w, h = int(dims[0]), int(dims[1])
    grid = np.zeros((h, w), dtype=bool)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return SilhouetteRaster.from_yup(grid)
    px = np.clip(np.rint(pts[:, 0]), 0, w - 1).astype(int)
    py = np.clip(np.rint(pts[:, 1]), 0, h - 1).astype(int)
    grid[py[0], px[0]] = True
    for i in range(1, len(px)):
        for x, y in _bresenham(px[i - 1], py[i - 1], px[i], py[i]):
            grid[y, x] = True
    return SilhouetteRaster.from_yup(grid)


def outline_dims(raster: SilhouetteRaster) -> tuple:
    """Contours live on pixel corners, one more than the pixels along each axis."""
    return raster.width + 1, raster.height + 1


def reference_outline(raster: SilhouetteRaster) -> SilhouetteRaster:
    """The raw contour rasterised on the corner lattice, the same way a tracing is."""
    return rasterize_path(extract_contour(raster).points, outline_dims(raster))


def score_tracing(raster: SilhouetteRaster, traced_px, dilation: int = 1) -> float:
    """Jaccard index of a traced point list (pixel units) against the silhouette outline."""
    return jaccard_index(reference_outline(raster), rasterize_path(traced_px, outline_dims(raster)), dilation)


def jaccard_index(reference: SilhouetteRaster, traced: SilhouetteRaster, dilation: int = 1) -> float:
    if reference.dims != traced.dims:
        raise DimensionMismatch(f"{reference.dims} vs {traced.dims}")
    if dilation < 0:
        raise ValueError("dilation must be non-negative")
    a, b = reference.bits, traced.bits
    if dilation > 0:
        st = np.ones((3, 3), dtype=bool)
        a = ndimage.binary_dilation(a, structure=st, iterations=dilation)
        b = ndimage.binary_dilation(b, structure=st, iterations=dilation)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def write_points(path, points) -> None:
    """Point-list text export, one point per line."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Path(path).write_text("".join(" ".join(f"{v:.6f}" for v in p) + "\n" for p in pts))


def read_points(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


def polygon_raster(vertices, dims, samples: int = 4) -> SilhouetteRaster:
    """Fill a polygon (pixel units, y up) by supersampled even-odd testing."""
    w, h = dims
    v = np.asarray(vertices, dtype=float)
    offs = (np.arange(samples) + 0.5) / samples
    xs = (np.arange(w)[:, None] + offs[None, :]).ravel()
    ys = (np.arange(h)[:, None] + offs[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros(X.shape, dtype=bool)
    n = len(v)
    for i in range(n):
        (x1, y1), (x2, y2) = v[i], v[(i + 1) % n]
        cond = (y1 > Y) != (y2 > Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (X < xi)
    cover = inside.reshape(h, samples, w, samples).mean(axis=(1, 3))
    return SilhouetteRaster.from_yup(cover >= 0.5)


def unit_circle(n: int) -> np.ndarray:
    a = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return np.column_stack([np.cos(a), np.sin(a)])
