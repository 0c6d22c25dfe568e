"""Core 2D primitives for tile detection.

Conventions used throughout the package:
  - units are pixels, angles are degrees, CCW-positive, 0 degrees along +x;
  - polygons are simple, counter-clockwise, with signed area > 0;
  - geometric predicates use an absolute tolerance of ``EPS`` pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-9

# Foreground shape classes in canonical order. Index + 1 is the detection
# class id (0 is background).
SHAPE_CLASSES = (
    "square",
    "rectangle",
    "right_triangle",
    "equilateral_triangle",
    "semicircle",
    "quarter_circle",
)

# Shapes whose outline includes a circular arc. Arcs are discretized into
# ARC_SEGMENTS chords for both ground truth and predictions so vertex
# matching always compares equal-length vertex lists.
CURVED_SHAPES = ("semicircle", "quarter_circle")
ARC_SEGMENTS = 16


class GeometryError(ValueError):
    """Invalid geometric input (degenerate, non-convex, unknown shape...)."""


@dataclass(frozen=True)
class OrientedBox:
    """Tile pose: center, size and rotation of the tile's local frame.

    theta is normalized to [0, 360). w and h are the local-frame extents of
    the shape model, not the axis-aligned bounds of the rotated polygon.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise GeometryError(f"OrientedBox.{name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"OrientedBox requires w, h > 0 (got {self.w}, {self.h})")
        object.__setattr__(self, "theta", normalize_deg(self.theta))


@dataclass(frozen=True)
class OrientationBins:
    """Discretization of [0, 360) into n_bins orientations gap_deg apart."""

    n_bins: int = 48

    def __post_init__(self):
        if self.n_bins < 1:
            raise GeometryError("n_bins must be >= 1")

    @property
    def gap_deg(self) -> float:
        return 360.0 / self.n_bins


DEFAULT_BINS = OrientationBins(48)


@dataclass(frozen=True)
class Polygon:
    """Simple CCW polygon with >= 3 finite vertices.

    Vertices are stored as a read-only (V, 2) float64 array.
    """

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError(f"Polygon needs a (V>=3, 2) vertex array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("Polygon vertices must be finite")
        if _signed_area(v) <= EPS:
            raise GeometryError("Polygon must be counter-clockwise with positive area")
        if not _is_simple(v):
            raise GeometryError("Polygon must be simple (non-self-intersecting)")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def centroid(self) -> tuple[float, float]:
        """Area centroid (shoelace moments)."""
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        a = cross.sum() / 2.0
        cx = ((v[:, 0] + nxt[:, 0]) * cross).sum() / (6.0 * a)
        cy = ((v[:, 1] + nxt[:, 1]) * cross).sum() / (6.0 * a)
        return float(cx), float(cy)

    def aabb(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounds as (x0, y0, x1, y1)."""
        v = self.vertices
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )

    def is_convex(self) -> bool:
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        return bool(np.all(cross >= -EPS))


def normalize_deg(theta: float) -> float:
    """Normalize an angle to [0, 360)."""
    t = math.fmod(theta, 360.0)
    if t < 0:
        t += 360.0
    return 0.0 if t == 360.0 else t


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0


def _is_simple(v: np.ndarray) -> bool:
    """Check no two non-adjacent edges intersect. O(V^2), fine for V <= ~40."""
    n = v.shape[0]
    a = v
    b = np.roll(v, -1, axis=0)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex
            if _segments_cross(a[i], b[i], a[j], b[j]):
                return False
    return True


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    )


# ---------------------------------------------------------------------------
# Shape models
# ---------------------------------------------------------------------------

def _arc_points(start_deg: float, end_deg: float, segments: int) -> np.ndarray:
    """Unit-circle arc samples including both endpoints, shape (segments+1, 2)."""
    ang = np.radians(np.linspace(start_deg, end_deg, segments + 1))
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def unit_shape_vertices(shape: str, arc_segments: int = ARC_SEGMENTS) -> np.ndarray:
    """Canonical unit model of a shape class in the local frame [-0.5, 0.5]^2.

    Vertex order is CCW with a fixed starting vertex per shape:
      - square, rectangle: bottom-left corner, then CCW;
      - right_triangle: the right-angle corner (bottom-left), then the two legs;
      - equilateral_triangle: centered at its centroid (so 3-fold rotations
        about the pose center map the model onto itself when w == h);
        starts at the top apex;
      - semicircle: flat edge down; starts at the right flat-edge corner and
        walks the arc CCW to the left corner (arc_segments chords);
      - quarter_circle: right-angle corner at bottom-left; starts at that
        corner, then walks the arc from (0.5, -0.5) to (-0.5, 0.5).
    """
    if shape in CURVED_SHAPES and arc_segments < 4:
        raise GeometryError("arc_segments must be >= 4 for curved shapes")
    if shape == "square" or shape == "rectangle":
        return np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    if shape == "right_triangle":
        return np.array([[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5]])
    if shape == "equilateral_triangle":
        ang = np.radians([90.0, 210.0, 330.0])
        return 0.5 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if shape == "semicircle":
        # Unit circle arc squeezed into the box: x in [-0.5, 0.5] and
        # y = sin - 0.5 so the flat edge sits on y = -0.5.
        arc = _arc_points(0.0, 180.0, arc_segments)
        return np.stack([arc[:, 0] / 2.0, arc[:, 1] - 0.5], axis=1)
    if shape == "quarter_circle":
        arc = _arc_points(0.0, 90.0, arc_segments) - 0.5
        return np.concatenate([[[-0.5, -0.5]], arc], axis=0)
    raise GeometryError(f"unknown shape class: {shape!r}")


def polygon_of(shape: str, pose: OrientedBox, arc_segments: int = ARC_SEGMENTS) -> Polygon:
    """Model polygon of a shape at a pose.

    Scales the canonical unit model to (w, h), rotates by theta about the
    pose center, and translates to (cx, cy).
    """
    unit = unit_shape_vertices(shape, arc_segments)
    scaled = unit * np.array([pose.w, pose.h])
    t = math.radians(pose.theta)
    c, s = math.cos(t), math.sin(t)
    rot = scaled @ np.array([[c, s], [-s, c]])  # row-vector rotation by +theta
    return Polygon(rot + np.array([pose.cx, pose.cy]))


# ---------------------------------------------------------------------------
# Convex intersection / IoU
# ---------------------------------------------------------------------------

def _require_convex(p: Polygon, name: str) -> None:
    if not p.is_convex():
        raise GeometryError(f"{name} polygon must be convex for clipping-based IoU")


def convex_clip(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Clip a polygon against a convex CCW clipper via successive half-planes.

    Returns the (possibly empty) vertex array of the intersection.
    """
    out = subject
    m = clipper.shape[0]
    for i in range(m):
        if out.shape[0] == 0:
            return out
        a = clipper[i]
        b = clipper[(i + 1) % m]
        # inside = left of directed edge a->b: cross((b - a), (p - a)) >= 0
        ex, ey = b[0] - a[0], b[1] - a[1]
        d = ex * (out[:, 1] - a[1]) - ey * (out[:, 0] - a[0])
        inside = d >= -EPS
        if inside.all():
            continue
        res = []
        n = out.shape[0]
        for j in range(n):
            k = (j + 1) % n
            pj, pk = out[j], out[k]
            if inside[j]:
                res.append(pj)
                if not inside[k]:
                    res.append(_edge_intersection(pj, pk, d[j], d[k]))
            elif inside[k]:
                res.append(_edge_intersection(pj, pk, d[j], d[k]))
        out = np.array(res) if res else np.empty((0, 2))
    return out


def _edge_intersection(p, q, dp, dq) -> np.ndarray:
    t = dp / (dp - dq)
    return p + t * (q - p)


def intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of the intersection of two convex polygons."""
    _require_convex(a, "first")
    _require_convex(b, "second")
    clipped = convex_clip(a.vertices, b.vertices)
    if clipped.shape[0] < 3:
        return 0.0
    return max(0.0, _signed_area(clipped))


def rotated_iou(a: Polygon, b: Polygon) -> float:
    """Intersection over union of two convex polygons, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def polygon_area(p: Polygon) -> float:
    """Shoelace area. Degenerate (near-zero) input is rejected by Polygon."""
    return p.area


# ---------------------------------------------------------------------------
# Orientation helpers
# ---------------------------------------------------------------------------

def canonical_theta(theta: float, symmetry_order: int = 1) -> float:
    """Reduce an orientation modulo the shape's rotational symmetry.

    A shape of symmetry order k looks identical under rotations by 360/k
    degrees, so its orientation label lives in [0, 360/k).
    """
    if symmetry_order < 1:
        raise GeometryError("symmetry order must be >= 1")
    period = 360.0 / symmetry_order
    t = math.fmod(normalize_deg(theta), period)
    return 0.0 if t == period else t


def bin_of(theta: float, bins: OrientationBins = DEFAULT_BINS) -> int:
    """Index of the nearest orientation-bin center i * gap_deg.

    Exact boundary ties (theta = (i + 0.5) * gap) resolve to the lower index.
    """
    g = bins.gap_deg
    i = math.ceil(normalize_deg(theta) / g - 0.5)
    return i % bins.n_bins


def theta_of(bin_index: int, bins: OrientationBins = DEFAULT_BINS) -> float:
    """Center orientation of a bin, the inverse of bin_of on bin centers."""
    if not 0 <= bin_index < bins.n_bins:
        raise GeometryError(f"bin index {bin_index} out of range [0, {bins.n_bins})")
    return bin_index * bins.gap_deg


def circular_diff_deg(a: float, b: float, period: float = 360.0) -> float:
    """Smallest absolute difference between two angles on a period."""
    d = math.fmod(a - b, period)
    if d < 0:
        d += period
    return min(d, period - d)


def orientation_error_deg(theta_a: float, theta_b: float, symmetry_order: int = 1) -> float:
    """Circular orientation error after symmetry canonicalization."""
    period = 360.0 / symmetry_order
    return circular_diff_deg(
        canonical_theta(theta_a, symmetry_order),
        canonical_theta(theta_b, symmetry_order),
        period,
    )


# ---------------------------------------------------------------------------
# Convex polygon offsetting (used by the renderer for tile borders and by the
# reference detector to model the segmented interior of a bordered tile)
# ---------------------------------------------------------------------------

def inset_convex(p: Polygon, distance: float) -> Polygon | None:
    """Shrink a convex polygon by moving every edge inward by `distance`.

    Returns None if the inset is empty (the polygon is thinner than
    2 * distance somewhere).
    """
    if distance < 0:
        raise GeometryError("inset distance must be >= 0")
    if distance == 0:
        return p
    _require_convex(p, "inset")
    v = p.vertices
    out = v
    n = v.shape[0]
    for i in range(n):
        a = v[i]
        b = v[(i + 1) % n]
        e = b - a
        norm = math.hypot(e[0], e[1])
        if norm < EPS:
            continue
        # inward (left) unit normal of a CCW edge
        nx, ny = -e[1] / norm, e[0] / norm
        shifted_a = a + distance * np.array([nx, ny])
        shifted_b = b + distance * np.array([nx, ny])
        out = convex_clip(out, _halfplane_quad(shifted_a, shifted_b))
        if out.shape[0] < 3:
            return None
    if _signed_area(out) <= EPS:
        return None
    return Polygon(out)


def _halfplane_quad(a: np.ndarray, b: np.ndarray, extent: float = 1e6) -> np.ndarray:
    """A large CCW quad whose inside is the left half-plane of edge a->b."""
    e = b - a
    norm = math.hypot(e[0], e[1])
    ex, ey = e / norm
    nx, ny = -ey, ex
    far_a = a - np.array([ex, ey]) * extent
    far_b = b + np.array([ex, ey]) * extent
    off = np.array([nx, ny]) * extent
    return np.array([far_a, far_b, far_b + off, far_a + off])
