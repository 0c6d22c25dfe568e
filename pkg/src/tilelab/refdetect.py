"""Classical reference detector: color segmentation plus pose fitting.

Stands in for a trained network so the decode/eval/compose loop can run end
to end on rendered scenes. Pixels are assigned to the nearest catalog color
(fills compete with tile-border shades and the background), connected
components become candidate regions, and each region's pose is found by
scanning the orientation bins for the best mask/model overlap, then refining
angle and scale continuously.

Because rendered tiles carry a 2 px darker border, a segmented region is the
tile polygon *inset* by the border (plus antialiasing), so fitting scores an
inset model polygon and reports the full-size tile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .catalog import BACKGROUND_COLOR, Catalog, default_catalog
from .encoding import Detection, nms
from .geometry import (
    DEFAULT_BINS,
    OrientationBins,
    OrientedBox,
    bin_of,
    canonical_theta,
    polygon_of,
)
from .render import BORDER_PX, border_color

# Distance-from-background above which a pixel is worth classifying.
_FG_THRESHOLD = 55.0
# Extra inset beyond the drawn border accounting for antialiased edge pixels.
_EDGE_SLACK = 0.5


class DetectError(ValueError):
    """Invalid detector configuration."""


@dataclass(frozen=True)
class SegmentParams:
    color_tolerance: float = 40.0
    min_region_area: float = 150.0
    erosion_radius: int = 0
    overlap_accept: float = 0.6

    def __post_init__(self):
        if self.color_tolerance <= 0:
            raise DetectError("color tolerance must be positive")
        if not 0.0 < self.overlap_accept <= 1.0:
            raise DetectError("overlap_accept must be in (0, 1]")


@dataclass
class Region:
    """A connected blob of pixels matching one tile spec's fill color."""

    spec_id: str
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)
    pixel_count: int
    centroid: tuple[float, float]  # pixel-center coordinates
    mask: np.ndarray  # bool, local to bbox


def _check_tolerance(catalog: Catalog, params: SegmentParams) -> None:
    colors = [np.asarray(s.color, float) for s in catalog]
    min_dist = math.inf
    for i in range(len(colors)):
        for j in range(i + 1, len(colors)):
            min_dist = min(min_dist, float(np.linalg.norm(colors[i] - colors[j])))
    if params.color_tolerance >= min_dist / 2.0:
        raise DetectError(
            f"color tolerance {params.color_tolerance} is not below half the minimum "
            f"inter-spec color distance {min_dist:.1f}"
        )


def _estimate_background_gain(image: np.ndarray) -> np.ndarray:
    """Per-channel gain from the image frame, assumed mostly playmat."""
    frame = np.concatenate(
        [
            image[:3].reshape(-1, 3),
            image[-3:].reshape(-1, 3),
            image[3:-3, :3].reshape(-1, 3),
            image[3:-3, -3:].reshape(-1, 3),
        ]
    )
    med = np.median(frame.astype(np.float32), axis=0)
    return np.clip(med / np.asarray(BACKGROUND_COLOR, np.float32), 0.3, 2.0)


def _forward_palette(colors: np.ndarray, gain: np.ndarray) -> np.ndarray:
    """Expected rendered appearance of reference colors under the gain.

    Working in rendered space (rather than un-gaining the image) keeps
    channel saturation honest: a bright color clipped at 255 in the image is
    clipped in the reference too, so overexposure does not break matching.
    """
    return np.clip(colors * gain[None, :], 0.0, 255.0)


def segment(image: np.ndarray, catalog: Catalog | None = None,
            params: SegmentParams = SegmentParams()) -> list[Region]:
    """Nearest-color segmentation into per-spec connected regions.

    Colors are compared after normalizing by the estimated background gain,
    which undoes global brightness changes. Fill colors compete with each
    spec's border shade and with the background so border and mat pixels
    never leak into a region.
    """
    cat = catalog or default_catalog()
    _check_tolerance(cat, params)
    img = image.astype(np.float32)
    gain = _estimate_background_gain(image)
    level = float(np.clip(gain.mean(), 0.7, 1.3))

    h, w, _ = img.shape
    flat = img.reshape(-1, 3)
    bg_fwd = _forward_palette(np.asarray([BACKGROUND_COLOR], np.float32), gain)[0]
    diff = flat - bg_fwd
    d2_bg = np.einsum("ij,ij->i", diff, diff)
    fg_idx = np.flatnonzero(d2_bg > (_FG_THRESHOLD * level) ** 2)

    specs = list(cat)
    # candidate colors: fills first (indices 0..S-1), then border shades
    palette = _forward_palette(
        np.array(
            [s.color for s in specs] + [border_color(s.color) for s in specs],
            dtype=np.float32,
        ),
        gain,
    )
    tolerance = params.color_tolerance * level
    assign = np.zeros(h * w, dtype=np.int32)  # 0 = none, 1..S = spec fill
    if fg_idx.size:
        fg = flat[fg_idx]
        # squared distances via |p|^2 - 2 p.c + |c|^2
        d2 = (
            np.einsum("ij,ij->i", fg, fg)[:, None]
            - 2.0 * (fg @ palette.T)
            + np.einsum("ij,ij->i", palette, palette)[None, :]
        )
        best = d2.argmin(axis=1)
        best_d2 = d2[np.arange(best.size), best]
        is_fill = (best < len(specs)) & (best_d2 <= tolerance**2)
        assign[fg_idx[is_fill]] = best[is_fill] + 1
    assign = assign.reshape(h, w)

    eight = np.ones((3, 3), dtype=bool)
    regions: list[Region] = []
    all_ys, all_xs = np.nonzero(assign)
    all_vals = assign[all_ys, all_xs]
    for si, spec in enumerate(specs):
        sel = all_vals == si + 1
        if not sel.any():
            continue
        ys, xs = all_ys[sel], all_xs[sel]
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        spec_mask = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        spec_mask[ys - y0, xs - x0] = True
        local = ndimage.binary_fill_holes(spec_mask)
        if params.erosion_radius > 0:
            local = ndimage.binary_erosion(local, iterations=params.erosion_radius)
        labels, n = ndimage.label(local, structure=eight)
        for comp in range(1, n + 1):
            comp_mask = labels == comp
            count = int(comp_mask.sum())
            if count < params.min_region_area:
                continue
            rys, rxs = np.nonzero(comp_mask)
            cy = float(rys.mean()) + y0 + 0.5
            cx = float(rxs.mean()) + x0 + 0.5
            ry0, ry1 = int(rys.min()), int(rys.max()) + 1
            rx0, rx1 = int(rxs.min()), int(rxs.max()) + 1
            regions.append(
                Region(
                    spec_id=spec.id,
                    bbox=(y0 + ry0, x0 + rx0, y0 + ry1, x0 + rx1),
                    pixel_count=count,
                    centroid=(cx, cy),
                    mask=comp_mask[ry0:ry1, rx0:rx1],
                )
            )
    regions.sort(key=lambda r: (r.bbox[0], r.bbox[1]))
    return regions


# ---------------------------------------------------------------------------
# Pose fitting
# ---------------------------------------------------------------------------

def _miter_offsets(vertices: np.ndarray) -> np.ndarray:
    """Per-vertex inward offset directions for unit-distance edge insetting.

    For a convex CCW polygon, moving every vertex by d * offsets[i] shifts
    each edge inward by d (valid while no edge collapses).
    """
    n = vertices.shape[0]
    edges = np.roll(vertices, -1, axis=0) - vertices
    lens = np.linalg.norm(edges, axis=1, keepdims=True)
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1) / lens  # inward (left)
    prev = np.roll(normals, 1, axis=0)
    denom = 1.0 + (prev * normals).sum(axis=1, keepdims=True)
    return (prev + normals) / denom


def _poly_area_centroid(v: np.ndarray) -> tuple[float, np.ndarray]:
    nxt = np.roll(v, -1, axis=0)
    cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
    a = cross.sum() / 2.0
    c = ((v + nxt) * cross[:, None]).sum(axis=0) / (6.0 * a)
    return float(a), c


def _count_inside(points: np.ndarray, vertices: np.ndarray) -> int:
    """How many points fall inside a convex CCW polygon (one matmul)."""
    edges = np.roll(vertices, -1, axis=0) - vertices
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)  # inward
    offsets = (vertices * normals).sum(axis=1)
    vals = points @ normals.T
    return int(np.count_nonzero((vals >= offsets).all(axis=1)))


def _golden_max(f, lo: float, hi: float, iters: int = 14) -> tuple[float, float]:
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = f(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


class _ModelFitter:
    """Scores mask/model overlap for one region across orientations and scale."""

    def __init__(self, region: Region, spec, params: SegmentParams):
        self.spec = spec
        self.params = params
        self.inset = BORDER_PX + _EDGE_SLACK + params.erosion_radius
        y0, x0, _, _ = region.bbox
        rys, rxs = np.nonzero(region.mask)
        self.points = np.stack(
            [rxs.astype(np.float64) + x0 + 0.5, rys.astype(np.float64) + y0 + 0.5], axis=1
        )
        self.npix = region.pixel_count
        self.centroid = np.asarray(region.centroid, np.float64)
        w0, h0 = spec.size
        base = polygon_of(spec.shape, OrientedBox(0.0, 0.0, w0, h0, 0.0))
        self.base_vertices = base.vertices
        self.miter = _miter_offsets(self.base_vertices)
        self._cache_scale: float | None = None
        self._cache: tuple[np.ndarray | None, float, np.ndarray | None] = (None, 0.0, None)

    def inset_model(self, scale: float) -> np.ndarray | None:
        return self._inset_cached(scale)[0]

    def _inset_cached(self, scale: float):
        if self._cache_scale != scale:
            v = scale * self.base_vertices + self.inset * self.miter
            a, c = _poly_area_centroid(v)
            self._cache = (v, a, c) if a > 1.0 else (None, 0.0, None)
            self._cache_scale = scale
        return self._cache

    def estimate_scale(self) -> float:
        w0, h0 = self.spec.size
        base_area = abs(_poly_area_centroid(self.base_vertices)[0])
        s = math.sqrt(max(self.npix / base_area, 1e-6))
        for _ in range(3):
            v = self.inset_model(s)
            if v is None:
                break
            a, _ = _poly_area_centroid(v)
            s *= math.sqrt(max(self.npix / a, 1e-6))
        return float(np.clip(s, 0.8, 1.25))

    def score(self, theta_deg: float, scale: float, points: np.ndarray | None = None) -> float:
        """IoU between the mask and the inset model placed centroid-on-centroid."""
        v, area, centroid = self._inset_cached(scale)
        if v is None:
            return 0.0
        t = math.radians(theta_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        placed = v @ rot.T + (self.centroid - rot @ centroid)
        pts = self.points if points is None else points
        inter = _count_inside(pts, placed)
        if points is not None and pts.shape[0] > 0:
            inter = int(round(inter * (self.npix / pts.shape[0])))
        union = self.npix + area - inter
        return max(0.0, min(1.0, inter / union))

    def score_bins(self, thetas_deg: np.ndarray, scale: float,
                   points: np.ndarray) -> np.ndarray:
        """IoU at many orientations at once (single matmul over all bins)."""
        v, area, centroid = self._inset_cached(scale)
        n_bins = len(thetas_deg)
        if v is None:
            return np.zeros(n_bins)
        t = np.radians(thetas_deg)
        cos, sin = np.cos(t), np.sin(t)  # (B,)
        vx, vy = v[:, 0], v[:, 1]  # (E,)
        px = cos[:, None] * vx - sin[:, None] * vy  # (B, E)
        py = sin[:, None] * vx + cos[:, None] * vy
        px += (self.centroid[0] - (cos * centroid[0] - sin * centroid[1]))[:, None]
        py += (self.centroid[1] - (sin * centroid[0] + cos * centroid[1]))[:, None]
        ex = np.roll(px, -1, axis=1) - px
        ey = np.roll(py, -1, axis=1) - py
        nx, ny = -ey, ex  # inward normals
        off = (px * nx + py * ny).reshape(-1)  # (B*E,)
        normals = np.stack([nx.reshape(-1), ny.reshape(-1)], axis=1)
        vals = points @ normals.T  # (P, B*E)
        n_edges = v.shape[0]
        inside = (vals >= off).reshape(points.shape[0], n_bins, n_edges).all(axis=2)
        inter = inside.sum(axis=0).astype(np.float64)
        if points.shape[0] != self.npix and points.shape[0] > 0:
            inter *= self.npix / points.shape[0]
        union = self.npix + area - inter
        return np.clip(inter / union, 0.0, 1.0)

    def pose_center(self, theta_deg: float, scale: float) -> tuple[float, float]:
        v, _, centroid = self._inset_cached(scale)
        t = math.radians(theta_deg)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        c = self.centroid - rot @ centroid
        return float(c[0]), float(c[1])


def fit_pose(region: Region, catalog: Catalog | None = None,
             params: SegmentParams = SegmentParams(),
             bins: OrientationBins = DEFAULT_BINS) -> Detection | None:
    """Fit the region's spec model: orientation-bin scan plus refinement.

    Scans the orientation bins spanning the shape's symmetry period with a
    subsampled mask, golden-section refines the angle within half a bin gap
    and then the scale, and rejects regions whose best overlap stays below
    `params.overlap_accept` (clutter or partial tiles).
    """
    cat = catalog or default_catalog()
    spec = cat.get(region.spec_id)
    fitter = _ModelFitter(region, spec, params)
    scale = fitter.estimate_scale()

    period = 360.0 / spec.symmetry
    n_scan = max(4, int(round(period / bins.gap_deg)))
    sub = fitter.points[:: max(1, fitter.points.shape[0] // 700)]
    thetas = np.arange(n_scan) * (period / n_scan)
    scores = fitter.score_bins(thetas, scale, sub)
    theta0 = float(thetas[int(np.argmax(scores))])

    half = period / n_scan / 2.0
    theta, s0 = _golden_max(
        lambda t: fitter.score(t, scale, points=sub), theta0 - half, theta0 + half, iters=8
    )
    # the pixel-count scale estimate is already tight on clean masks; search
    # scale only when the fit is not yet convincing
    if s0 < 0.97:
        scale, _ = _golden_max(
            lambda s: fitter.score(theta, s, points=sub), scale * 0.92, scale * 1.08, iters=7
        )
        theta, _ = _golden_max(
            lambda t: fitter.score(t, scale, points=sub), theta - half / 2, theta + half / 2, iters=6
        )
    score = fitter.score(theta, scale)

    if score < params.overlap_accept:
        return None

    theta_c = canonical_theta(theta, spec.symmetry)
    cx, cy = fitter.pose_center(theta_c, scale)
    w0, h0 = spec.size
    pose = OrientedBox(cx, cy, scale * w0, scale * h0, theta_c)
    return Detection(
        shape=spec.shape,
        score=float(score),
        pose=pose,
        orientation_bin=bin_of(theta_c, bins),
        vertices=polygon_of(spec.shape, pose),
        spec_id=spec.id,
    )


def detect(image: np.ndarray, catalog: Catalog | None = None,
           params: SegmentParams = SegmentParams(),
           nms_iou: float = 0.45,
           bins: OrientationBins = DEFAULT_BINS) -> list[Detection]:
    """Segment, fit every region, then apply the same rotated NMS as decode."""
    cat = catalog or default_catalog()
    regions = segment(image, cat, params)
    dets = []
    for i, region in enumerate(regions):
        d = fit_pose(region, cat, params, bins)
        if d is not None:
            dets.append(
                Detection(
                    shape=d.shape,
                    score=d.score,
                    pose=d.pose,
                    orientation_bin=d.orientation_bin,
                    vertices=d.vertices,
                    spec_id=d.spec_id,
                    source_index=i,
                )
            )
    return nms(dets, iou_thresh=nms_iou)
