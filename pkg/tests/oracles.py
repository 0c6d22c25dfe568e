"""Independent oracles shared by the test suite.

These deliberately avoid the library's clipping/analytic code paths so they
can serve as ground truth for it.
"""

from __future__ import annotations

import numpy as np


def point_in_convex(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vectorized point-in-convex-CCW-polygon test (boundary counts as inside)."""
    inside = np.ones(points.shape[0], dtype=bool)
    n = vertices.shape[0]
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= -1e-12
    return inside


def mc_area(vertices: np.ndarray, rng: np.random.Generator, samples: int = 1_000_000) -> float:
    """Monte Carlo polygon area by uniform sampling over the bounding box."""
    x0, y0 = vertices.min(axis=0)
    x1, y1 = vertices.max(axis=0)
    pts = rng.uniform((x0, y0), (x1, y1), size=(samples, 2))
    frac = point_in_convex(pts, vertices).mean()
    return float(frac * (x1 - x0) * (y1 - y0))


def mc_iou(
    va: np.ndarray, vb: np.ndarray, rng: np.random.Generator, samples: int = 1_000_000
) -> float:
    """Monte Carlo IoU of two convex polygons over their joint bounding box."""
    lo = np.minimum(va.min(axis=0), vb.min(axis=0))
    hi = np.maximum(va.max(axis=0), vb.max(axis=0))
    pts = rng.uniform(lo, hi, size=(samples, 2))
    in_a = point_in_convex(pts, va)
    in_b = point_in_convex(pts, vb)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b) / union)


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g
