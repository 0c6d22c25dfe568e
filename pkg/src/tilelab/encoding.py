"""Anchor grids, target encoding, detection losses, and tensor decoding.

This is the math that sits around a detection network: assigning ground
truth to multi-scale anchors, focal-loss scoring with ratio-1 negative
sampling, and turning per-anchor predictions back into oriented tile
polygons (score threshold, offset inversion, rotated NMS, vertex mapping).
The network itself is out of scope; predictions come from either the
classical reference detector, a perfect-score tensor built from encoded
targets, or an external tensor file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog, default_catalog
from .geometry import (
    DEFAULT_BINS,
    OrientationBins,
    OrientedBox,
    Polygon,
    SHAPE_CLASSES,
    polygon_of,
    rotated_iou,
    theta_of,
)
from .scenegen import Annotation, derive_seed


class EncodingError(ValueError):
    """Invalid tensor, grid, or annotation input."""


# ---------------------------------------------------------------------------
# Anchors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnchorLevel:
    stride: int
    anchor_side: float

    def __post_init__(self):
        if self.stride < 1:
            raise EncodingError("stride must be >= 1")
        if self.anchor_side <= 0:
            raise EncodingError("anchor side must be positive")


DEFAULT_LEVELS = (AnchorLevel(16, 20.0), AnchorLevel(32, 40.0), AnchorLevel(64, 80.0))


@dataclass(frozen=True)
class AnchorGrid:
    """Flat anchor list in a fixed level-major, row-major order."""

    image_size: tuple[int, int]
    levels: tuple[AnchorLevel, ...]
    anchors: np.ndarray = field(repr=False)  # (A, 4) center-size boxes

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]


def build_anchors(image_size: tuple[int, int],
                  levels: tuple[AnchorLevel, ...] = DEFAULT_LEVELS) -> AnchorGrid:
    """One square anchor centered in every cell of every stride level."""
    if not levels:
        raise EncodingError("at least one anchor level is required")
    w, h = image_size
    rows_out = []
    for lvl in levels:
        cols = math.ceil(w / lvl.stride)
        rows = math.ceil(h / lvl.stride)
        cx = (np.arange(cols) + 0.5) * lvl.stride
        cy = (np.arange(rows) + 0.5) * lvl.stride
        gx, gy = np.meshgrid(cx, cy)  # row-major: y outer, x inner
        n = cols * rows
        level_anchors = np.stack(
            [gx.ravel(), gy.ravel(), np.full(n, float(lvl.anchor_side)),
             np.full(n, float(lvl.anchor_side))],
            axis=1,
        )
        rows_out.append(level_anchors)
    anchors = np.concatenate(rows_out, axis=0)
    anchors.flags.writeable = False
    return AnchorGrid(image_size=tuple(image_size), levels=tuple(levels), anchors=anchors)


def _corners(boxes: np.ndarray) -> np.ndarray:
    """Center-size (N,4) -> corner (N,4) x0,y0,x1,y1."""
    half = boxes[:, 2:4] / 2.0
    return np.concatenate([boxes[:, 0:2] - half, boxes[:, 0:2] + half], axis=1)


def axis_aligned_iou(a_corners: np.ndarray, b_corners: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two corner-form box sets, shape (len(a), len(b))."""
    ax0, ay0, ax1, ay1 = [a_corners[:, i][:, None] for i in range(4)]
    bx0, by0, bx1, by1 = [b_corners[:, i][None, :] for i in range(4)]
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter
    return np.where(union > 0, inter / union, 0.0)


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------

@dataclass
class TargetTensor:
    """Per-anchor training targets derived from one annotated scene."""

    class_target: np.ndarray  # (A,) int16, 0 = background
    orientation_target: np.ndarray  # (A,) int16, -1 where not positive
    offsets: np.ndarray  # (A, 4) float32: dx, dy, dw, dh vs the anchor
    positive_mask: np.ndarray  # (A,) bool
    negative_mask: np.ndarray  # (A,) bool, the sampled 1:1 negatives
    negative_candidates: np.ndarray  # (A,) bool, all below-threshold anchors
    assigned_gt: np.ndarray  # (A,) int32, ground-truth index or -1

    @property
    def n_anchors(self) -> int:
        return self.class_target.shape[0]


@dataclass
class PredictionTensor:
    """Per-anchor raw head outputs: class logits, orientation logits, offsets."""

    class_logits: np.ndarray  # (A, C+1)
    orientation_logits: np.ndarray  # (A, N)
    offsets: np.ndarray  # (A, 4)

    def __post_init__(self):
        a = self.class_logits.shape[0]
        if self.orientation_logits.shape[0] != a or self.offsets.shape[0] != a:
            raise EncodingError("prediction arrays disagree on anchor count")
        if self.offsets.shape[1] != 4:
            raise EncodingError("offsets must be (A, 4)")
        for arr in (self.class_logits, self.orientation_logits, self.offsets):
            if not np.all(np.isfinite(arr)):
                raise EncodingError("prediction tensor contains non-finite values")

    @property
    def n_anchors(self) -> int:
        return self.class_logits.shape[0]


@dataclass(frozen=True)
class Detection:
    """A decoded tile: class, confidence, recovered pose and polygon."""

    shape: str
    score: float
    pose: OrientedBox
    orientation_bin: int
    vertices: Polygon
    spec_id: str | None = None
    axis_box: tuple[float, float, float, float] | None = None  # regressed cx,cy,w,h
    source_index: int = 0  # anchor or region index, for deterministic ordering

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "spec_id": self.spec_id,
            "score": float(self.score),
            "cx": float(self.pose.cx),
            "cy": float(self.pose.cy),
            "theta_deg": float(self.pose.theta),
            "orientation_bin": int(self.orientation_bin),
            "vertices": [[float(x), float(y)] for x, y in self.vertices.vertices],
        }


def detection_from_dict(d: dict, catalog: Catalog | None = None) -> Detection:
    cat = catalog or default_catalog()
    verts = Polygon(np.asarray(d["vertices"], float))
    shape = d["shape"]
    spec_id = d.get("spec_id")
    if spec_id:
        w, h = cat.get(spec_id).size
    else:
        x0, y0, x1, y1 = verts.aabb()
        w, h = max(x1 - x0, 1e-6), max(y1 - y0, 1e-6)
    return Detection(
        shape=shape,
        score=float(d["score"]),
        pose=OrientedBox(float(d["cx"]), float(d["cy"]), w, h, float(d["theta_deg"])),
        orientation_bin=int(d["orientation_bin"]),
        vertices=verts,
        spec_id=spec_id,
    )


def detections_to_json(detections: list[Detection]) -> dict:
    return {"detections": [d.to_dict() for d in detections]}


def detections_from_json(doc: dict, catalog: Catalog | None = None) -> list[Detection]:
    return [detection_from_dict(d, catalog) for d in doc.get("detections", [])]


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode(
    annotations: list[Annotation],
    grid: AnchorGrid,
    match_iou_pos: float = 0.5,
    match_iou_neg: float = 0.4,
    seed: int = 0,
) -> TargetTensor:
    """Assign ground truth to anchors and compute regression targets.

    An anchor is positive when its IoU with a ground-truth axis-aligned box
    reaches `match_iou_pos`; additionally every ground truth claims its
    best-IoU anchor so none goes unmatched. Anchors below `match_iou_neg`
    against everything are negative candidates, of which a deterministic
    seeded sample of size |positives| is marked for loss computation.
    Offsets are (dx, dy) in anchor-size units and log size ratios.
    """
    a = grid.n_anchors
    class_target = np.zeros(a, dtype=np.int16)
    orientation_target = np.full(a, -1, dtype=np.int16)
    offsets = np.zeros((a, 4), dtype=np.float32)
    positive = np.zeros(a, dtype=bool)
    assigned = np.full(a, -1, dtype=np.int32)

    anchors = grid.anchors
    anchor_corners = _corners(anchors)

    if annotations:
        gt_corners = np.array([ann.aabb for ann in annotations], dtype=np.float64)
        widths = gt_corners[:, 2] - gt_corners[:, 0]
        heights = gt_corners[:, 3] - gt_corners[:, 1]
        if np.any(widths <= 0) or np.any(heights <= 0):
            raise EncodingError("ground truth with zero-area axis-aligned box")
        iou = axis_aligned_iou(anchor_corners, gt_corners)  # (A, G)
        max_iou = iou.max(axis=1)
        argmax_gt = iou.argmax(axis=1)

        positive = max_iou >= match_iou_pos
        assigned[positive] = argmax_gt[positive]

        # Forced matches: each GT claims its best anchor, processed in
        # descending best-IoU order; a claimed anchor falls through to the
        # claimant's next-best choice.
        order = np.argsort(-iou.max(axis=0), kind="stable")
        claimed: set[int] = set()
        for g in order:
            ranked = np.argsort(-iou[:, g], kind="stable")
            for idx in ranked:
                if int(idx) not in claimed:
                    claimed.add(int(idx))
                    positive[idx] = True
                    assigned[idx] = g
                    break

        negative_candidates = (max_iou < match_iou_neg) & ~positive

        pos_idx = np.flatnonzero(positive)
        gt_idx = assigned[pos_idx]
        acx, acy, aw, ah = [anchors[pos_idx, i] for i in range(4)]
        gx = (gt_corners[gt_idx, 0] + gt_corners[gt_idx, 2]) / 2.0
        gy = (gt_corners[gt_idx, 1] + gt_corners[gt_idx, 3]) / 2.0
        gw = widths[gt_idx]
        gh = heights[gt_idx]
        offsets[pos_idx, 0] = (gx - acx) / aw
        offsets[pos_idx, 1] = (gy - acy) / ah
        offsets[pos_idx, 2] = np.log(gw / aw)
        offsets[pos_idx, 3] = np.log(gh / ah)
        for i, g in zip(pos_idx, gt_idx):
            ann = annotations[g]
            class_target[i] = SHAPE_CLASSES.index(ann.shape) + 1
            orientation_target[i] = ann.orientation_bin
    else:
        negative_candidates = np.ones(a, dtype=bool)

    negative_mask = sample_negatives(negative_candidates, int(positive.sum()), seed)
    return TargetTensor(
        class_target=class_target,
        orientation_target=orientation_target,
        offsets=offsets,
        positive_mask=positive,
        negative_mask=negative_mask,
        negative_candidates=negative_candidates,
        assigned_gt=assigned,
    )


def sample_negatives(candidates: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Deterministic 1:1 negative sample (fewer if not enough candidates)."""
    mask = np.zeros(candidates.shape[0], dtype=bool)
    cand_idx = np.flatnonzero(candidates)
    take = min(n, cand_idx.size)
    if take > 0:
        rng = np.random.default_rng(derive_seed(seed, "negatives"))
        chosen = rng.choice(cand_idx, size=take, replace=False)
        mask[np.sort(chosen)] = True
    return mask


def sample_hard_negatives(pred: PredictionTensor, target: TargetTensor,
                          cfg: "LossConfig") -> np.ndarray:
    """Pick the |positives| highest-focal-loss negative candidates.

    This is the training-time variant of ratio-1 negative sampling; the
    static encoder uses a seeded uniform sample instead.
    """
    probs = softmax(pred.class_logits)
    p_bg = np.clip(probs[:, 0], 1e-12, 1.0)
    losses = focal_loss(p_bg, cfg)
    losses[~target.negative_candidates] = -np.inf
    n = int(target.positive_mask.sum())
    mask = np.zeros(target.n_anchors, dtype=bool)
    n = min(n, int(target.negative_candidates.sum()))
    if n > 0:
        top = np.argpartition(-losses, n - 1)[:n]
        mask[top] = True
    return mask


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    regression_weight: float = 1.0

    def __post_init__(self):
        # alpha = 1 disables class weighting, reducing to cross-entropy at
        # gamma = 0
        if not 0.0 < self.alpha <= 1.0:
            raise EncodingError("focal alpha must be in (0, 1]")
        if self.gamma < 0.0:
            raise EncodingError("focal gamma must be >= 0")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def focal_loss(p_t, cfg: LossConfig = LossConfig()):
    """Focal loss -alpha * (1 - p)^gamma * ln(p) for true-class probability p.

    Accepts scalars or arrays; p must lie in (0, 1].
    """
    p = np.asarray(p_t, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise EncodingError("focal loss requires probabilities in (0, 1]")
    out = -cfg.alpha * np.power(1.0 - p, cfg.gamma) * np.log(p)
    return float(out) if np.isscalar(p_t) else out


def focal_loss_grad(p_t, cfg: LossConfig = LossConfig()):
    """d(focal_loss)/dp. Zero at p=1 for gamma > 0; -alpha/p at gamma = 0."""
    p = np.asarray(p_t, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise EncodingError("focal loss requires probabilities in (0, 1]")
    term2 = -cfg.alpha * np.power(1.0 - p, cfg.gamma) / p
    if cfg.gamma == 0.0:
        out = term2
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            term1 = cfg.alpha * cfg.gamma * np.power(1.0 - p, cfg.gamma - 1.0) * np.log(p)
        term1 = np.where(p >= 1.0, 0.0, term1)
        out = term1 + term2
    return float(out) if np.isscalar(p_t) else out


def _selected_focal(logits: np.ndarray, labels: np.ndarray, sel: np.ndarray,
                    cfg: LossConfig) -> float:
    if not sel.any():
        return 0.0
    probs = softmax(logits[sel])
    p_t = np.clip(probs[np.arange(probs.shape[0]), labels[sel]], 1e-12, 1.0)
    return float(np.mean(focal_loss(p_t, cfg)))


def _selected_focal_grad(logits: np.ndarray, labels: np.ndarray, sel: np.ndarray,
                         cfg: LossConfig) -> np.ndarray:
    grad = np.zeros_like(logits, dtype=np.float64)
    idx = np.flatnonzero(sel)
    if idx.size == 0:
        return grad
    probs = softmax(logits[idx])
    lab = labels[idx]
    rows = np.arange(idx.size)
    p_t = np.clip(probs[rows, lab], 1e-12, 1.0)
    g = focal_loss_grad(p_t, cfg)  # dL/dp_t per selected anchor
    # dp_t/dz_j = p_t (delta_tj - p_j)
    jac = -probs * p_t[:, None]
    jac[rows, lab] += p_t
    grad[idx] = (g[:, None] * jac) / idx.size
    return grad


def classification_loss(class_logits: np.ndarray, target: TargetTensor,
                        cfg: LossConfig = LossConfig()) -> float:
    """Mean focal loss over positives plus the sampled 1:1 negatives."""
    sel = target.positive_mask | target.negative_mask
    labels = np.where(target.positive_mask, target.class_target, 0).astype(np.int64)
    return _selected_focal(class_logits, labels, sel, cfg)


def classification_loss_grad(class_logits: np.ndarray, target: TargetTensor,
                             cfg: LossConfig = LossConfig()) -> np.ndarray:
    sel = target.positive_mask | target.negative_mask
    labels = np.where(target.positive_mask, target.class_target, 0).astype(np.int64)
    return _selected_focal_grad(class_logits, labels, sel, cfg)


def orientation_loss(orientation_logits: np.ndarray, target: TargetTensor,
                     cfg: LossConfig = LossConfig()) -> float:
    """Mean focal loss of the orientation softmax over positive anchors."""
    labels = np.clip(target.orientation_target, 0, None).astype(np.int64)
    return _selected_focal(orientation_logits, labels, target.positive_mask, cfg)


def orientation_loss_grad(orientation_logits: np.ndarray, target: TargetTensor,
                          cfg: LossConfig = LossConfig()) -> np.ndarray:
    labels = np.clip(target.orientation_target, 0, None).astype(np.int64)
    return _selected_focal_grad(orientation_logits, labels, target.positive_mask, cfg)


def regression_loss(offsets: np.ndarray, target: TargetTensor,
                    cfg: LossConfig = LossConfig()) -> float:
    """Smooth-L1 over positive-anchor offsets, averaged per coordinate."""
    pos = target.positive_mask
    if not pos.any():
        return 0.0
    err = np.asarray(offsets[pos], np.float64) - target.offsets[pos]
    ae = np.abs(err)
    loss = np.where(ae < 1.0, 0.5 * err * err, ae - 0.5)
    return float(cfg.regression_weight * loss.mean())


def regression_loss_grad(offsets: np.ndarray, target: TargetTensor,
                         cfg: LossConfig = LossConfig()) -> np.ndarray:
    grad = np.zeros_like(offsets, dtype=np.float64)
    pos = target.positive_mask
    if not pos.any():
        return grad
    err = np.asarray(offsets[pos], np.float64) - target.offsets[pos]
    g = np.where(np.abs(err) < 1.0, err, np.sign(err))
    grad[pos] = cfg.regression_weight * g / err.size
    return grad


# ---------------------------------------------------------------------------
# Decode
# ---------------------------------------------------------------------------

def apply_offsets(anchors: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Inverse of the encode offset transform; returns center-size boxes."""
    out = np.empty_like(anchors, dtype=np.float64)
    out[:, 0] = anchors[:, 0] + offsets[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + offsets[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(offsets[:, 2])
    out[:, 3] = anchors[:, 3] * np.exp(offsets[:, 3])
    return out


def offsets_of(anchors: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Forward offset transform of center-size boxes against anchors."""
    out = np.empty_like(anchors, dtype=np.float64)
    out[:, 0] = (boxes[:, 0] - anchors[:, 0]) / anchors[:, 2]
    out[:, 1] = (boxes[:, 1] - anchors[:, 1]) / anchors[:, 3]
    out[:, 2] = np.log(boxes[:, 2] / anchors[:, 2])
    out[:, 3] = np.log(boxes[:, 3] / anchors[:, 3])
    return out


def _pose_from_axis_box(shape: str, spec_size: tuple[float, float], axis_box: np.ndarray,
                        theta: float) -> OrientedBox:
    """Recover the tile pose from its regressed axis-aligned box.

    Tiles keep the catalog aspect ratio (a global scale jitter scales both
    extents), so the axis box determines a single unknown: the uniform
    scale. The pose center is the axis-box center corrected by the model
    polygon's own bounds offset at this orientation.
    """
    w0, h0 = spec_size
    ref = polygon_of(shape, OrientedBox(0.0, 0.0, w0, h0, theta))
    x0, y0, x1, y1 = ref.aabb()
    ref_w, ref_h = x1 - x0, y1 - y0
    ref_cx, ref_cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    scale = (axis_box[2] + axis_box[3]) / (ref_w + ref_h)
    return OrientedBox(
        float(axis_box[0] - scale * ref_cx),
        float(axis_box[1] - scale * ref_cy),
        float(scale * w0),
        float(scale * h0),
        theta,
    )


def decode_candidates(
    pred: PredictionTensor,
    grid: AnchorGrid,
    catalog: Catalog | None = None,
    score_thresh: float = 0.5,
    bins: OrientationBins = DEFAULT_BINS,
) -> list[Detection]:
    """Threshold class scores and map anchor predictions to tile polygons."""
    if pred.n_anchors != grid.n_anchors:
        raise EncodingError(
            f"prediction has {pred.n_anchors} anchors, grid has {grid.n_anchors}"
        )
    cat = catalog or default_catalog()
    probs = softmax(np.asarray(pred.class_logits, np.float64))
    fg = probs[:, 1:]
    best_class = fg.argmax(axis=1)
    best_score = fg[np.arange(fg.shape[0]), best_class]
    keep = np.flatnonzero(best_score >= score_thresh)
    if keep.size == 0:
        return []
    boxes = apply_offsets(grid.anchors[keep], np.asarray(pred.offsets[keep], np.float64))
    bins_best = np.asarray(pred.orientation_logits[keep]).argmax(axis=1)
    out = []
    for j, anchor_idx in enumerate(keep):
        shape = SHAPE_CLASSES[best_class[anchor_idx]]
        spec = cat.spec_for_shape(shape)
        theta = theta_of(int(bins_best[j]), bins)
        pose = _pose_from_axis_box(shape, spec.size, boxes[j], theta)
        out.append(
            Detection(
                shape=shape,
                score=float(best_score[anchor_idx]),
                pose=pose,
                orientation_bin=int(bins_best[j]),
                vertices=polygon_of(shape, pose),
                spec_id=spec.id,
                axis_box=tuple(float(v) for v in boxes[j]),
                source_index=int(anchor_idx),
            )
        )
    out.sort(key=lambda d: (-d.score, d.source_index))
    return out


def nms(detections: list[Detection], iou_thresh: float = 0.45,
        axis_aligned: bool = False) -> list[Detection]:
    """Greedy per-class suppression of overlapping detections.

    Uses rotated polygon IoU by default; densely packed tiles overlap their
    neighbors' axis boxes far more than their actual outlines.
    """
    ordered = sorted(detections, key=lambda d: (-d.score, d.source_index))
    kept: list[Detection] = []
    for cand in ordered:
        suppressed = False
        for k in kept:
            if k.shape != cand.shape:
                continue
            if axis_aligned:
                ious = axis_aligned_iou(
                    _corners(np.array([[k.pose.cx, k.pose.cy, *_aabb_dims(k)]])),
                    _corners(np.array([[cand.pose.cx, cand.pose.cy, *_aabb_dims(cand)]])),
                )
                iou = float(ious[0, 0])
            else:
                iou = rotated_iou(k.vertices, cand.vertices)
            if iou > iou_thresh:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


def _aabb_dims(det: Detection) -> tuple[float, float]:
    x0, y0, x1, y1 = det.vertices.aabb()
    return (x1 - x0, y1 - y0)


def decode(
    pred: PredictionTensor,
    grid: AnchorGrid,
    catalog: Catalog | None = None,
    score_thresh: float = 0.5,
    nms_iou: float = 0.45,
    max_out: int = 64,
    axis_aligned_nms: bool = False,
    bins: OrientationBins = DEFAULT_BINS,
) -> list[Detection]:
    """Full decode: threshold, offset inversion, rotated NMS, vertex mapping."""
    cands = decode_candidates(pred, grid, catalog, score_thresh, bins)
    return nms(cands, nms_iou, axis_aligned=axis_aligned_nms)[:max_out]


def perfect_predictions(target: TargetTensor, n_classes: int | None = None,
                        bins: OrientationBins = DEFAULT_BINS,
                        magnitude: float = 18.0) -> PredictionTensor:
    """Build the idealized tensor a perfectly trained network would emit.

    Positives get a one-hot class and orientation logit of `magnitude` and
    exact offsets; everything else scores as background.
    """
    c = (n_classes or len(SHAPE_CLASSES)) + 1
    a = target.n_anchors
    class_logits = np.zeros((a, c), dtype=np.float32)
    orientation_logits = np.zeros((a, bins.n_bins), dtype=np.float32)
    class_logits[:, 0] = magnitude
    pos = np.flatnonzero(target.positive_mask)
    class_logits[pos, 0] = 0.0
    class_logits[pos, target.class_target[pos]] = magnitude
    orientation_logits[pos, target.orientation_target[pos]] = magnitude
    return PredictionTensor(
        class_logits=class_logits,
        orientation_logits=orientation_logits,
        offsets=target.offsets.copy(),
    )


# ---------------------------------------------------------------------------
# External tensor format
# ---------------------------------------------------------------------------

TENSOR_LAYOUT = "class|orientation|offsets"
_HEADER_PAD = 256


def save_predictions(pred: PredictionTensor, path: str | Path,
                     data_path: str | None = None) -> None:
    """Write the external tensor format.

    With `data_path` the header JSON and raw blob are separate files;
    otherwise a single file holds a padded one-line header followed by the
    blob at the declared byte offset.
    """
    a = pred.n_anchors
    header = {
        "anchors": a,
        "classes": int(pred.class_logits.shape[1]) - 1,
        "bins": int(pred.orientation_logits.shape[1]),
        "layout": TENSOR_LAYOUT,
        "dtype": "f32le",
    }
    blob = (
        np.concatenate(
            [pred.class_logits, pred.orientation_logits, pred.offsets], axis=1
        )
        .astype("<f4")
        .tobytes()
    )
    path = Path(path)
    if data_path is not None:
        header["data"] = data_path
        path.write_text(json.dumps(header, sort_keys=True))
        (path.parent / data_path).write_bytes(blob)
        return
    header["data_offset"] = _HEADER_PAD
    line = json.dumps(header, sort_keys=True).encode("utf-8")
    if len(line) >= _HEADER_PAD:
        raise EncodingError("tensor header too large for fixed padding")
    with open(path, "wb") as f:
        f.write(line + b" " * (_HEADER_PAD - len(line) - 1) + b"\n")
        f.write(blob)


def load_predictions(path: str | Path, grid: AnchorGrid | None = None) -> PredictionTensor:
    """Read the external tensor format, validating counts against the grid."""
    path = Path(path)
    with open(path, "rb") as f:
        first = f.readline()
        try:
            header = json.loads(first.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EncodingError(f"unreadable tensor header: {exc}") from exc
        for key in ("anchors", "classes", "bins", "layout", "dtype"):
            if key not in header:
                raise EncodingError(f"tensor header missing field {key!r}")
        if header["layout"] != TENSOR_LAYOUT:
            raise EncodingError(f"unsupported layout {header['layout']!r}")
        if header["dtype"] != "f32le":
            raise EncodingError(f"unsupported dtype {header['dtype']!r}")
        a, c, n = int(header["anchors"]), int(header["classes"]), int(header["bins"])
        per_anchor = (c + 1) + n + 4
        expected = a * per_anchor * 4
        if "data" in header:
            blob = (path.parent / header["data"]).read_bytes()
        elif "data_offset" in header:
            f.seek(int(header["data_offset"]))
            blob = f.read()
        else:
            raise EncodingError("tensor header declares neither data nor data_offset")
    if len(blob) != expected:
        raise EncodingError(
            f"tensor blob is {len(blob)} bytes, expected {expected} "
            f"({a} anchors x {per_anchor} floats)"
        )
    if grid is not None and a != grid.n_anchors:
        raise EncodingError(f"tensor has {a} anchors but the grid has {grid.n_anchors}")
    flat = np.frombuffer(blob, dtype="<f4").reshape(a, per_anchor)
    return PredictionTensor(
        class_logits=np.ascontiguousarray(flat[:, : c + 1]),
        orientation_logits=np.ascontiguousarray(flat[:, c + 1 : c + 1 + n]),
        offsets=np.ascontiguousarray(flat[:, c + 1 + n :]),
    )
