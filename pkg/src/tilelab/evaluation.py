"""Vertex-matched detection scoring and the latency benchmark harness.

A prediction matches a ground-truth tile when the mean distance between
their polygon vertices, minimized over cyclic vertex alignments, stays
within tau_vertex. Cyclic alignment doubles as symmetry handling: the
catalog's canonical models map onto themselves under their symmetry
rotations with relabeled vertices, so a detector reporting any
symmetry-equivalent orientation scores as correct.
"""

from __future__ import annotations

import json
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import Catalog, default_catalog
from .encoding import (
    Detection,
    DEFAULT_LEVELS,
    build_anchors,
    decode,
    detections_from_json,
    encode,
    nms,
    perfect_predictions,
)
from .scenegen import (
    Annotation,
    SceneGenConfig,
    annotation_from_dict,
    sample_scene,
)


class EvalError(ValueError):
    """Invalid evaluation input."""


@dataclass(frozen=True)
class MatchConfig:
    tau_vertex: float = 5.0  # max mean per-vertex distance, pixels
    require_class: bool = True
    use_hungarian: bool = False  # optimal assignment, for verification runs

    def __post_init__(self):
        if self.tau_vertex <= 0:
            raise EvalError("tau_vertex must be positive")


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def fscore(self) -> float:
        return fscore_of(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": round(self.precision, 4),
            "recall": round(self.recall, 4),
            "fscore": round(self.fscore, 4),
        }


def fscore_of(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (both in percent)."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[tuple[int, int, float], ...]  # (pred index, gt index, cost)
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


def vertex_cost(pred_vertices: np.ndarray, gt_vertices: np.ndarray) -> float:
    """Mean per-vertex distance minimized over cyclic alignments."""
    n = gt_vertices.shape[0]
    if pred_vertices.shape[0] != n:
        raise EvalError(
            f"vertex count mismatch ({pred_vertices.shape[0]} vs {n}); "
            "predictions and ground truth must share the arc discretization"
        )
    best = math.inf
    for shift in range(n):
        d = np.linalg.norm(pred_vertices - np.roll(gt_vertices, -shift, axis=0), axis=1)
        best = min(best, float(d.mean()))
    return best


def match_detections(
    preds: list[Detection],
    gts: list[Annotation],
    cfg: MatchConfig = MatchConfig(),
) -> MatchResult:
    """One-to-one matching by greedy ascending vertex cost.

    Greedy is near-optimal here (tiles barely overlap) and deterministic;
    set cfg.use_hungarian for the optimal assignment on small instances.
    """
    candidates: list[tuple[float, int, int]] = []
    costs = np.full((len(preds), len(gts)), np.inf)
    for pi, pred in enumerate(preds):
        for gi, gt in enumerate(gts):
            if cfg.require_class and pred.shape != gt.shape:
                continue
            if pred.shape == gt.shape:
                c = vertex_cost(pred.vertices.vertices, gt.vertices.vertices)
            else:
                if pred.vertices.vertices.shape[0] != gt.vertices.vertices.shape[0]:
                    continue
                c = vertex_cost(pred.vertices.vertices, gt.vertices.vertices)
            costs[pi, gi] = c
            if c <= cfg.tau_vertex:
                candidates.append((c, pi, gi))

    matches: list[tuple[int, int, float]] = []
    used_p: set[int] = set()
    used_g: set[int] = set()
    if cfg.use_hungarian and candidates:
        from scipy.optimize import linear_sum_assignment

        big = 1e9
        cm = np.where(np.isfinite(costs) & (costs <= cfg.tau_vertex), costs, big)
        rows, cols = linear_sum_assignment(cm)
        for pi, gi in zip(rows, cols):
            if cm[pi, gi] < big:
                matches.append((int(pi), int(gi), float(costs[pi, gi])))
                used_p.add(int(pi))
                used_g.add(int(gi))
    else:
        for c, pi, gi in sorted(candidates):
            if pi in used_p or gi in used_g:
                continue
            matches.append((pi, gi, c))
            used_p.add(pi)
            used_g.add(gi)

    return MatchResult(
        matches=tuple(matches),
        unmatched_preds=tuple(i for i in range(len(preds)) if i not in used_p),
        unmatched_gts=tuple(i for i in range(len(gts)) if i not in used_g),
    )


def compute_metrics(results: list[MatchResult]) -> Metrics:
    """Aggregate tp/fp/fn over images. A failed match counts as fp and fn."""
    tp = sum(len(r.matches) for r in results)
    fp = sum(len(r.unmatched_preds) for r in results)
    fn = sum(len(r.unmatched_gts) for r in results)
    return Metrics(tp=tp, fp=fp, fn=fn)


def evaluate_dataset(
    pred_dir: str | Path,
    gt_dir: str | Path,
    cfg: MatchConfig = MatchConfig(),
    catalog: Catalog | None = None,
) -> tuple[Metrics, list[dict]]:
    """Score a directory of detection JSONs against annotation JSONs.

    Files pair by stem; a ground-truth image without a prediction file
    counts all its tiles as misses.
    """
    cat = catalog or default_catalog()
    gt_dir = Path(gt_dir)
    pred_dir = Path(pred_dir)
    gt_files = sorted(gt_dir.glob("*.json"))
    if not gt_files:
        raise EvalError(f"no annotation files in {gt_dir}")
    results = []
    per_image = []
    for gt_file in gt_files:
        doc = json.loads(gt_file.read_text())
        gts = [annotation_from_dict(t, cat) for t in doc.get("tiles", [])]
        pred_file = pred_dir / gt_file.name
        if pred_file.exists():
            preds = detections_from_json(json.loads(pred_file.read_text()), cat)
        else:
            preds = []
        r = match_detections(preds, gts, cfg)
        results.append(r)
        per_image.append(
            {
                "image": gt_file.stem,
                "tp": len(r.matches),
                "fp": len(r.unmatched_preds),
                "fn": len(r.unmatched_gts),
            }
        )
    return compute_metrics(results), per_image


def report_to_dict(metrics: Metrics, per_image: list[dict]) -> dict:
    d = metrics.to_dict()
    d["per_image"] = per_image
    return d


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingReport:
    stages: dict[str, tuple[float, float]]  # name -> (median_ms, p95_ms)
    environment: str
    samples: dict[str, list[float]]  # raw per-iteration milliseconds

    def median_ms(self, stage: str) -> float:
        return self.stages[stage][0]

    def to_dict(self) -> dict:
        out = {
            name: {"median_ms": round(med, 4), "p95_ms": round(p95, 4)}
            for name, (med, p95) in self.stages.items()
        }
        out["environment"] = self.environment
        return out


def _environment_note() -> str:
    return (
        f"{platform.platform()} | python {platform.python_version()} | "
        f"numpy {np.__version__} | cpus {__import__('os').cpu_count()}"
    )


def bench(
    catalog: Catalog | None = None,
    image_size: tuple[int, int] = (480, 480),
    levels=DEFAULT_LEVELS,
    n_scenes: int = 6,
    max_tiles: int = 8,
    iters: int = 20,
    warmup: int = 5,
    seed: int = 1234,
) -> TimingReport:
    """Per-stage wall-clock timing over deterministic scenes.

    Stages: render, segment, fit, nms (the reference pipeline pieces),
    decode (tensor decode including its rotated NMS on the full anchor
    grid), and total (all stages back to back). The derived refdetect stage
    sums segment + fit + nms per iteration, i.e. detection from an existing
    image. Single-threaded; medians are robust to scheduler noise.
    """
    from . import refdetect
    from .render import rasterize

    cat = catalog or default_catalog()
    cfg = SceneGenConfig(catalog=cat, image_size=image_size, max_tiles=max_tiles)
    scenes = [sample_scene(seed + i, cfg) for i in range(n_scenes)]
    grid = build_anchors(image_size, levels)
    from .scenegen import annotate

    tensors = [perfect_predictions(encode(annotate(s, cat), grid)) for s in scenes]

    samples: dict[str, list[float]] = {
        k: [] for k in ("render", "segment", "fit", "decode", "nms", "refdetect", "total")
    }
    warmup = max(5, warmup)
    for it in range(warmup + iters):
        i = it % n_scenes
        scene, tensor = scenes[i], tensors[i]
        rec = {} if it < warmup else samples

        t0 = time.perf_counter()
        img = rasterize(scene, cat)
        t1 = time.perf_counter()
        regions = refdetect.segment(img, cat)
        t2 = time.perf_counter()
        dets = [d for r in regions if (d := refdetect.fit_pose(r, cat)) is not None]
        t3 = time.perf_counter()
        nms(dets)
        t4 = time.perf_counter()
        decode(tensor, grid, cat)
        t5 = time.perf_counter()

        if it >= warmup:
            rec["render"].append((t1 - t0) * 1000)
            rec["segment"].append((t2 - t1) * 1000)
            rec["fit"].append((t3 - t2) * 1000)
            rec["nms"].append((t4 - t3) * 1000)
            rec["decode"].append((t5 - t4) * 1000)
            rec["refdetect"].append((t4 - t1) * 1000)
            rec["total"].append((t5 - t0) * 1000)

    stages = {
        name: (float(np.median(vals)), float(np.percentile(vals, 95)))
        for name, vals in samples.items()
    }
    return TimingReport(stages=stages, environment=_environment_note(), samples=samples)
