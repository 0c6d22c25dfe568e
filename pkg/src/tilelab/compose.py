"""Composition-game rules: does a set of detected tiles build an ingredient?

A template describes an ingredient as part groups; each group is satisfied
by any one of its alternatives (a list of tile slots with poses relative to
the template frame). Checking is rigid-transform invariant: the template
may sit anywhere on the mat at any rotation.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .catalog import Catalog, default_catalog
from .encoding import Detection
from .geometry import (
    OrientedBox,
    SHAPE_CLASSES,
    intersection_area,
    orientation_error_deg,
    polygon_of,
)
from .scenegen import MAX_OVERLAP_FRACTION

# A class-compatible detection beyond the pose tolerance still counts as a
# "misplaced" attempt at a slot if it sits within this many tolerances.
MISPLACED_CATCH_FACTOR = 3.0


class ComposeError(ValueError):
    """Invalid template or check request."""


class UnknownTemplateError(ComposeError, KeyError):
    pass


@dataclass(frozen=True)
class PartSlot:
    shape: str
    cx: float
    cy: float
    theta_deg: float
    spec_id: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.shape not in SHAPE_CLASSES:
            raise ComposeError(f"unknown shape class {self.shape!r}")


@dataclass(frozen=True)
class PartGroup:
    alternatives: tuple[tuple[PartSlot, ...], ...]
    name: str | None = None

    def __post_init__(self):
        if not self.alternatives:
            raise ComposeError("part group needs at least one alternative")
        if any(len(alt) == 0 for alt in self.alternatives):
            raise ComposeError("alternatives must contain at least one slot")


@dataclass(frozen=True)
class ComposeTolerance:
    pos_tol: float = 8.0
    theta_tol: float = 10.0  # compared after symmetry canonicalization

    def __post_init__(self):
        if self.pos_tol <= 0 or self.theta_tol <= 0:
            raise ComposeError("tolerances must be positive")


@dataclass(frozen=True)
class CompositionTemplate:
    id: str
    parts: tuple[PartGroup, ...]

    def __post_init__(self):
        if not self.id:
            raise ComposeError("template id must be non-empty")
        if not self.parts:
            raise ComposeError("template needs at least one part group")

    def validate_layout(self, catalog: Catalog) -> None:
        """Every alternative combination must honor the dense-packing rule."""
        alt_counts = [range(len(g.alternatives)) for g in self.parts]
        combos = list(itertools.islice(itertools.product(*alt_counts), 64))
        for combo in combos:
            slots = [
                s for gi, g in enumerate(self.parts) for s in g.alternatives[combo[gi]]
            ]
            polys = [_slot_polygon(s, catalog) for s in slots]
            for i in range(len(polys)):
                for j in range(i + 1, len(polys)):
                    limit = MAX_OVERLAP_FRACTION * min(polys[i].area, polys[j].area)
                    if intersection_area(polys[i], polys[j]) > limit:
                        raise ComposeError(
                            f"template {self.id!r}: slots {i} and {j} of combination "
                            f"{combo} overlap beyond the dense-packing limit"
                        )

    def extent_radius(self, catalog: Catalog) -> float:
        r = 0.0
        for group in self.parts:
            for alt in group.alternatives:
                for slot in alt:
                    spec = _slot_spec(slot, catalog)
                    half = math.hypot(*spec.size) / 2.0
                    r = max(r, math.hypot(slot.cx, slot.cy) + half)
        return r

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parts": [
                {
                    **({"name": g.name} if g.name else {}),
                    "alternatives": [
                        [
                            {
                                "shape": s.shape,
                                "spec_id": s.spec_id,
                                "cx": s.cx,
                                "cy": s.cy,
                                "theta_deg": s.theta_deg,
                                **({"name": s.name} if s.name else {}),
                            }
                            for s in alt
                        ]
                        for alt in g.alternatives
                    ],
                }
                for g in self.parts
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompositionTemplate":
        try:
            parts = tuple(
                PartGroup(
                    name=g.get("name"),
                    alternatives=tuple(
                        tuple(
                            PartSlot(
                                shape=s["shape"],
                                spec_id=s.get("spec_id"),
                                cx=float(s["cx"]),
                                cy=float(s["cy"]),
                                theta_deg=float(s["theta_deg"]),
                                name=s.get("name"),
                            )
                            for s in alt
                        )
                        for alt in g["alternatives"]
                    ),
                )
                for g in d["parts"]
            )
            return cls(id=d["id"], parts=parts)
        except (KeyError, TypeError) as exc:
            raise ComposeError(f"malformed template document: {exc}") from exc


def _slot_spec(slot: PartSlot, catalog: Catalog):
    if slot.spec_id:
        return catalog.get(slot.spec_id)
    return catalog.spec_for_shape(slot.shape)


def _slot_polygon(slot: PartSlot, catalog: Catalog):
    spec = _slot_spec(slot, catalog)
    w, h = spec.size
    return polygon_of(slot.shape, OrientedBox(slot.cx, slot.cy, w, h, slot.theta_deg))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, CompositionTemplate] = {}
_BUILTINS_LOADED = False


def _load_builtins() -> None:
    global _BUILTINS_LOADED
    if _BUILTINS_LOADED:
        return
    _BUILTINS_LOADED = True
    root = resources.files("tilelab") / "templates"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            t = CompositionTemplate.from_dict(json.loads(entry.read_text()))
            t.validate_layout(default_catalog())
            _REGISTRY[t.id] = t


def register_template(template: CompositionTemplate,
                      catalog: Catalog | None = None) -> str:
    """Validate a template and add it to the registry; returns its id."""
    _load_builtins()
    if template.id in _REGISTRY:
        raise ComposeError(f"template id {template.id!r} already registered")
    template.validate_layout(catalog or default_catalog())
    _REGISTRY[template.id] = template
    return template.id


def get_template(template_id: str) -> CompositionTemplate:
    _load_builtins()
    try:
        return _REGISTRY[template_id]
    except KeyError:
        raise UnknownTemplateError(f"unknown template {template_id!r}") from None


def template_ids() -> list[str]:
    _load_builtins()
    return sorted(_REGISTRY)


def load_template_file(path: str | Path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return register_template(CompositionTemplate.from_dict(json.load(f)))


# ---------------------------------------------------------------------------
# Checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotMatch:
    group: int
    slot: int
    detection: int
    pos_err: float
    theta_err: float


@dataclass(frozen=True)
class CompositionResult:
    complete: bool
    chosen: tuple[int, ...]  # chosen alternative index per group
    matched: tuple[SlotMatch, ...]
    missing: tuple[tuple[int, int, str], ...]  # (group, slot, shape)
    misplaced: tuple[SlotMatch, ...]
    extra: tuple[int, ...]  # detection indices not used by any slot

    def to_dict(self, template: CompositionTemplate | None = None) -> dict:
        def group_name(gi: int) -> str | None:
            if template is None:
                return None
            return template.parts[gi].name

        return {
            "complete": self.complete,
            "chosen": [
                {"group": gi, "name": group_name(gi), "alternative": int(ai)}
                for gi, ai in enumerate(self.chosen)
            ],
            "matched": [
                {
                    "group": m.group,
                    "slot": m.slot,
                    "detection": m.detection,
                    "pos_err": round(m.pos_err, 4),
                    "theta_err": round(m.theta_err, 4),
                }
                for m in self.matched
            ],
            "missing": [
                {"group": g, "slot": s, "shape": shape} for g, s, shape in self.missing
            ],
            "misplaced": [
                {
                    "group": m.group,
                    "slot": m.slot,
                    "detection": m.detection,
                    "pos_err": round(m.pos_err, 4),
                    "theta_err": round(m.theta_err, 4),
                }
                for m in self.misplaced
            ],
            "extra": list(self.extra),
        }


def _compatible(slot: PartSlot, det: Detection) -> bool:
    if slot.shape != det.shape:
        return False
    if slot.spec_id and det.spec_id and slot.spec_id != det.spec_id:
        return False
    return True


@dataclass
class _Hypothesis:
    rotation_deg: float
    cos: float
    sin: float
    anchor_slot: np.ndarray  # slot position the transform pivots on
    anchor_det: np.ndarray

    def apply(self, x: float, y: float) -> tuple[float, float]:
        dx = x - self.anchor_slot[0]
        dy = y - self.anchor_slot[1]
        return (
            self.cos * dx - self.sin * dy + self.anchor_det[0],
            self.sin * dx + self.cos * dy + self.anchor_det[1],
        )


def _score_hypothesis(hyp: _Hypothesis, template: CompositionTemplate,
                      detections: list[Detection], tol: ComposeTolerance,
                      catalog: Catalog):
    """Greedy slot-detection assignment under one rigid transform."""
    used: set[int] = set()
    chosen: list[int] = []
    matched: list[SlotMatch] = []
    missing: list[tuple[int, int, str]] = []
    misplaced: list[SlotMatch] = []
    total_matched = 0
    total_residual = 0.0
    catch = MISPLACED_CATCH_FACTOR * tol.pos_tol

    for gi, group in enumerate(template.parts):
        best_alt = None
        for ai, alt in enumerate(group.alternatives):
            alt_used: set[int] = set()
            alt_matched: list[SlotMatch] = []
            alt_missing: list[tuple[int, int, str]] = []
            alt_misplaced: list[SlotMatch] = []
            for si, slot in enumerate(alt):
                ex, ey = hyp.apply(slot.cx, slot.cy)
                etheta = slot.theta_deg + hyp.rotation_deg
                k = catalog.symmetry_of(slot.shape)
                best = None
                for di, det in enumerate(detections):
                    if di in used or di in alt_used or not _compatible(slot, det):
                        continue
                    pos_err = math.hypot(det.pose.cx - ex, det.pose.cy - ey)
                    if pos_err > catch:
                        continue
                    theta_err = orientation_error_deg(det.pose.theta, etheta, k)
                    key = (pos_err > tol.pos_tol or theta_err > tol.theta_tol, pos_err, di)
                    if best is None or key < best[0]:
                        best = (key, di, pos_err, theta_err)
                if best is None:
                    alt_missing.append((gi, si, slot.shape))
                    continue
                _, di, pos_err, theta_err = best
                alt_used.add(di)
                m = SlotMatch(gi, si, di, pos_err, theta_err)
                if pos_err <= tol.pos_tol and theta_err <= tol.theta_tol:
                    alt_matched.append(m)
                else:
                    alt_misplaced.append(m)
            score = (
                len(alt_matched),
                -len(alt_missing),
                -sum(m.pos_err for m in alt_matched + alt_misplaced),
                -ai,
            )
            if best_alt is None or score > best_alt[0]:
                best_alt = (score, ai, alt_used, alt_matched, alt_missing, alt_misplaced)
        _, ai, alt_used, alt_matched, alt_missing, alt_misplaced = best_alt
        used |= alt_used
        chosen.append(ai)
        matched += alt_matched
        missing += alt_missing
        misplaced += alt_misplaced
        total_matched += len(alt_matched)
        total_residual += sum(m.pos_err for m in alt_matched + alt_misplaced)

    extra = tuple(i for i in range(len(detections)) if i not in used)
    complete = not missing and not misplaced
    result = CompositionResult(
        complete=complete,
        chosen=tuple(chosen),
        matched=tuple(matched),
        missing=tuple(missing),
        misplaced=tuple(misplaced),
        extra=extra,
    )
    return (total_matched, -total_residual), result


def check_composition(
    detections: list[Detection],
    template_id: str,
    tol: ComposeTolerance = ComposeTolerance(),
    catalog: Catalog | None = None,
) -> CompositionResult:
    """Decide whether the detections realize the template.

    The template-to-scene rigid transform is found by exhaustive seeding:
    every class-compatible (slot, detection) pair (times the slot shape's
    symmetry rotations) hypothesizes a transform, each hypothesis is scored
    by matched slot count then total residual, and the best one is reported.
    """
    cat = catalog or default_catalog()
    template = get_template(template_id)

    hypotheses: list[_Hypothesis] = []
    for group in template.parts:
        for alt in group.alternatives:
            for slot in alt:
                k = cat.symmetry_of(slot.shape)
                for det in detections:
                    if not _compatible(slot, det):
                        continue
                    for j in range(k):
                        phi = det.pose.theta - slot.theta_deg + j * (360.0 / k)
                        t = math.radians(phi)
                        hypotheses.append(
                            _Hypothesis(
                                rotation_deg=phi,
                                cos=math.cos(t),
                                sin=math.sin(t),
                                anchor_slot=np.array([slot.cx, slot.cy]),
                                anchor_det=np.array([det.pose.cx, det.pose.cy]),
                            )
                        )
    if not hypotheses:
        # Nothing to anchor a transform on: report everything missing.
        missing = tuple(
            (gi, si, slot.shape)
            for gi, group in enumerate(template.parts)
            for si, slot in enumerate(group.alternatives[0])
        )
        return CompositionResult(
            complete=False,
            chosen=tuple(0 for _ in template.parts),
            matched=(),
            missing=missing,
            misplaced=(),
            extra=tuple(range(len(detections))),
        )

    best_key = None
    best_result = None
    for hyp in hypotheses:
        key, result = _score_hypothesis(hyp, template, detections, tol, cat)
        if best_key is None or key > best_key:
            best_key = key
            best_result = result
    return best_result


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------

def _group_label(template: CompositionTemplate, gi: int) -> str:
    return template.parts[gi].name or f"part {gi + 1}"


def _slot_label(template: CompositionTemplate, result_chosen: tuple[int, ...],
                gi: int, si: int) -> str:
    slot = template.parts[gi].alternatives[result_chosen[gi]][si]
    return slot.name or f"{_group_label(template, gi)} tile {si + 1}"


def feedback(result: CompositionResult, template_id: str,
             tol: ComposeTolerance = ComposeTolerance()) -> list[str]:
    """Presentation-side event strings derived from a check result."""
    template = get_template(template_id)
    if result.complete:
        return ["composition complete"]
    events: list[str] = []
    for m in result.matched:
        events.append(f"part placed: {_slot_label(template, result.chosen, m.group, m.slot)}")
    for gi, si, _shape in result.missing:
        events.append(f"part missing: {_group_label(template, gi)}")
    for m in result.misplaced:
        label = _slot_label(template, result.chosen, m.group, m.slot)
        if m.theta_err > tol.theta_tol:
            events.append(f"nudge: rotate {label} ~{round(m.theta_err)}°")
        if m.pos_err > tol.pos_tol:
            events.append(f"nudge: move {label} ~{round(m.pos_err)}px")
    for _ in result.extra:
        events.append("extra tile on the mat")
    return events
