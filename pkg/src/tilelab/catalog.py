"""Tile catalog: the set of physical tile specs a scene can contain.

Colors follow the game-mat look (dark-green quarter circles, red right
triangles, green rectangles...) and are spaced far apart in RGB so color
segmentation can assign pixels unambiguously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    OrientedBox,
    SHAPE_CLASSES,
    polygon_of,
    rotated_iou,
)

BACKGROUND_COLOR = (205, 205, 205)

# Minimum pairwise RGB distance between distinct specs (and the background)
# required for unambiguous nearest-color segmentation.
MIN_COLOR_SEPARATION = 60.0


class CatalogError(ValueError):
    """Invalid tile spec or catalog."""


@dataclass(frozen=True)
class TileSpec:
    """One physical tile kind: shape, color, size, and rotational symmetry."""

    id: str
    shape: str
    color: tuple[int, int, int]
    size: tuple[float, float]
    symmetry: int = 1

    def __post_init__(self):
        if self.shape not in SHAPE_CLASSES:
            raise CatalogError(f"unknown shape class {self.shape!r}")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise CatalogError(f"color must be an RGB triple in 0..255: {self.color!r}")
        w, h = self.size
        if w <= 0 or h <= 0:
            raise CatalogError(f"sizes must be positive: {self.size!r}")
        if self.symmetry < 1:
            raise CatalogError("symmetry order must be >= 1")
        if self.symmetry > 1:
            # The declared symmetry must actually hold for the shape model at
            # this aspect ratio (e.g. a 4-fold "square" needs w == h).
            a = polygon_of(self.shape, OrientedBox(0, 0, w, h, 0.0))
            b = polygon_of(self.shape, OrientedBox(0, 0, w, h, 360.0 / self.symmetry))
            if abs(rotated_iou(a, b) - 1.0) > 1e-6:
                raise CatalogError(
                    f"spec {self.id!r}: shape {self.shape} at size {self.size} is not "
                    f"{self.symmetry}-fold symmetric"
                )

    @property
    def class_id(self) -> int:
        return SHAPE_CLASSES.index(self.shape) + 1


def color_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


@dataclass(frozen=True)
class Catalog:
    specs: tuple[TileSpec, ...]

    def __post_init__(self):
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate spec ids in catalog")
        for i, a in enumerate(self.specs):
            for b in self.specs[i + 1:]:
                if color_distance(a.color, b.color) < MIN_COLOR_SEPARATION:
                    raise CatalogError(
                        f"specs {a.id!r} and {b.id!r} have colors closer than "
                        f"{MIN_COLOR_SEPARATION} RGB units"
                    )

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def get(self, spec_id: str) -> TileSpec:
        for s in self.specs:
            if s.id == spec_id:
                return s
        raise KeyError(f"unknown tile spec {spec_id!r}")

    def spec_for_shape(self, shape: str) -> TileSpec:
        """First catalog spec with the given shape (used by the tensor decoder)."""
        for s in self.specs:
            if s.shape == shape:
                return s
        raise KeyError(f"no catalog spec with shape {shape!r}")

    def symmetry_of(self, shape: str) -> int:
        try:
            return self.spec_for_shape(shape).symmetry
        except KeyError:
            return 1

    @property
    def num_classes(self) -> int:
        """Foreground class count. Classes are shape classes, fixed order."""
        return len(SHAPE_CLASSES)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "specs": [
                {
                    "id": s.id,
                    "shape": s.shape,
                    "color": list(s.color),
                    "size": list(s.size),
                    "symmetry": s.symmetry,
                }
                for s in self.specs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Catalog":
        try:
            specs = tuple(
                TileSpec(
                    id=e["id"],
                    shape=e["shape"],
                    color=tuple(e["color"]),
                    size=tuple(e["size"]),
                    symmetry=int(e.get("symmetry", 1)),
                )
                for e in d["specs"]
            )
        except (KeyError, TypeError) as exc:
            raise CatalogError(f"malformed catalog document: {exc}") from exc
        return cls(specs)

    @classmethod
    def load(cls, path: str | Path) -> "Catalog":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def default_catalog() -> Catalog:
    """Six tile kinds sized so 6-10 of them pack densely on a 480x480 mat.

    Colors are chosen so the whole rendered palette (fills, 60% border
    shades, and the playmat) stays dozens of RGB units apart even after
    moderate lighting shifts.
    """
    return Catalog(
        (
            TileSpec("square_blue", "square", (35, 90, 205), (50.0, 50.0), symmetry=4),
            TileSpec("rect_green", "rectangle", (110, 220, 60), (70.0, 35.0), symmetry=2),
            TileSpec("tri_red", "right_triangle", (230, 60, 50), (55.0, 55.0)),
            TileSpec("tri_yellow", "equilateral_triangle", (245, 200, 40), (55.0, 55.0), symmetry=3),
            TileSpec("semi_purple", "semicircle", (150, 60, 190), (70.0, 35.0)),
            TileSpec("quarter_dkgreen", "quarter_circle", (10, 110, 55), (45.0, 45.0)),
        )
    )
