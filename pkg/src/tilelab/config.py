"""Pipeline configuration: one JSON document wiring every stage's knobs.

Unknown fields are rejected so a typo in a config file fails loudly at load
time rather than silently running with defaults.
"""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .catalog import Catalog, default_catalog
from .compose import ComposeTolerance
from .encoding import AnchorGrid, AnchorLevel, LossConfig, build_anchors
from .refdetect import SegmentParams


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AnchorLevelConfig(_StrictModel):
    stride: int = Field(ge=1)
    anchor_side: float = Field(gt=0)


class LossSection(_StrictModel):
    alpha: float = 0.25
    gamma: float = 2.0
    regression_weight: float = 1.0


class DecodeSection(_StrictModel):
    score_thresh: float = Field(default=0.5, gt=0, le=1)
    nms_iou: float = Field(default=0.45, ge=0, le=1)
    max_out: int = Field(default=64, ge=1)
    axis_aligned_nms: bool = False


class SegmentSection(_StrictModel):
    color_tolerance: float = 40.0
    min_region_area: float = 150.0
    erosion_radius: int = 0
    overlap_accept: float = 0.6


class ComposeSection(_StrictModel):
    pos_tol: float = 8.0
    theta_tol: float = 10.0


class PipelineConfig(_StrictModel):
    version: int = 1
    image_size: tuple[int, int] = (480, 480)
    catalog_path: str | None = None
    anchor_levels: list[AnchorLevelConfig] = Field(
        default_factory=lambda: [
            AnchorLevelConfig(stride=16, anchor_side=20.0),
            AnchorLevelConfig(stride=32, anchor_side=40.0),
            AnchorLevelConfig(stride=64, anchor_side=80.0),
        ]
    )
    loss: LossSection = Field(default_factory=LossSection)
    decode: DecodeSection = Field(default_factory=DecodeSection)
    segment: SegmentSection = Field(default_factory=SegmentSection)
    compose: ComposeSection = Field(default_factory=ComposeSection)
    seed: int = 0

    @field_validator("version")
    @classmethod
    def _version_supported(cls, v: int) -> int:
        if v != 1:
            raise ValueError(f"unsupported config version {v}")
        return v

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def catalog(self) -> Catalog:
        if self.catalog_path:
            return Catalog.load(self.catalog_path)
        return default_catalog()

    def grid(self) -> AnchorGrid:
        levels = tuple(AnchorLevel(l.stride, l.anchor_side) for l in self.anchor_levels)
        return build_anchors(self.image_size, levels)

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha=self.loss.alpha,
            gamma=self.loss.gamma,
            regression_weight=self.loss.regression_weight,
        )

    def segment_params(self) -> SegmentParams:
        return SegmentParams(
            color_tolerance=self.segment.color_tolerance,
            min_region_area=self.segment.min_region_area,
            erosion_radius=self.segment.erosion_radius,
            overlap_accept=self.segment.overlap_accept,
        )

    def compose_tolerance(self) -> ComposeTolerance:
        return ComposeTolerance(
            pos_tol=self.compose.pos_tol, theta_tol=self.compose.theta_tol
        )
