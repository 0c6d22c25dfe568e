"""Pydantic request/response models for the HTTP service.

These mirror the package's JSON wire formats one to one; the service layer
converts between them and the core dataclasses.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..scenegen import (
    CompositionRecord,
    GlobalJitter,
    Photometrics,
    SceneSpec,
    Shadow,
    TilePose,
)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TilePoseModel(StrictModel):
    spec_id: str
    cx: float
    cy: float
    theta_deg: float


class ShadowModel(StrictModel):
    cx: float
    cy: float
    rx: float = Field(gt=0)
    ry: float = Field(gt=0)
    theta_deg: float = 0.0
    strength: float = 0.2


class PhotometricsModel(StrictModel):
    brightness_gain: float = 1.0
    gamma: float = 1.0
    noise_sigma: float = 0.0
    shadow: ShadowModel | None = None


class GlobalJitterModel(StrictModel):
    scale: float = 1.0
    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)


class CompositionRecordModel(StrictModel):
    template_id: str
    alternatives: list[int]


class SceneSpecModel(StrictModel):
    image_size: tuple[int, int] = (480, 480)
    tiles: list[TilePoseModel] = Field(default_factory=list)
    photometrics: PhotometricsModel = Field(default_factory=PhotometricsModel)
    global_jitter: GlobalJitterModel = Field(default_factory=GlobalJitterModel)
    rng_seed: int = 0
    composition: CompositionRecordModel | None = None

    def to_scene(self) -> SceneSpec:
        ph = self.photometrics
        shadow = (
            None
            if ph.shadow is None
            else Shadow(
                cx=ph.shadow.cx,
                cy=ph.shadow.cy,
                rx=ph.shadow.rx,
                ry=ph.shadow.ry,
                theta_deg=ph.shadow.theta_deg,
                strength=ph.shadow.strength,
            )
        )
        return SceneSpec(
            image_size=tuple(self.image_size),
            tiles=tuple(
                TilePose(t.spec_id, t.cx, t.cy, t.theta_deg) for t in self.tiles
            ),
            photometrics=Photometrics(
                brightness_gain=ph.brightness_gain,
                gamma=ph.gamma,
                noise_sigma=ph.noise_sigma,
                shadow=shadow,
            ),
            global_jitter=GlobalJitter(
                scale=self.global_jitter.scale,
                rotation_deg=self.global_jitter.rotation_deg,
                translation=tuple(self.global_jitter.translation),
            ),
            rng_seed=self.rng_seed,
            composition=None
            if self.composition is None
            else CompositionRecord(
                self.composition.template_id, tuple(self.composition.alternatives)
            ),
        )


class DetectionModel(StrictModel):
    shape: str
    spec_id: str | None
    score: float
    cx: float
    cy: float
    theta_deg: float
    orientation_bin: int
    vertices: list[tuple[float, float]]


class DetectionsResponse(StrictModel):
    detections: list[DetectionModel]


class ToleranceModel(StrictModel):
    pos_tol: float = Field(default=8.0, gt=0)
    theta_tol: float = Field(default=10.0, gt=0)


class ComposeCheckRequest(StrictModel):
    template_id: str
    scene: SceneSpecModel | None = None
    detections: list[DetectionModel] | None = None
    tolerances: ToleranceModel | None = None


class SlotRefModel(StrictModel):
    group: int
    slot: int
    detection: int | None = None
    shape: str | None = None
    pos_err: float | None = None
    theta_err: float | None = None


class ChosenAlternativeModel(StrictModel):
    group: int
    name: str | None
    alternative: int


class ComposeCheckResponse(StrictModel):
    complete: bool
    chosen: list[ChosenAlternativeModel]
    matched: list[SlotRefModel]
    missing: list[SlotRefModel]
    misplaced: list[SlotRefModel]
    extra: list[int]
    feedback: list[str]
