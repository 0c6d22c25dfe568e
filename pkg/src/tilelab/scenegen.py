"""Synthetic bird's-eye-view scene sampling and pixel-exact annotation.

A SceneSpec fully determines every image byte and every annotation byte:
tile poses live in a "scene frame", a global similarity jitter (about the
image center) models small camera pose/zoom variation, and photometric
settings model lighting. Annotations are derived analytically from the
jittered poses, never from pixels.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog, TileSpec, default_catalog
from .geometry import (
    DEFAULT_BINS,
    OrientationBins,
    OrientedBox,
    Polygon,
    bin_of,
    canonical_theta,
    intersection_area,
    polygon_of,
)

# Maximum allowed pairwise overlap between tiles, as a fraction of the
# smaller tile's area. Contact is allowed; real tiles cannot interpenetrate.
MAX_OVERLAP_FRACTION = 0.01


class SceneError(ValueError):
    """Invalid scene specification or generation failure."""


def derive_seed(seed: int, *labels) -> int:
    """Stable 63-bit sub-seed from a root seed and labels (order matters)."""
    key = ":".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


# ---------------------------------------------------------------------------
# Scene types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Shadow:
    """Elliptical soft shadow: pixels inside are darkened up to `strength`."""

    cx: float
    cy: float
    rx: float
    ry: float
    theta_deg: float = 0.0
    strength: float = 0.2

    def __post_init__(self):
        if self.rx <= 0 or self.ry <= 0:
            raise SceneError("shadow radii must be positive")
        if not 0.0 < self.strength <= 0.6:
            raise SceneError("shadow strength must be in (0, 0.6]")


@dataclass(frozen=True)
class Photometrics:
    brightness_gain: float = 1.0
    gamma: float = 1.0
    noise_sigma: float = 0.0
    shadow: Shadow | None = None

    def __post_init__(self):
        if not 0.7 <= self.brightness_gain <= 1.3:
            raise SceneError("brightness_gain must be in [0.7, 1.3]")
        if not 0.8 <= self.gamma <= 1.25:
            raise SceneError("gamma must be in [0.8, 1.25]")
        if not 0.0 <= self.noise_sigma <= 10.0:
            raise SceneError("noise_sigma must be in [0, 10] 8-bit units")

    @property
    def is_neutral(self) -> bool:
        return (
            self.brightness_gain == 1.0
            and self.gamma == 1.0
            and self.noise_sigma == 0.0
            and self.shadow is None
        )


@dataclass(frozen=True)
class GlobalJitter:
    """Similarity transform about the image center: scale, rotate, translate."""

    scale: float = 1.0
    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0.9 <= self.scale <= 1.1:
            raise SceneError("jitter scale must be in [0.9, 1.1]")

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.rotation_deg == 0.0 and self.translation == (0.0, 0.0)

    def matrix(self, image_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Affine (A, t) with p' = A @ p + t, rotating/scaling about image center."""
        t = math.radians(self.rotation_deg)
        a = self.scale * np.array(
            [[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]]
        )
        c0 = np.array([image_size[0] / 2.0, image_size[1] / 2.0])
        shift = c0 - a @ c0 + np.asarray(self.translation, float)
        return a, shift

    def apply(self, points: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
        a, t = self.matrix(image_size)
        return np.asarray(points, float) @ a.T + t


@dataclass(frozen=True)
class TilePose:
    """A placed tile: which spec, where, and at what orientation.

    Width/height always come from the spec, so only the pose is stored.
    """

    spec_id: str
    cx: float
    cy: float
    theta_deg: float

    def box(self, spec: TileSpec) -> OrientedBox:
        w, h = spec.size
        return OrientedBox(self.cx, self.cy, w, h, self.theta_deg)


@dataclass(frozen=True)
class CompositionRecord:
    """Which template and which alternative per part group a scene realizes."""

    template_id: str
    alternatives: tuple[int, ...]


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple[int, int] = (480, 480)
    tiles: tuple[TilePose, ...] = ()
    photometrics: Photometrics = field(default_factory=Photometrics)
    global_jitter: GlobalJitter = field(default_factory=GlobalJitter)
    rng_seed: int = 0
    composition: CompositionRecord | None = None

    def __post_init__(self):
        w, h = self.image_size
        if w < 16 or h < 16:
            raise SceneError("image_size too small")

    def to_dict(self) -> dict:
        d = {
            "image_size": list(self.image_size),
            "tiles": [
                {"spec_id": t.spec_id, "cx": t.cx, "cy": t.cy, "theta_deg": t.theta_deg}
                for t in self.tiles
            ],
            "photometrics": {
                "brightness_gain": self.photometrics.brightness_gain,
                "gamma": self.photometrics.gamma,
                "noise_sigma": self.photometrics.noise_sigma,
                "shadow": None
                if self.photometrics.shadow is None
                else {
                    "cx": self.photometrics.shadow.cx,
                    "cy": self.photometrics.shadow.cy,
                    "rx": self.photometrics.shadow.rx,
                    "ry": self.photometrics.shadow.ry,
                    "theta_deg": self.photometrics.shadow.theta_deg,
                    "strength": self.photometrics.shadow.strength,
                },
            },
            "global_jitter": {
                "scale": self.global_jitter.scale,
                "rotation_deg": self.global_jitter.rotation_deg,
                "translation": list(self.global_jitter.translation),
            },
            "rng_seed": self.rng_seed,
        }
        if self.composition is not None:
            d["composition"] = {
                "template_id": self.composition.template_id,
                "alternatives": list(self.composition.alternatives),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            ph = d.get("photometrics", {})
            shadow = ph.get("shadow")
            gj = d.get("global_jitter", {})
            comp = d.get("composition")
            return cls(
                image_size=tuple(d["image_size"]),
                tiles=tuple(
                    TilePose(t["spec_id"], float(t["cx"]), float(t["cy"]), float(t["theta_deg"]))
                    for t in d.get("tiles", [])
                ),
                photometrics=Photometrics(
                    brightness_gain=float(ph.get("brightness_gain", 1.0)),
                    gamma=float(ph.get("gamma", 1.0)),
                    noise_sigma=float(ph.get("noise_sigma", 0.0)),
                    shadow=None
                    if not shadow
                    else Shadow(
                        cx=float(shadow["cx"]),
                        cy=float(shadow["cy"]),
                        rx=float(shadow["rx"]),
                        ry=float(shadow["ry"]),
                        theta_deg=float(shadow.get("theta_deg", 0.0)),
                        strength=float(shadow.get("strength", 0.2)),
                    ),
                ),
                global_jitter=GlobalJitter(
                    scale=float(gj.get("scale", 1.0)),
                    rotation_deg=float(gj.get("rotation_deg", 0.0)),
                    translation=tuple(gj.get("translation", (0.0, 0.0))),
                ),
                rng_seed=int(d.get("rng_seed", 0)),
                composition=None
                if comp is None
                else CompositionRecord(comp["template_id"], tuple(comp["alternatives"])),
            )
        except (KeyError, TypeError) as exc:
            raise SceneError(f"malformed scene document: {exc}") from exc


@dataclass(frozen=True)
class Annotation:
    """Pixel-exact label for one tile, in image coordinates (post jitter)."""

    spec_id: str
    shape: str
    cx: float
    cy: float
    theta_deg: float  # canonical, in [0, 360/symmetry)
    orientation_bin: int
    aabb: tuple[float, float, float, float]
    vertices: Polygon
    box: OrientedBox  # full jittered pose the vertices derive from

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "shape": self.shape,
            "cx": self.cx,
            "cy": self.cy,
            "theta_deg": self.theta_deg,
            "orientation_bin": self.orientation_bin,
            "aabb": list(self.aabb),
            "vertices": [[float(x), float(y)] for x, y in self.vertices.vertices],
        }


def annotation_from_dict(d: dict, catalog: Catalog) -> Annotation:
    verts = Polygon(np.asarray(d["vertices"], float))
    spec = catalog.get(d["spec_id"]) if d.get("spec_id") else None
    w, h = spec.size if spec else (1.0, 1.0)
    return Annotation(
        spec_id=d["spec_id"],
        shape=d["shape"],
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        theta_deg=float(d["theta_deg"]),
        orientation_bin=int(d["orientation_bin"]),
        aabb=tuple(d["aabb"]),
        vertices=verts,
        box=OrientedBox(float(d["cx"]), float(d["cy"]), w, h, float(d["theta_deg"])),
    )


# ---------------------------------------------------------------------------
# Sampling configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhotometricRanges:
    gain: tuple[float, float] = (0.7, 1.3)
    gamma: tuple[float, float] = (0.8, 1.25)
    noise_sigma: tuple[float, float] = (0.0, 10.0)
    shadow_prob: float = 0.0
    shadow_strength: tuple[float, float] = (0.1, 0.3)


@dataclass(frozen=True)
class JitterRanges:
    scale: tuple[float, float] = (0.9, 1.1)
    rotation_deg: tuple[float, float] = (-10.0, 10.0)
    translation: tuple[float, float] = (-8.0, 8.0)


@dataclass(frozen=True)
class CompositionJitter:
    pos_sigma: float = 0.0
    theta_sigma: float = 0.0


@dataclass(frozen=True)
class SceneGenConfig:
    catalog: Catalog = field(default_factory=default_catalog)
    image_size: tuple[int, int] = (480, 480)
    max_tiles: int = 8
    photometrics: PhotometricRanges | None = None  # None -> neutral
    jitter: JitterRanges | None = None  # None -> identity
    margin: float = 2.0
    max_retries: int = 200
    composition_jitter: CompositionJitter = field(default_factory=lambda: CompositionJitter(1.5, 2.0))


def _sample_photometrics(rng: np.random.Generator, ranges: PhotometricRanges | None,
                         image_size: tuple[int, int]) -> Photometrics:
    if ranges is None:
        return Photometrics()
    shadow = None
    # Draw in a fixed order so the stream is stable regardless of outcomes.
    gain = float(rng.uniform(*ranges.gain))
    gamma = float(rng.uniform(*ranges.gamma))
    noise = float(rng.uniform(*ranges.noise_sigma))
    u = float(rng.uniform())
    if u < ranges.shadow_prob:
        w, h = image_size
        shadow = Shadow(
            cx=float(rng.uniform(0.2 * w, 0.8 * w)),
            cy=float(rng.uniform(0.2 * h, 0.8 * h)),
            rx=float(rng.uniform(0.2 * w, 0.5 * w)),
            ry=float(rng.uniform(0.2 * h, 0.5 * h)),
            theta_deg=float(rng.uniform(0, 180)),
            strength=float(rng.uniform(*ranges.shadow_strength)),
        )
    return Photometrics(gain, gamma, noise, shadow)


def _sample_jitter(rng: np.random.Generator, ranges: JitterRanges | None) -> GlobalJitter:
    if ranges is None:
        return GlobalJitter()
    return GlobalJitter(
        scale=float(rng.uniform(*ranges.scale)),
        rotation_deg=float(rng.uniform(*ranges.rotation_deg)),
        translation=(
            float(rng.uniform(*ranges.translation)),
            float(rng.uniform(*ranges.translation)),
        ),
    )


# ---------------------------------------------------------------------------
# Scene sampling
# ---------------------------------------------------------------------------

def jittered_box(tile: TilePose, spec: TileSpec, jitter: GlobalJitter,
                 image_size: tuple[int, int]) -> OrientedBox:
    """Tile pose in image coordinates after the global similarity jitter.

    A similarity transform composes cleanly with the pose: the center maps
    through the transform, the extents scale uniformly, and the rotation
    adds the jitter rotation.
    """
    w, h = spec.size
    center = jitter.apply(np.array([[tile.cx, tile.cy]]), image_size)[0]
    return OrientedBox(
        float(center[0]),
        float(center[1]),
        w * jitter.scale,
        h * jitter.scale,
        tile.theta_deg + jitter.rotation_deg,
    )


def _in_bounds(poly: Polygon, image_size: tuple[int, int], margin: float) -> bool:
    x0, y0, x1, y1 = poly.aabb()
    w, h = image_size
    return x0 >= margin and y0 >= margin and x1 <= w - margin and y1 <= h - margin


def _overlap_ok(poly: Polygon, area: float, placed: list[tuple[Polygon, float]]) -> bool:
    x0, y0, x1, y1 = poly.aabb()
    for other, other_area in placed:
        ox0, oy0, ox1, oy1 = other.aabb()
        if ox0 > x1 or ox1 < x0 or oy0 > y1 or oy1 < y0:
            continue
        limit = MAX_OVERLAP_FRACTION * min(area, other_area)
        if intersection_area(poly, other) > limit:
            return False
    return True


def check_dense_packing(scene: SceneSpec, catalog: Catalog) -> bool:
    """True when every tile pair overlaps at most 1% of the smaller tile."""
    polys: list[tuple[Polygon, float]] = []
    for tile in scene.tiles:
        spec = catalog.get(tile.spec_id)
        poly = polygon_of(spec.shape, jittered_box(tile, spec, scene.global_jitter, scene.image_size))
        if not _overlap_ok(poly, poly.area, polys):
            return False
        polys.append((poly, poly.area))
    return True


def sample_scene(seed: int, config: SceneGenConfig | None = None) -> SceneSpec:
    """Sample a dense random scene; deterministic for a given (seed, config).

    Tiles are placed by rejection sampling; each tile gets at most
    `config.max_retries` draws, after which it is skipped, so the result may
    hold fewer tiles than targeted but never violates the overlap invariant.
    """
    cfg = config or SceneGenConfig()
    if len(cfg.catalog) == 0:
        raise SceneError("catalog is empty")
    if cfg.max_tiles < 1:
        raise SceneError("max_tiles must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "scene"))
    jitter = _sample_jitter(rng, cfg.jitter)
    photo = _sample_photometrics(rng, cfg.photometrics, cfg.image_size)
    n_target = int(rng.integers(1, cfg.max_tiles + 1))
    w, h = cfg.image_size

    placed: list[tuple[Polygon, float]] = []
    tiles: list[TilePose] = []
    specs = list(cfg.catalog)
    for _ in range(n_target):
        for _attempt in range(cfg.max_retries):
            spec = specs[int(rng.integers(0, len(specs)))]
            half = math.hypot(*spec.size) / 2.0 + cfg.margin
            tile = TilePose(
                spec_id=spec.id,
                cx=float(rng.uniform(half, w - half)),
                cy=float(rng.uniform(half, h - half)),
                theta_deg=float(rng.uniform(0.0, 360.0)),
            )
            poly = polygon_of(spec.shape, jittered_box(tile, spec, jitter, cfg.image_size))
            if not _in_bounds(poly, cfg.image_size, cfg.margin):
                continue
            if _overlap_ok(poly, poly.area, placed):
                placed.append((poly, poly.area))
                tiles.append(tile)
                break

    return SceneSpec(
        image_size=cfg.image_size,
        tiles=tuple(tiles),
        photometrics=photo,
        global_jitter=jitter,
        rng_seed=seed,
    )


def sample_composition(
    template_id: str,
    jitter: CompositionJitter = CompositionJitter(),
    seed: int = 0,
    config: SceneGenConfig | None = None,
    alternatives: dict[int, int] | None = None,
) -> SceneSpec:
    """Sample a scene realizing a composition template.

    Slots are placed at the template's relative poses (randomly positioned
    and rotated as a whole within the image), plus per-tile Gaussian jitter.
    The chosen alternative per part group is recorded on the SceneSpec.
    Large per-tile jitter can break the dense-packing invariant; a few
    placements are retried, then the jittered scene is returned as-is.
    """
    from .compose import get_template  # late import: compose builds on scenegen types

    cfg = config or SceneGenConfig()
    template = get_template(template_id)
    rng = np.random.default_rng(derive_seed(seed, "composition", template_id))
    w, h = cfg.image_size

    chosen = tuple(
        alternatives.get(gi, int(rng.integers(0, len(group.alternatives))))
        if alternatives is not None
        else int(rng.integers(0, len(group.alternatives)))
        for gi, group in enumerate(template.parts)
    )
    slots = [
        slot
        for gi, group in enumerate(template.parts)
        for slot in group.alternatives[chosen[gi]]
    ]
    radius = template.extent_radius(cfg.catalog) + 4.0 * jitter.pos_sigma + cfg.margin

    best: SceneSpec | None = None
    for _attempt in range(10):
        phi = float(rng.uniform(0.0, 360.0))
        cx0 = float(rng.uniform(radius, w - radius)) if w > 2 * radius else w / 2.0
        cy0 = float(rng.uniform(radius, h - radius)) if h > 2 * radius else h / 2.0
        t = math.radians(phi)
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        tiles = []
        for slot in slots:
            rel = rot @ np.array([slot.cx, slot.cy])
            dx, dy = rng.normal(0.0, jitter.pos_sigma, size=2) if jitter.pos_sigma > 0 else (0.0, 0.0)
            dth = float(rng.normal(0.0, jitter.theta_sigma)) if jitter.theta_sigma > 0 else 0.0
            spec_id = slot.spec_id or cfg.catalog.spec_for_shape(slot.shape).id
            tiles.append(
                TilePose(
                    spec_id=spec_id,
                    cx=cx0 + float(rel[0]) + float(dx),
                    cy=cy0 + float(rel[1]) + float(dy),
                    theta_deg=float(slot.theta_deg + phi + dth),
                )
            )
        scene = SceneSpec(
            image_size=cfg.image_size,
            tiles=tuple(tiles),
            photometrics=_sample_photometrics(rng, cfg.photometrics, cfg.image_size),
            global_jitter=GlobalJitter(),
            rng_seed=seed,
            composition=CompositionRecord(template_id, chosen),
        )
        best = scene
        if check_dense_packing(scene, cfg.catalog):
            return scene
    return best  # jitter too large for dense packing; documented best effort


def annotate(scene: SceneSpec, catalog: Catalog | None = None,
             bins: OrientationBins = DEFAULT_BINS) -> list[Annotation]:
    """Exact labels for every tile, derived from poses (not pixels)."""
    cat = catalog or default_catalog()
    out = []
    for tile in scene.tiles:
        spec = cat.get(tile.spec_id)
        box = jittered_box(tile, spec, scene.global_jitter, scene.image_size)
        theta_c = canonical_theta(box.theta, spec.symmetry)
        canon_box = OrientedBox(box.cx, box.cy, box.w, box.h, theta_c)
        poly = polygon_of(spec.shape, canon_box)
        out.append(
            Annotation(
                spec_id=spec.id,
                shape=spec.shape,
                cx=canon_box.cx,
                cy=canon_box.cy,
                theta_deg=theta_c,
                orientation_bin=bin_of(theta_c, bins),
                aabb=poly.aabb(),
                vertices=poly,
                box=canon_box,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    version: int
    seed: int
    count: int
    entries: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "count": self.count,
            "entries": list(self.entries),
        }


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def annotations_to_dict(image_name: str, image_size: tuple[int, int],
                        annotations: list[Annotation]) -> dict:
    return {
        "image": image_name,
        "width": int(image_size[0]),
        "height": int(image_size[1]),
        "tiles": [a.to_dict() for a in annotations],
    }


def _generate_one(index: int, seed: int, mode: str, cfg: SceneGenConfig,
                  template_ids: list[str]) -> tuple[SceneSpec, list[Annotation]]:
    img_seed = derive_seed(seed, "image", index)
    pick = mode
    if mode == "mixed":
        pick = "compositions" if derive_seed(img_seed, "mode") % 2 == 0 else "random"
    if pick == "compositions":
        if not template_ids:
            raise SceneError("no composition templates registered")
        template_id = template_ids[index % len(template_ids)]
        scene = sample_composition(template_id, cfg.composition_jitter, seed=img_seed, config=cfg)
    else:
        scene = sample_scene(img_seed, cfg)
    return scene, annotate(scene, cfg.catalog)


def generate_dataset(
    n: int,
    seed: int,
    out_dir: str | Path,
    mode: str = "random",
    config: SceneGenConfig | None = None,
    workers: int = 1,
) -> DatasetManifest:
    """Write n images + annotations + scene files and a manifest.

    Each image draws its own seed from (seed, index), so generation order
    (and worker scheduling) cannot change any output byte. Paths in the
    manifest are relative to out_dir.
    """
    from .compose import template_ids as registered_template_ids
    from .render import rasterize, save_png

    if mode not in ("random", "compositions", "mixed"):
        raise SceneError(f"unknown dataset mode {mode!r}")
    cfg = config or SceneGenConfig()
    out = Path(out_dir)
    for sub in ("images", "annotations", "scenes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    tids = sorted(registered_template_ids())

    def job(i: int) -> dict:
        scene, anns = _generate_one(i, seed, mode, cfg, tids)
        stem = f"{i:06d}"
        image_rel = f"images/{stem}.png"
        ann_rel = f"annotations/{stem}.json"
        scene_rel = f"scenes/{stem}.json"
        save_png(rasterize(scene, cfg.catalog), out / image_rel)
        (out / ann_rel).write_text(
            dumps_canonical(annotations_to_dict(image_rel, scene.image_size, anns))
        )
        (out / scene_rel).write_text(dumps_canonical(scene.to_dict()))
        return {"image_path": image_rel, "annotation_path": ann_rel, "scene_path": scene_rel}

    def guarded(i: int):
        try:
            return job(i), None
        except OSError as exc:
            return None, f"entry {i:06d}: {exc}"

    if workers > 1 and n > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, range(n)))
    else:
        outcomes = [guarded(i) for i in range(n)]

    failures = [err for _, err in outcomes if err]
    if failures:
        raise SceneError("dataset generation failed: " + "; ".join(failures))
    entries = [entry for entry, _ in outcomes]

    manifest = DatasetManifest(version=1, seed=seed, count=n, entries=tuple(entries))
    (out / "manifest.json").write_text(dumps_canonical(manifest.to_dict()))
    return manifest
