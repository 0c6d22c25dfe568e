"""Desk-scale pipeline for oriented detection of shape-tile manipulatives.

Synthetic bird's-eye-view scenes of colored shape tiles with pixel-exact
annotations, SSD-style anchor encoding with a 48-bin orientation head, a
classical reference detector that closes the loop without a trained
network, vertex-matched precision/recall scoring, and composition-game
verification with structured feedback. A FastAPI service and a thin CLI
wrap the library.
"""

from .catalog import Catalog, TileSpec, default_catalog
from .compose import (
    ComposeTolerance,
    CompositionResult,
    CompositionTemplate,
    check_composition,
    feedback,
    get_template,
    register_template,
    template_ids,
)
from .config import PipelineConfig
from .encoding import (
    AnchorGrid,
    AnchorLevel,
    Detection,
    LossConfig,
    PredictionTensor,
    TargetTensor,
    build_anchors,
    decode,
    encode,
    focal_loss,
    load_predictions,
    nms,
    perfect_predictions,
    save_predictions,
)
from .evaluation import (
    MatchConfig,
    Metrics,
    bench,
    compute_metrics,
    evaluate_dataset,
    match_detections,
)
from .geometry import (
    OrientationBins,
    OrientedBox,
    Polygon,
    bin_of,
    canonical_theta,
    polygon_of,
    rotated_iou,
    theta_of,
)
from .refdetect import SegmentParams, detect, fit_pose, segment
from .render import rasterize
from .scenegen import (
    Annotation,
    SceneGenConfig,
    SceneSpec,
    TilePose,
    annotate,
    generate_dataset,
    sample_composition,
    sample_scene,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorGrid",
    "AnchorLevel",
    "Annotation",
    "Catalog",
    "ComposeTolerance",
    "CompositionResult",
    "CompositionTemplate",
    "Detection",
    "LossConfig",
    "MatchConfig",
    "Metrics",
    "OrientationBins",
    "OrientedBox",
    "PipelineConfig",
    "Polygon",
    "PredictionTensor",
    "SceneGenConfig",
    "SceneSpec",
    "SegmentParams",
    "TargetTensor",
    "TilePose",
    "TileSpec",
    "annotate",
    "bench",
    "bin_of",
    "build_anchors",
    "canonical_theta",
    "check_composition",
    "compute_metrics",
    "decode",
    "default_catalog",
    "detect",
    "encode",
    "evaluate_dataset",
    "feedback",
    "fit_pose",
    "focal_loss",
    "generate_dataset",
    "get_template",
    "load_predictions",
    "match_detections",
    "nms",
    "perfect_predictions",
    "polygon_of",
    "rasterize",
    "register_template",
    "rotated_iou",
    "sample_composition",
    "sample_scene",
    "save_predictions",
    "segment",
    "template_ids",
    "theta_of",
]
