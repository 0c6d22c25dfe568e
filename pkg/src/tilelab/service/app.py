"""Local HTTP service exposing the pipeline for the playground and tools.

All state (catalog, templates, config) is immutable after startup, request
handling is pure, and responses are serialized canonically (sorted keys) so
identical requests always produce identical bytes.
"""

from __future__ import annotations

import json
import typing
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .. import compose as compose_mod
from ..catalog import Catalog
from ..config import PipelineConfig
from ..encoding import detection_from_dict, detections_to_json
from ..geometry import GeometryError, OrientedBox, polygon_of
from ..refdetect import detect
from ..render import decode_png, encode_png, rasterize
from ..scenegen import SceneError
from .schemas import (
    ComposeCheckRequest,
    ComposeCheckResponse,
    DetectionsResponse,
    SceneSpecModel,
)

MAX_IMAGE_BYTES = 4 * 1024 * 1024


class CanonicalJSONResponse(JSONResponse):
    """Byte-stable JSON: sorted keys, compact separators."""

    def render(self, content: typing.Any) -> bytes:
        return json.dumps(
            content, sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")


class ServiceState:
    """Immutable startup state shared by all requests."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.catalog: Catalog = self.config.catalog()
        self.segment_params = self.config.segment_params()
        self.compose_tolerance = self.config.compose_tolerance()
        self.template_ids = compose_mod.template_ids()


def _catalog_entry(spec) -> dict:
    unit = polygon_of(spec.shape, OrientedBox(0.0, 0.0, spec.size[0], spec.size[1], 0.0))
    return {
        "id": spec.id,
        "shape": spec.shape,
        "color": list(spec.color),
        "size": list(spec.size),
        "symmetry": spec.symmetry,
        "unit_vertices": [[float(x), float(y)] for x, y in unit.vertices],
    }


def _template_entry(template, catalog: Catalog) -> dict:
    doc = template.to_dict()
    for gi, group in enumerate(template.parts):
        for ai, alt in enumerate(group.alternatives):
            for si, slot in enumerate(alt):
                spec = catalog.get(slot.spec_id) if slot.spec_id else catalog.spec_for_shape(slot.shape)
                poly = polygon_of(
                    slot.shape,
                    OrientedBox(slot.cx, slot.cy, spec.size[0], spec.size[1], slot.theta_deg),
                )
                doc["parts"][gi]["alternatives"][ai][si]["vertices"] = [
                    [float(x), float(y)] for x, y in poly.vertices
                ]
                doc["parts"][gi]["alternatives"][ai][si]["color"] = list(spec.color)
    return doc


def create_app(config: PipelineConfig | None = None,
               static_dir: str | Path | None = None) -> FastAPI:
    state = ServiceState(config)
    app = FastAPI(title="tilelab", default_response_class=CanonicalJSONResponse)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        details = [
            {"loc": [str(p) for p in err["loc"]], "msg": err["msg"]}
            for err in exc.errors()
        ]
        return CanonicalJSONResponse(
            status_code=400, content={"error": "validation failed", "details": details}
        )

    @app.exception_handler(compose_mod.UnknownTemplateError)
    async def unknown_template_handler(request: Request, exc):
        return CanonicalJSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(SceneError)
    @app.exception_handler(GeometryError)
    @app.exception_handler(compose_mod.ComposeError)
    async def domain_error_handler(request: Request, exc):
        return CanonicalJSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/catalog")
    def get_catalog() -> list[dict]:
        return [_catalog_entry(s) for s in state.catalog]

    @app.get("/templates")
    def get_templates() -> list[dict]:
        return [
            _template_entry(compose_mod.get_template(tid), state.catalog)
            for tid in state.template_ids
        ]

    @app.post("/scenes/render")
    def render_scene(scene: SceneSpecModel):
        img = rasterize(scene.to_scene(), state.catalog)
        return Response(content=encode_png(img), media_type="image/png")

    @app.post("/detect", response_model=DetectionsResponse)
    async def detect_endpoint(request: Request):
        body = await request.body()
        if len(body) > MAX_IMAGE_BYTES:
            return CanonicalJSONResponse(
                status_code=413,
                content={"error": f"body exceeds {MAX_IMAGE_BYTES} bytes"},
            )
        content_type = request.headers.get("content-type", "").split(";")[0].strip()
        if content_type == "image/png":
            try:
                img = decode_png(body)
            except Exception:
                return CanonicalJSONResponse(
                    status_code=400, content={"error": "body is not a decodable PNG"}
                )
        else:
            try:
                scene_model = SceneSpecModel.model_validate_json(body)
            except Exception as exc:
                return CanonicalJSONResponse(
                    status_code=400, content={"error": f"invalid scene: {exc}"}
                )
            img = rasterize(scene_model.to_scene(), state.catalog)
        dets = detect(img, state.catalog, state.segment_params,
                      nms_iou=state.config.decode.nms_iou)
        return detections_to_json(dets)

    @app.post("/compose/check", response_model=ComposeCheckResponse)
    def compose_check(req: ComposeCheckRequest):
        if (req.scene is None) == (req.detections is None):
            return CanonicalJSONResponse(
                status_code=400,
                content={"error": "provide exactly one of scene or detections"},
            )
        template = compose_mod.get_template(req.template_id)  # 404 before work
        if req.scene is not None:
            img = rasterize(req.scene.to_scene(), state.catalog)
            dets = detect(img, state.catalog, state.segment_params,
                          nms_iou=state.config.decode.nms_iou)
        else:
            dets = [
                detection_from_dict(d.model_dump(), state.catalog)
                for d in req.detections
            ]
        tol = state.compose_tolerance
        if req.tolerances is not None:
            tol = compose_mod.ComposeTolerance(
                pos_tol=req.tolerances.pos_tol, theta_tol=req.tolerances.theta_tol
            )
        result = compose_mod.check_composition(dets, req.template_id, tol, state.catalog)
        doc = result.to_dict(template)
        doc["feedback"] = compose_mod.feedback(result, req.template_id, tol)
        return doc

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")

    return app
