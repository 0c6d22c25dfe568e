"""Command-line entry points: thin wrappers over the library and service.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="tilelab", description="Shape-tile detection pipeline tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--mode", choices=("random", "compositions", "mixed"), default="random")
    g.add_argument("--max-tiles", type=int, default=8)

    d = sub.add_parser("detect", help="run the reference detector on an image")
    d.add_argument("--image", required=True)
    d.add_argument("--out")
    d.add_argument("--config")

    dec = sub.add_parser("decode", help="decode an external prediction tensor")
    dec.add_argument("--pred", required=True)
    dec.add_argument("--config")
    dec.add_argument("--out")

    e = sub.add_parser("eval", help="score detections against annotations")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--tau", type=float, default=5.0)
    e.add_argument("--out")

    b = sub.add_parser("bench", help="time the pipeline stages")
    b.add_argument("--config")
    b.add_argument("--iters", type=int, default=20)

    s = sub.add_parser("serve", help="run the local HTTP service")
    s.add_argument("--port", type=int, default=8731)
    s.add_argument("--static")
    return p


def _load_config(path: str | None):
    from .config import PipelineConfig

    if path:
        return PipelineConfig.load(path)
    return PipelineConfig()


def _write_or_print(doc: dict, out: str | None) -> None:
    from .scenegen import dumps_canonical

    text = dumps_canonical(doc)
    if out:
        Path(out).write_text(text)
    else:
        print(text)


def cmd_generate(args) -> int:
    from .scenegen import SceneGenConfig, JitterRanges, generate_dataset

    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise RuntimeError(f"output path {out} exists and is not a directory")
    cfg = SceneGenConfig(max_tiles=args.max_tiles, jitter=JitterRanges())
    manifest = generate_dataset(args.count, args.seed, out, mode=args.mode, config=cfg)
    print(f"wrote {manifest.count} images to {out}")
    return 0


def cmd_detect(args) -> int:
    from .encoding import detections_to_json
    from .refdetect import detect
    from .render import load_png

    cfg = _load_config(args.config)
    img = load_png(args.image)
    dets = detect(img, cfg.catalog(), cfg.segment_params(), nms_iou=cfg.decode.nms_iou)
    _write_or_print(detections_to_json(dets), args.out)
    return 0


def cmd_decode(args) -> int:
    from .encoding import decode, detections_to_json, load_predictions

    cfg = _load_config(args.config)
    grid = cfg.grid()
    pred = load_predictions(args.pred, grid)
    dets = decode(
        pred,
        grid,
        cfg.catalog(),
        score_thresh=cfg.decode.score_thresh,
        nms_iou=cfg.decode.nms_iou,
        max_out=cfg.decode.max_out,
        axis_aligned_nms=cfg.decode.axis_aligned_nms,
    )
    _write_or_print(detections_to_json(dets), args.out)
    return 0


def cmd_eval(args) -> int:
    from .evaluation import MatchConfig, evaluate_dataset, report_to_dict

    metrics, per_image = evaluate_dataset(args.pred, args.gt, MatchConfig(tau_vertex=args.tau))
    _write_or_print(report_to_dict(metrics, per_image), args.out)
    print(
        f"precision {metrics.precision:.2f}  recall {metrics.recall:.2f}  "
        f"fscore {metrics.fscore:.2f}  (tp {metrics.tp} fp {metrics.fp} fn {metrics.fn})",
        file=sys.stderr,
    )
    return 0


def cmd_bench(args) -> int:
    from .encoding import AnchorLevel
    from .evaluation import bench

    cfg = _load_config(args.config)
    levels = tuple(AnchorLevel(l.stride, l.anchor_side) for l in cfg.anchor_levels)
    report = bench(
        catalog=cfg.catalog(),
        image_size=cfg.image_size,
        levels=levels,
        iters=args.iters,
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    static = None
    if args.static:
        static = Path(args.static).resolve()
        if not static.is_dir():
            print(f"warning: static dir {static} not found; serving API only",
                  file=sys.stderr)
            static = None
    app = create_app(static_dir=static)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "detect": cmd_detect,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
