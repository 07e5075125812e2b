"""Command-line interface.

Subcommands::

    vlmfp bench run     --manifest M [--config C] [--out report.json]
    vlmfp bench ladder  --manifest M [--config C] --recipes 5,9,1+2 --out DIR
    vlmfp preprocess    --image F [--config C] --dump-tensors DIR
    vlmfp boxcodec      encode|decode --format loc|text ...
    vlmfp eval-densecap --pred P --gt G
    vlmfp profile       --manifest M [--config C] --folded OUT

Configuration comes from one JSON file (``--config``) plus ``VLMFP_``
environment overrides; with no file, defaults plus overrides apply.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .bench import (
    load_manifest,
    render_ladder_markdown,
    render_report_markdown,
    report_to_dict,
    run_ladder,
    run_profile,
    run_workload,
    save_report,
)
from .boxcodec import (
    BBoxN,
    LocationGridConfig,
    RegionCaption,
    ScoredRegionCaption,
    decode_box_loc,
    densecap_map_dataset,
    encode_box_loc,
    encode_box_text,
    loc_token,
    parse_box_text,
    parse_loc_token,
)
from .config import resolve_config, with_recipes
from .errors import ConfigError, DataError, VlmfpError
from .imgproc import preprocess
from .tensordump import dump_tensor

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _parse_box(raw: str) -> BBoxN:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 4:
        raise DataError(f"--box needs 4 comma-separated coordinates, got {len(parts)}")
    try:
        x1, y1, x2, y2 = (float(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"bad --box value: {exc}") from None
    return BBoxN(x1, y1, x2, y2)


def _load_config_args(args: argparse.Namespace):
    cfg = resolve_config(args.config, os.environ)
    recipes = getattr(args, "recipes", None)
    if recipes and not getattr(args, "_recipes_are_rungs", False):
        flat = [
            alias.strip()
            for chunk in recipes.split(",")
            for alias in chunk.split("+")
            if alias.strip()
        ]
        cfg = with_recipes(cfg, flat)
    return cfg


def _cmd_bench_run(args: argparse.Namespace) -> int:
    cfg = _load_config_args(args)
    manifest = load_manifest(args.manifest, warmup=args.warmup, limit=args.limit)
    report = run_workload(manifest, cfg, label=args.label)
    if args.out:
        save_report(report, args.out)
    sys.stdout.write(render_report_markdown(report))
    return EXIT_OK


def _cmd_bench_ladder(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, os.environ)
    manifest = load_manifest(args.manifest, warmup=args.warmup, limit=args.limit)
    rungs = [r for r in args.recipes.split(",") if r.strip()] if args.recipes else []
    reports = run_ladder(manifest, cfg, rungs, repeats=args.repeats)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, report in enumerate(reports):
        slug = report.label.strip("+").replace("+", "-") or "baseline"
        save_report(report, out_dir / f"rung_{i:02d}_{slug}.json")
    markdown = render_ladder_markdown(reports)
    (out_dir / "ladder.md").write_text(markdown)
    sys.stdout.write(markdown)
    return EXIT_OK


def _cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _load_config_args(args)
    try:
        payload = Path(args.image).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image {args.image}: {exc}") from None
    result = preprocess(payload, cfg.preprocess, defer_normalize=cfg.defer_normalize)
    dump_dir = Path(args.dump_tensors)
    dump_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tile in enumerate(result.tiles):
        base = dump_dir / f"tile_{i:02d}"
        dump_tensor(tile.data, base)
        paths.append(str(base.with_suffix(".bin")))
    summary = {
        "rows": result.plan.rows,
        "cols": result.plan.cols,
        "tile_edge": result.plan.tile_edge,
        "include_thumbnail": result.plan.include_thumbnail,
        "n_images": result.plan.n_images,
        "resized_width": result.plan.resized_width,
        "resized_height": result.plan.resized_height,
        "deferred_normalize": result.deferred,
        "tensors": paths,
    }
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def _cmd_boxcodec(args: argparse.Namespace) -> int:
    grid = LocationGridConfig(K=args.k)
    if args.action == "encode":
        if not args.box:
            raise DataError("encode needs --box X1,Y1,X2,Y2")
        box = _parse_box(args.box)
        if args.format == "loc":
            indices = encode_box_loc(box, grid)
            sys.stdout.write(" ".join(loc_token(i, grid) for i in indices) + "\n")
        else:
            sys.stdout.write(encode_box_text(box, scale=args.scale) + "\n")
        return EXIT_OK
    # decode
    if args.format == "loc":
        if not args.tokens:
            raise DataError("decode --format loc needs --tokens 'loc_a loc_b loc_c loc_d'")
        indices = [parse_loc_token(tok, grid) for tok in args.tokens.split()]
        box = decode_box_loc(indices, grid)
    else:
        if args.text is None:
            raise DataError("decode --format text needs --text '[x1, y1, x2, y2]'")
        box = parse_box_text(args.text, scale=args.scale)
    sys.stdout.write(json.dumps(asdict(box)) + "\n")
    return EXIT_OK


def _read_regions(path: str, scored: bool):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read regions file {path}: {exc}") from None
    by_image: dict[str, list] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            record = json.loads(line)
            box = BBoxN(*record["box"])
            image = str(record.get("image_id", "0"))
            if scored:
                region = ScoredRegionCaption(
                    box=box, caption=record["caption"], score=float(record["score"])
                )
            else:
                region = RegionCaption(box=box, caption=record["caption"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: bad region record: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: not valid JSON: {exc}") from None
        by_image.setdefault(image, []).append(region)
    return by_image


def _cmd_eval_densecap(args: argparse.Namespace) -> int:
    preds = _read_regions(args.pred, scored=True)
    gts = _read_regions(args.gt, scored=False)
    score = densecap_map_dataset(preds, gts)
    result = {
        "map": score,
        "n_images": len(gts),
        "n_preds": sum(len(v) for v in preds.values()),
        "n_gts": sum(len(v) for v in gts.values()),
    }
    sys.stdout.write(json.dumps(result) + "\n")
    return EXIT_OK


def _cmd_profile(args: argparse.Namespace) -> int:
    cfg = _load_config_args(args)
    manifest = load_manifest(args.manifest, warmup=0)
    row, folded = run_profile(manifest, cfg, index=args.index)
    Path(args.folded).write_text(folded)
    summary = {
        "image": row.image,
        "ttft_ms": row.ttft_ms,
        "e2e_ms": row.e2e_ms,
        "folded": args.folded,
    }
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (defaults when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlmfp", description="VLM front-end pipeline benchmark harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="workload benchmarks")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    run_p = bench_sub.add_parser("run", help="run one config over a manifest")
    run_p.add_argument("--manifest", required=True)
    _add_config_arg(run_p)
    run_p.add_argument("--out", help="write the JSON report here")
    run_p.add_argument("--recipes", help="comma-separated recipes to enable")
    run_p.add_argument("--warmup", type=int, default=20)
    run_p.add_argument("--limit", type=int, default=None)
    run_p.add_argument("--label", default="run")
    run_p.set_defaults(func=_cmd_bench_run)

    ladder_p = bench_sub.add_parser("ladder", help="cumulative recipe ladder")
    ladder_p.add_argument("--manifest", required=True)
    _add_config_arg(ladder_p)
    ladder_p.add_argument(
        "--recipes",
        default=",".join(("5", "9", "1+2", "8", "10", "11", "12")),
        help="comma-separated rungs; group recipes within a rung with '+'",
    )
    ladder_p.add_argument("--out", required=True, help="directory for rung reports")
    ladder_p.add_argument("--warmup", type=int, default=20)
    ladder_p.add_argument("--limit", type=int, default=None)
    ladder_p.add_argument(
        "--repeats", type=int, default=2, help="best-of-k runs per request and rung"
    )
    ladder_p.set_defaults(func=_cmd_bench_ladder, _recipes_are_rungs=True)

    pre_p = sub.add_parser("preprocess", help="preprocess one image, dump tensors")
    pre_p.add_argument("--image", required=True)
    _add_config_arg(pre_p)
    pre_p.add_argument("--dump-tensors", required=True, help="output directory")
    pre_p.set_defaults(func=_cmd_preprocess)

    box_p = sub.add_parser("boxcodec", help="encode/decode bounding boxes")
    box_p.add_argument("action", choices=["encode", "decode"])
    box_p.add_argument("--format", choices=["loc", "text"], required=True)
    box_p.add_argument("--box", help="normalized X1,Y1,X2,Y2 (encode)")
    box_p.add_argument("--tokens", help="space-separated location tokens (decode loc)")
    box_p.add_argument("--text", help="'[x1, y1, x2, y2]' string (decode text)")
    box_p.add_argument("--k", type=int, default=100, help="location grid bins per axis")
    box_p.add_argument("--scale", type=int, default=1000, help="text coordinate scale")
    box_p.set_defaults(func=_cmd_boxcodec)

    eval_p = sub.add_parser("eval-densecap", help="dense-captioning mAP")
    eval_p.add_argument("--pred", required=True, help="JSONL of scored predictions")
    eval_p.add_argument("--gt", required=True, help="JSONL of ground-truth regions")
    eval_p.set_defaults(func=_cmd_eval_densecap)

    prof_p = sub.add_parser("profile", help="profile one request to folded stacks")
    prof_p.add_argument("--manifest", required=True)
    _add_config_arg(prof_p)
    prof_p.add_argument("--index", type=int, default=0)
    prof_p.add_argument("--folded", required=True, help="output folded-stacks file")
    prof_p.set_defaults(func=_cmd_profile)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except VlmfpError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
