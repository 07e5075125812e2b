"""Workload runner, optimization ladder, and benchmark reports.

A run is a sequential, batch-size-1 pass over a JSONL manifest of
(image, prompt) requests: decode -> plan -> resize -> tile ->
normalize-or-defer -> tokenize -> expand -> stage -> transfer ->
prefill -> decode loop, every stage under profiler spans.

Reported time-to-first-token is the sum of the real front-end wall
times (preprocess, tokenize, staging copies) and the modeled device
times (transfer, prefill), so results are dominated by the code under
test rather than by the machine running it; end-to-end adds the modeled
decode loop on top, which makes ``e2e >= ttft`` hold by construction.

The ladder driver applies recipe rungs cumulatively — each rung is the
previous config plus one or more recipes — and renders the incremental
table with a delta-vs-baseline column.
"""

from __future__ import annotations

import gc
import hashlib
import json
import math
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .backend import MockBackend, assemble, create_backend
from .boxcodec import BBoxN, RegionCaption
from .config import (
    PipelineConfig,
    config_hash,
    recipe_vector,
    resolve_recipe,
    with_recipes,
)
from .dtypes import ITEMSIZE
from .errors import DataError, DomainError, VlmfpError
from .imgproc import normalize_tiles, preprocess
from .profiling import SpanRecorder, export_folded
from .tokenizer import ChatMessage, ImagePart, TextPart, Vocab, build_token_sequence, load_vocab
from .transfer import HostArena, pack, stage_individually, transfer

__all__ = [
    "DEFAULT_LADDER",
    "DEFAULT_WARMUP",
    "BenchReport",
    "RequestRow",
    "WorkloadManifest",
    "WorkloadRequest",
    "aggregate",
    "aggregates_from_rows",
    "load_manifest",
    "load_report",
    "parse_rungs",
    "percentile",
    "render_ladder_markdown",
    "render_report_markdown",
    "report_from_dict",
    "report_to_dict",
    "run_ladder",
    "run_profile",
    "run_workload",
    "save_report",
]

DEFAULT_WARMUP = 20
DEFAULT_LADDER = ("5", "9", "1+2", "8", "10", "11", "12")

_TTFT_PARTS = ("preprocess", "tokenize", "stage", "transfer", "prefill")


# ---------------------------------------------------------------------------
# workload manifest


@dataclass(frozen=True)
class WorkloadRequest:
    image_path: Path
    prompt: str
    expected_regions: tuple[RegionCaption, ...] = ()


@dataclass(frozen=True)
class WorkloadManifest:
    path: Path
    requests: tuple[WorkloadRequest, ...]
    warmup: int
    corpus_id: str

    @property
    def request_count(self) -> int:
        return len(self.requests)


def _parse_region(raw: Any, where: str) -> RegionCaption:
    try:
        x1, y1, x2, y2 = raw["box"]
        return RegionCaption(box=BBoxN(x1, y1, x2, y2), caption=raw["caption"])
    except (KeyError, TypeError, ValueError, VlmfpError) as exc:
        raise DataError(f"{where}: bad expected_regions entry: {exc}") from None


def load_manifest(
    path: str | Path, warmup: int = DEFAULT_WARMUP, limit: int | None = None
) -> WorkloadManifest:
    """Read a JSONL manifest; image paths resolve relative to the file."""
    path = Path(path)
    if warmup < 0:
        raise DataError(f"warmup must be >= 0, got {warmup}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    corpus_id = hashlib.sha256(raw).hexdigest()[:16]
    requests: list[WorkloadRequest] = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: not valid JSON: {exc}") from None
        if not isinstance(record, dict) or "image_path" not in record or "prompt" not in record:
            raise DataError(f"{where}: each record needs image_path and prompt")
        image_path = Path(record["image_path"])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        if not image_path.is_file():
            raise DataError(f"{where}: image {image_path} does not exist")
        regions = tuple(
            _parse_region(entry, where) for entry in record.get("expected_regions", [])
        )
        requests.append(
            WorkloadRequest(
                image_path=image_path,
                prompt=str(record["prompt"]),
                expected_regions=regions,
            )
        )
        if limit is not None and len(requests) >= limit:
            break
    if not requests:
        raise DataError(f"manifest {path} holds no requests")
    return WorkloadManifest(
        path=path, requests=tuple(requests), warmup=warmup, corpus_id=corpus_id
    )


# ---------------------------------------------------------------------------
# aggregation


def percentile(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the smallest value covering pct percent."""
    if not values:
        raise DomainError("percentile of an empty sequence")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[min(rank, len(ordered)) - 1]


def aggregate(values: Sequence[float]) -> dict[str, float]:
    return {
        "mean": sum(values) / len(values) if values else 0.0,
        "p50": percentile(values, 50),
        "p95": percentile(values, 95),
    }


@dataclass
class RequestRow:
    """Per-request metrics; stages_ms holds the TTFT/E2E decomposition."""

    index: int
    image: str
    ttft_ms: float
    e2e_ms: float
    decode_tps: float
    preprocess_ms: float
    stages_ms: dict[str, float]
    output_digest: str


def aggregates_from_rows(rows: Sequence[RequestRow]) -> dict[str, dict[str, float]]:
    return {
        "ttft_ms": aggregate([r.ttft_ms for r in rows]),
        "e2e_ms": aggregate([r.e2e_ms for r in rows]),
        "decode_tps": aggregate([r.decode_tps for r in rows]),
        "preprocess_ms": aggregate([r.preprocess_ms for r in rows]),
    }


@dataclass
class BenchReport:
    label: str
    config_hash: str
    corpus_id: str
    recipes: dict[str, bool]
    pipelined: bool
    warmup: int
    n_requests: int
    rows: list[RequestRow]
    aggregates: dict[str, dict[str, float]]
    stage_means_ms: dict[str, float]
    errors: list[dict[str, Any]]
    output_digest: str
    wall_s: float
    created_at: float
    schema_version: int = 1


def report_to_dict(report: BenchReport) -> dict[str, Any]:
    out = {
        "schema_version": report.schema_version,
        "label": report.label,
        "config_hash": report.config_hash,
        "corpus_id": report.corpus_id,
        "recipes": report.recipes,
        "pipelined": report.pipelined,
        "warmup": report.warmup,
        "n_requests": report.n_requests,
        "rows": [
            {
                "index": r.index,
                "image": r.image,
                "ttft_ms": r.ttft_ms,
                "e2e_ms": r.e2e_ms,
                "decode_tps": r.decode_tps,
                "preprocess_ms": r.preprocess_ms,
                "stages_ms": r.stages_ms,
                "output_digest": r.output_digest,
            }
            for r in report.rows
        ],
        "aggregates": report.aggregates,
        "stage_means_ms": report.stage_means_ms,
        "errors": report.errors,
        "output_digest": report.output_digest,
        "wall_s": report.wall_s,
        "created_at": report.created_at,
    }
    return out


def report_from_dict(data: Mapping[str, Any]) -> BenchReport:
    try:
        rows = [
            RequestRow(
                index=r["index"],
                image=r["image"],
                ttft_ms=r["ttft_ms"],
                e2e_ms=r["e2e_ms"],
                decode_tps=r["decode_tps"],
                preprocess_ms=r["preprocess_ms"],
                stages_ms=dict(r["stages_ms"]),
                output_digest=r["output_digest"],
            )
            for r in data["rows"]
        ]
        return BenchReport(
            label=data["label"],
            config_hash=data["config_hash"],
            corpus_id=data["corpus_id"],
            recipes=dict(data["recipes"]),
            pipelined=data["pipelined"],
            warmup=data["warmup"],
            n_requests=data["n_requests"],
            rows=rows,
            aggregates={k: dict(v) for k, v in data["aggregates"].items()},
            stage_means_ms=dict(data["stage_means_ms"]),
            errors=list(data["errors"]),
            output_digest=data["output_digest"],
            wall_s=data["wall_s"],
            created_at=data["created_at"],
            schema_version=data.get("schema_version", 1),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed report: {exc}") from None


def save_report(report: BenchReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")


def load_report(path: str | Path) -> BenchReport:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"report {path} is not valid JSON: {exc}") from None
    return report_from_dict(data)


# ---------------------------------------------------------------------------
# request execution


def _digest_ids(ids: Sequence[int]) -> str:
    return hashlib.sha256(np.asarray(ids, dtype="<i4").tobytes()).hexdigest()[:16]


def _arena_capacity(cfg: PipelineConfig) -> int:
    n_images = cfg.preprocess.max_tiles + 1
    elem = 1 if cfg.defer_normalize else ITEMSIZE[cfg.preprocess.effective_precision]
    tile_bytes = cfg.preprocess.tile_edge ** 2 * 3 * elem
    ids_bytes = 4 * (n_images * cfg.tokens_per_tile + 16384)
    align = cfg.transfer.alignment
    return n_images * (tile_bytes + align) + ids_bytes + 2 * align


@dataclass
class _Prepared:
    """Front-end half of a request: everything before the device boundary."""

    index: int
    request: WorkloadRequest
    recorder: SpanRecorder
    result: Any = None  # PreprocessResult
    seq: Any = None  # TokenSequence
    preprocess_ms: float = 0.0
    tokenize_ms: float = 0.0
    error: VlmfpError | None = None


def _prepare(
    index: int,
    request: WorkloadRequest,
    cfg: PipelineConfig,
    vocab: Vocab,
) -> _Prepared:
    prep = _Prepared(index=index, request=request, recorder=SpanRecorder())
    try:
        with prep.recorder.activate():
            prep.recorder.begin("request")
            t0 = time.perf_counter_ns()
            payload = request.image_path.read_bytes()
            prep.result = preprocess(
                payload, cfg.preprocess, defer_normalize=cfg.defer_normalize
            )
            prep.preprocess_ms = (time.perf_counter_ns() - t0) / 1e6

            t0 = time.perf_counter_ns()
            messages = [
                ChatMessage(
                    role="user",
                    parts=(
                        ImagePart(tiles=prep.result.plan.n_images),
                        TextPart(request.prompt),
                    ),
                )
            ]
            prep.seq = build_token_sequence(
                messages,
                vocab,
                tokens_per_tile=cfg.tokens_per_tile,
                compact_placeholders=cfg.compact_placeholders,
            )
            prep.tokenize_ms = (time.perf_counter_ns() - t0) / 1e6
    except VlmfpError as exc:
        prep.error = exc
    return prep


def _dispatch(
    prep: _Prepared,
    cfg: PipelineConfig,
    backend: MockBackend,
    arena: HostArena | None,
    dest: np.ndarray,
) -> RequestRow:
    """Device-boundary half: stage, transfer, prefill, decode."""
    cost = cfg.cost_model()
    with prep.recorder.activate():
        assembled = assemble(prep.seq, prep.result.plan, cfg.tokenred)

        t0 = time.perf_counter_ns()
        if arena is None:
            request_arena = HostArena(_arena_capacity(cfg), cfg.transfer.alignment)
        else:
            arena.reset()
            request_arena = arena
        buffers = [tile.data for tile in prep.result.tiles]
        buffers.append(np.asarray(assembled.ids, dtype="<i4"))
        with prep.recorder.span("stage"):
            if cfg.pack_transfers:
                batch = pack(buffers, request_arena)
            else:
                batch = stage_individually(buffers, request_arena)
        stage_ms = (time.perf_counter_ns() - t0) / 1e6

        with prep.recorder.span("transfer"):
            moved = transfer(batch, cost, dest=dest[: len(batch.payload)])
        transfer_ms = moved.duration_s * 1e3

        deferred = None
        if prep.result.deferred:
            tiles, pp_cfg = prep.result.tiles, cfg.preprocess
            deferred = lambda: normalize_tiles(tiles, pp_cfg)  # noqa: E731
        prefill = backend.prefill(assembled, deferred_normalize=deferred)
        prefill_ms = prefill.duration_s * 1e3

        decode = backend.decode(assembled, cfg.decode_tokens - 1)
        generate_ms = decode.duration_s * 1e3
        prep.recorder.end("request")

    generated = [prefill.first_token_id] + decode.token_ids
    stages_ms = {k: v / 1e6 for k, v in prep.result.stage_timings_ns.items()}
    stages_ms["preprocess"] = prep.preprocess_ms
    stages_ms["tokenize"] = prep.tokenize_ms
    stages_ms["stage"] = stage_ms
    stages_ms["transfer"] = transfer_ms
    stages_ms["prefill"] = prefill_ms
    stages_ms["generate"] = generate_ms
    ttft_ms = sum(stages_ms[part] for part in _TTFT_PARTS)
    n_decoded = len(decode.token_ids)
    decode_tps = (
        n_decoded / decode.duration_s if n_decoded and decode.duration_s > 0 else 0.0
    )
    return RequestRow(
        index=prep.index,
        image=str(prep.request.image_path.name),
        ttft_ms=ttft_ms,
        e2e_ms=ttft_ms + generate_ms,
        decode_tps=decode_tps,
        preprocess_ms=prep.preprocess_ms,
        stages_ms=stages_ms,
        output_digest=_digest_ids(generated),
    )


def _run_one(
    index: int,
    request: WorkloadRequest,
    cfg: PipelineConfig,
    vocab: Vocab,
    backend: MockBackend,
    arena: HostArena | None,
    dest: np.ndarray,
) -> tuple[RequestRow | None, _Prepared]:
    prep = _prepare(index, request, cfg, vocab)
    if prep.error is not None:
        return None, prep
    return _dispatch(prep, cfg, backend, arena, dest), prep


def _make_runtime(cfg: PipelineConfig) -> tuple[Vocab, MockBackend, HostArena | None, np.ndarray]:
    vocab = load_vocab(cfg.resolve_vocab_path())
    backend = create_backend(cfg.backend, cfg.latency, vocab_size=len(vocab))
    capacity = _arena_capacity(cfg)
    arena = HostArena(capacity, cfg.transfer.alignment) if cfg.pin_memory else None
    dest = np.empty(capacity, dtype=np.uint8)
    return vocab, backend, arena, dest


def run_workload(
    manifest: WorkloadManifest, cfg: PipelineConfig, label: str = ""
) -> BenchReport:
    """Execute every manifest request under one config and aggregate."""
    vocab, backend, arena, dest = _make_runtime(cfg)
    wall0 = time.perf_counter_ns()

    n = len(manifest.requests)
    for i in range(manifest.warmup):
        _run_one(i, manifest.requests[i % n], cfg, vocab, backend, arena, dest)

    rows: list[RequestRow] = []
    errors: list[dict[str, Any]] = []

    def record(index: int, row: RequestRow | None, prep: _Prepared) -> None:
        if row is not None:
            rows.append(row)
        else:
            errors.append(
                {
                    "index": index,
                    "error": type(prep.error).__name__,
                    "message": str(prep.error),
                }
            )

    if cfg.pipelined:
        handoff: queue.Queue = queue.Queue(maxsize=1)

        def producer() -> None:
            for index, request in enumerate(manifest.requests):
                handoff.put(_prepare(index, request, cfg, vocab))
            handoff.put(None)

        worker = threading.Thread(target=producer, name="vlmfp-prepare")
        worker.start()
        try:
            while True:
                prep = handoff.get()
                if prep is None:
                    break
                if prep.error is not None:
                    record(prep.index, None, prep)
                    continue
                record(prep.index, _dispatch(prep, cfg, backend, arena, dest), prep)
        finally:
            worker.join()
    else:
        for index, request in enumerate(manifest.requests):
            row, prep = _run_one(index, request, cfg, vocab, backend, arena, dest)
            record(index, row, prep)

    wall_s = (time.perf_counter_ns() - wall0) / 1e9
    return _assemble_report(label, cfg, manifest, rows, errors, wall_s)


def _assemble_report(
    label: str,
    cfg: PipelineConfig,
    manifest: WorkloadManifest,
    rows: list[RequestRow],
    errors: list[dict[str, Any]],
    wall_s: float,
) -> BenchReport:
    stage_sums: dict[str, float] = {}
    stage_counts: dict[str, int] = {}
    for row in rows:
        for key, value in row.stages_ms.items():
            stage_sums[key] = stage_sums.get(key, 0.0) + value
            stage_counts[key] = stage_counts.get(key, 0) + 1
    stage_means = {k: stage_sums[k] / stage_counts[k] for k in sorted(stage_sums)}
    digest = hashlib.sha256(
        "".join(row.output_digest for row in rows).encode()
    ).hexdigest()[:16]
    return BenchReport(
        label=label,
        config_hash=config_hash(cfg),
        corpus_id=manifest.corpus_id,
        recipes=recipe_vector(cfg),
        pipelined=cfg.pipelined,
        warmup=manifest.warmup,
        n_requests=len(manifest.requests),
        rows=rows,
        aggregates=aggregates_from_rows(rows) if rows else {},
        stage_means_ms=stage_means,
        errors=errors,
        output_digest=digest,
        wall_s=wall_s,
        created_at=time.time(),
    )


def run_profile(
    manifest: WorkloadManifest, cfg: PipelineConfig, index: int = 0
) -> tuple[RequestRow, str]:
    """Run one request and export its span tree as folded stacks."""
    if not 0 <= index < len(manifest.requests):
        raise DataError(
            f"request index {index} outside manifest of {len(manifest.requests)}"
        )
    vocab, backend, arena, dest = _make_runtime(cfg)
    row, prep = _run_one(index, manifest.requests[index], cfg, vocab, backend, arena, dest)
    if row is None:
        raise prep.error
    return row, export_folded(prep.recorder.spans)


# ---------------------------------------------------------------------------
# optimization ladder


def parse_rungs(spec: str) -> list[list[str]]:
    """``"5,9,1+2"`` -> ``[["5"], ["9"], ["1", "2"]]``."""
    rungs = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if chunk:
            rungs.append([part.strip() for part in chunk.split("+") if part.strip()])
    return rungs


def run_ladder(
    manifest: WorkloadManifest,
    cfg: PipelineConfig,
    rungs: Sequence[str | Sequence[str]],
    repeats: int = 2,
) -> list[BenchReport]:
    """Cumulative recipe ladder: baseline first, one report per rung.

    Rung effects are often a few hundred microseconds, so the ladder is a
    precision instrument and measures accordingly:

    * paired execution — every request runs under every rung config
      back-to-back before moving on, so machine drift (thermal
      throttling, noisy neighbors) hits all rungs equally instead of
      skewing whole sequential runs;
    * shuffled within the pair — the config order is re-drawn (from a
      fixed seed) for every request, so cache and allocator warmth left
      by one config subsidizes every other config equally often instead
      of always the next one in ladder order;
    * best-of-``repeats`` — the corpus is swept ``repeats`` times and
      each (request, rung) cell keeps its fastest-TTFT row; the sweeps
      are far apart in time, so the minimum discards slow machine
      epochs as well as instantaneous scheduler spikes;
    * garbage collection is paused for the measured passes.

    Per-rung medians are still medians over the full request set.
    """
    if repeats < 1:
        raise DataError(f"repeats must be >= 1, got {repeats}")
    parsed: list[list[str]] = []
    for rung in rungs:
        if isinstance(rung, str):
            parsed.extend(parse_rungs(rung) if "," in rung else [rung.split("+")])
        else:
            parsed.append(list(rung))
    # Resolve everything up front so a bad recipe fails before any run.
    resolved = [[resolve_recipe(alias).name for alias in rung] for rung in parsed]

    labels = ["baseline"]
    configs = [cfg]
    active: list[str] = []
    for rung_names in resolved:
        active.extend(rung_names)
        labels.append("+" + "+".join(rung_names))
        configs.append(with_recipes(cfg, active))

    runtimes = [_make_runtime(c) for c in configs]
    n = len(manifest.requests)
    for i in range(manifest.warmup):
        request = manifest.requests[i % n]
        for c, runtime in zip(configs, runtimes):
            _run_one(i, request, c, *runtime)

    rows_best: list[dict[int, RequestRow]] = [{} for _ in configs]
    first_errors: list[dict[int, _Prepared]] = [{} for _ in configs]
    walls_ns = [0] * len(configs)
    order_rng = random.Random(0x1ADDE12)
    order = list(range(len(configs)))
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for _ in range(repeats):
            for index, request in enumerate(manifest.requests):
                order_rng.shuffle(order)
                for j in order:
                    c, runtime = configs[j], runtimes[j]
                    t0 = time.perf_counter_ns()
                    row, prep = _run_one(index, request, c, *runtime)
                    walls_ns[j] += time.perf_counter_ns() - t0
                    if row is None:
                        first_errors[j].setdefault(index, prep)
                    else:
                        best = rows_best[j].get(index)
                        if best is None or row.ttft_ms < best.ttft_ms:
                            rows_best[j][index] = row

    finally:
        if gc_was_enabled:
            gc.enable()

    rows = [[per_cfg[i] for i in sorted(per_cfg)] for per_cfg in rows_best]
    errors: list[list[dict[str, Any]]] = [
        [
            {
                "index": i,
                "error": type(per_cfg[i].error).__name__,
                "message": str(per_cfg[i].error),
            }
            for i in sorted(per_cfg)
            if i not in rows_best[j]
        ]
        for j, per_cfg in enumerate(first_errors)
    ]
    return [
        _assemble_report(labels[j], configs[j], manifest, rows[j], errors[j], walls_ns[j] / 1e9)
        for j in range(len(configs))
    ]


def _fmt_delta(current: float, baseline: float) -> str:
    if baseline == 0:
        return "n/a"
    return f"{round((current / baseline - 1.0) * 100.0):+d}%"


def render_ladder_markdown(reports: Sequence[BenchReport]) -> str:
    """Incremental table: one row per rung, delta column vs the baseline."""
    lines = [
        "| rung | ttft p50 (ms) | delta ttft | e2e p50 (ms) | decode p50 (tok/s) | preprocess p50 (ms) |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    base_ttft = reports[0].aggregates["ttft_ms"]["p50"] if reports else 0.0
    for i, report in enumerate(reports):
        agg = report.aggregates
        delta = "-" if i == 0 else _fmt_delta(agg["ttft_ms"]["p50"], base_ttft)
        lines.append(
            "| {label} | {ttft:.1f} | {delta} | {e2e:.1f} | {tps:.0f} | {pp:.1f} |".format(
                label=report.label or f"rung {i}",
                ttft=agg["ttft_ms"]["p50"],
                delta=delta,
                e2e=agg["e2e_ms"]["p50"],
                tps=agg["decode_tps"]["p50"],
                pp=agg["preprocess_ms"]["p50"],
            )
        )
    return "\n".join(lines) + "\n"


def render_report_markdown(report: BenchReport) -> str:
    """Single-run summary table (mean / p50 / p95 per metric)."""
    agg = report.aggregates
    lines = [
        f"## {report.label or 'benchmark'} — {report.n_requests} requests",
        "",
        "| metric | mean | p50 | p95 |",
        "| --- | --- | --- | --- |",
    ]
    for metric, title in (
        ("ttft_ms", "TTFT (ms)"),
        ("e2e_ms", "E2E (ms)"),
        ("decode_tps", "decode (tok/s)"),
        ("preprocess_ms", "preprocess (ms)"),
    ):
        m = agg[metric]
        lines.append(
            f"| {title} | {m['mean']:.2f} | {m['p50']:.2f} | {m['p95']:.2f} |"
        )
    if report.errors:
        lines.append("")
        lines.append(f"{len(report.errors)} request(s) failed.")
    return "\n".join(lines) + "\n"
