"""Front-end pipeline toolkit and benchmark harness for tiled-image LMs.

The package splits a multimodal request's host-side path into measurable
stages (decode, tile, normalize, tokenize, pack, transfer, prefill) with
independently toggleable latency recipes, a deterministic mock backend,
and a span-based profiler, so optimization ladders can be reproduced on a
laptop without a GPU.
"""

__version__ = "0.1.0"

from .backend import (
    AssembledSequence,
    DecodeResult,
    GenerateResult,
    LatencyModel,
    MockBackend,
    PrefillResult,
    assemble,
    create_backend,
)
from .bench import (
    DEFAULT_LADDER,
    DEFAULT_WARMUP,
    BenchReport,
    RequestRow,
    WorkloadManifest,
    WorkloadRequest,
    aggregate,
    aggregates_from_rows,
    load_manifest,
    load_report,
    parse_rungs,
    percentile,
    render_ladder_markdown,
    render_report_markdown,
    report_from_dict,
    report_to_dict,
    run_ladder,
    run_profile,
    run_workload,
    save_report,
)
from .boxcodec import (
    DEFAULT_IOU_THRESHOLDS,
    DEFAULT_SIM_THRESHOLDS,
    BBoxN,
    LocationGridConfig,
    RegionCaption,
    ScoredRegionCaption,
    caption_similarity,
    decode_box_loc,
    densecap_map,
    densecap_map_dataset,
    dequantize_coord,
    encode_box_loc,
    encode_box_text,
    iou,
    loc_token,
    parse_box_text,
    parse_loc_token,
    quantize_coord,
)
from .config import (
    ALL_RECIPES,
    ENV_PREFIX,
    PipelineConfig,
    Recipe,
    TransferConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    recipe_names,
    recipe_vector,
    resolve_config,
    resolve_recipe,
    with_recipes,
)
from .dtypes import FLOAT16_WIDE, FLOAT32, INT32, UINT8
from .errors import (
    ArenaFullError,
    AssemblyError,
    BoxParseError,
    ConfigError,
    DataError,
    DecodeError,
    DimensionError,
    DomainError,
    ExpansionError,
    InstrumentationError,
    MalformedSequenceError,
    ShapeError,
    TemplateError,
    UndefinedAPError,
    UnsupportedFormatError,
    VlmfpError,
)
from .imgproc import (
    ImageBuffer,
    PreprocessConfig,
    PreprocessResult,
    TilePlan,
    decode_image,
    normalize,
    normalize_tiles,
    preprocess,
    resize_bilinear,
    select_tile_plan,
    tile_image,
)
from .profiling import Span, SpanRecorder, export_folded, span_scope
from .tensordump import dump_tensor, load_tensor
from .tokenizer import (
    ChatMessage,
    ImagePart,
    SpecialIds,
    TextPart,
    TokenSequence,
    Vocab,
    build_supervision_mask,
    build_token_sequence,
    detokenize,
    expand_image_placeholders,
    find_image_spans,
    load_vocab,
    masked_cross_entropy,
    render_chat,
    render_chat_naive,
    split_image_spans,
    tokenize,
)
from .tokenred import (
    PatchGrid,
    TokenReductionConfig,
    pixel_unshuffle,
    tokens_per_tile,
    visual_token_count,
)
from .transfer import (
    DEFAULT_ALIGNMENT,
    BatchEntry,
    CostModel,
    HostArena,
    Region,
    TransferBatch,
    TransferResult,
    pack,
    payload_bytes,
    stage_individually,
    transfer,
    unpack,
)

__all__ = [
    "__version__",
    # dtypes
    "FLOAT16_WIDE",
    "FLOAT32",
    "INT32",
    "UINT8",
    # errors
    "VlmfpError",
    "ConfigError",
    "DataError",
    "DecodeError",
    "UnsupportedFormatError",
    "TemplateError",
    "ExpansionError",
    "MalformedSequenceError",
    "DimensionError",
    "DomainError",
    "BoxParseError",
    "UndefinedAPError",
    "ShapeError",
    "ArenaFullError",
    "AssemblyError",
    "InstrumentationError",
    # imgproc
    "ImageBuffer",
    "TilePlan",
    "PreprocessConfig",
    "PreprocessResult",
    "decode_image",
    "select_tile_plan",
    "resize_bilinear",
    "tile_image",
    "normalize",
    "normalize_tiles",
    "preprocess",
    # profiling
    "Span",
    "SpanRecorder",
    "span_scope",
    "export_folded",
    # tokenizer
    "SpecialIds",
    "Vocab",
    "load_vocab",
    "tokenize",
    "detokenize",
    "TextPart",
    "ImagePart",
    "ChatMessage",
    "render_chat",
    "render_chat_naive",
    "TokenSequence",
    "expand_image_placeholders",
    "find_image_spans",
    "split_image_spans",
    "build_token_sequence",
    "build_supervision_mask",
    "masked_cross_entropy",
    # tokenred
    "TokenReductionConfig",
    "PatchGrid",
    "pixel_unshuffle",
    "tokens_per_tile",
    "visual_token_count",
    # boxcodec
    "DEFAULT_IOU_THRESHOLDS",
    "DEFAULT_SIM_THRESHOLDS",
    "BBoxN",
    "LocationGridConfig",
    "RegionCaption",
    "ScoredRegionCaption",
    "quantize_coord",
    "dequantize_coord",
    "loc_token",
    "parse_loc_token",
    "encode_box_loc",
    "decode_box_loc",
    "encode_box_text",
    "parse_box_text",
    "iou",
    "caption_similarity",
    "densecap_map",
    "densecap_map_dataset",
    # transfer
    "DEFAULT_ALIGNMENT",
    "Region",
    "HostArena",
    "CostModel",
    "BatchEntry",
    "TransferBatch",
    "TransferResult",
    "payload_bytes",
    "pack",
    "stage_individually",
    "transfer",
    "unpack",
    # backend
    "LatencyModel",
    "AssembledSequence",
    "PrefillResult",
    "DecodeResult",
    "GenerateResult",
    "MockBackend",
    "assemble",
    "create_backend",
    # config
    "ENV_PREFIX",
    "TransferConfig",
    "Recipe",
    "ALL_RECIPES",
    "recipe_names",
    "resolve_recipe",
    "PipelineConfig",
    "with_recipes",
    "recipe_vector",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "resolve_config",
    "config_hash",
    # bench
    "DEFAULT_WARMUP",
    "DEFAULT_LADDER",
    "WorkloadRequest",
    "WorkloadManifest",
    "load_manifest",
    "percentile",
    "aggregate",
    "RequestRow",
    "aggregates_from_rows",
    "BenchReport",
    "report_to_dict",
    "report_from_dict",
    "save_report",
    "load_report",
    "run_workload",
    "run_profile",
    "parse_rungs",
    "run_ladder",
    "render_ladder_markdown",
    "render_report_markdown",
    # tensordump
    "dump_tensor",
    "load_tensor",
]
