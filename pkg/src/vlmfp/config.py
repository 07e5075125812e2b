"""Harness configuration: one JSON file, env overrides, recipe registry.

A ``PipelineConfig`` bundles everything a benchmark run needs — tiling
geometry, token-reduction factors, the twelve latency-recipe toggles,
the latency/cost models, and backend selection.  Configs are immutable;
recipes are applied by building a new config (``with_recipes``), so a
ladder of cumulative rungs is a fold over one base config.

File format: a single JSON object mirroring the dataclass tree.  Any
field may be overridden from the environment with ``VLMFP_``-prefixed
variables, using ``__`` to descend into nested sections, e.g.
``VLMFP_PREPROCESS__TILE_EDGE=448``.  Values are parsed as JSON when
possible and taken as strings otherwise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .backend import LatencyModel
from .errors import ConfigError, ShapeError, VlmfpError
from .imgproc import PreprocessConfig
from .tokenred import TokenReductionConfig, tokens_per_tile
from .transfer import CostModel

__all__ = [
    "ALL_RECIPES",
    "ENV_PREFIX",
    "PipelineConfig",
    "Recipe",
    "TransferConfig",
    "config_from_dict",
    "config_hash",
    "config_to_dict",
    "load_config",
    "recipe_names",
    "recipe_vector",
    "resolve_config",
    "resolve_recipe",
    "with_recipes",
]

ENV_PREFIX = "VLMFP_"


@dataclass(frozen=True)
class TransferConfig:
    """Host-to-device copy model constants and staging alignment."""

    bytes_per_second: float = 2.0e9
    pinned_latency_s: float = 40e-6
    pageable_latency_s: float = 150e-6
    alignment: int = 64

    def __post_init__(self) -> None:
        if not self.bytes_per_second > 0:
            raise ConfigError("bytes_per_second must be positive")
        if not self.pinned_latency_s > 0 or not self.pageable_latency_s > 0:
            raise ConfigError("copy latencies must be positive")
        if self.alignment < 1:
            raise ConfigError("alignment must be >= 1")


@dataclass(frozen=True)
class Recipe:
    """One latency optimization: where its toggle lives and how to name it."""

    number: int
    name: str
    section: str  # "preprocess" or "" for top-level PipelineConfig fields
    field: str

    @property
    def circled(self) -> str:
        return chr(0x2460 + self.number - 1)


ALL_RECIPES: tuple[Recipe, ...] = (
    Recipe(1, "fused_transform", "preprocess", "fused_transform"),
    Recipe(2, "contiguous_tensor_path", "preprocess", "contiguous_tensor_path"),
    Recipe(3, "gpu_preprocess", "", "gpu_preprocess"),
    Recipe(4, "pin_memory", "", "pin_memory"),
    Recipe(5, "decode_once", "preprocess", "decode_once"),
    Recipe(6, "reduced_precision_normalize", "preprocess", "reduced_precision_normalize"),
    Recipe(7, "compact_placeholders", "", "compact_placeholders"),
    Recipe(8, "uint8_transfer", "", "uint8_transfer"),
    Recipe(9, "simd_decode", "preprocess", "simd_decode"),
    Recipe(10, "skip_pixel_mask", "preprocess", "skip_pixel_mask"),
    Recipe(11, "avoid_per_item_split", "preprocess", "avoid_per_item_split"),
    Recipe(12, "pack_transfers", "", "pack_transfers"),
)

_RECIPE_BY_ALIAS: dict[str, Recipe] = {}
for _recipe in ALL_RECIPES:
    _RECIPE_BY_ALIAS[_recipe.name] = _recipe
    _RECIPE_BY_ALIAS[str(_recipe.number)] = _recipe
    _RECIPE_BY_ALIAS[_recipe.circled] = _recipe


def recipe_names() -> list[str]:
    return [r.name for r in ALL_RECIPES]


def resolve_recipe(alias: str) -> Recipe:
    """Map a recipe number, name, or circled digit to its registry entry."""
    try:
        return _RECIPE_BY_ALIAS[alias.strip()]
    except KeyError:
        raise ConfigError(
            f"unknown recipe {alias!r}; use 1-12 or one of {recipe_names()}"
        ) from None


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one benchmark run needs, in one immutable value.

    Defaults are the desk-scale profile: 224-pixel tiles, at most 6 per
    image, 14-pixel patches reduced 2x — 64 visual tokens per tile —
    with every recipe off (the naive baseline).
    """

    preprocess: PreprocessConfig = field(
        default_factory=lambda: PreprocessConfig(tile_edge=224, max_tiles=6)
    )
    tokenred: TokenReductionConfig = field(default_factory=TokenReductionConfig)
    latency: LatencyModel = field(default_factory=LatencyModel)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    gpu_preprocess: bool = False  # recipe 3
    pin_memory: bool = False  # recipe 4
    compact_placeholders: bool = False  # recipe 7
    uint8_transfer: bool = False  # recipe 8
    pack_transfers: bool = False  # recipe 12
    pipelined: bool = False
    backend: str = "mock"
    vocab_path: str | None = None
    decode_tokens: int = 64

    def __post_init__(self) -> None:
        if self.decode_tokens < 1:
            raise ConfigError("decode_tokens must be >= 1")
        try:
            self.tokens_per_tile
        except ShapeError as exc:
            raise ConfigError(f"incoherent geometry: {exc}") from None

    @property
    def tokens_per_tile(self) -> int:
        return tokens_per_tile(
            self.preprocess.tile_edge, self.tokenred.patch_edge, self.tokenred.r
        )

    @property
    def defer_normalize(self) -> bool:
        """Normalization happens after transfer when it is modeled as
        device-side work or when tiles travel as raw uint8."""
        return self.gpu_preprocess or self.uint8_transfer

    def cost_model(self) -> CostModel:
        latency = (
            self.transfer.pinned_latency_s
            if self.pin_memory
            else self.transfer.pageable_latency_s
        )
        return CostModel(
            latency_per_copy=latency, bytes_per_second=self.transfer.bytes_per_second
        )

    def resolve_vocab_path(self) -> Path:
        if self.vocab_path is not None:
            return Path(self.vocab_path)
        return Path(str(resources.files("vlmfp").joinpath("data/base_vocab.txt")))


def with_recipes(cfg: PipelineConfig, recipes: Iterable[str]) -> PipelineConfig:
    """A copy of ``cfg`` with the named recipe toggles switched on."""
    preprocess_changes: dict[str, bool] = {}
    top_changes: dict[str, bool] = {}
    for alias in recipes:
        recipe = resolve_recipe(alias)
        if recipe.section == "preprocess":
            preprocess_changes[recipe.field] = True
        else:
            top_changes[recipe.field] = True
    preprocess = (
        replace(cfg.preprocess, **preprocess_changes)
        if preprocess_changes
        else cfg.preprocess
    )
    return replace(cfg, preprocess=preprocess, **top_changes)


def recipe_vector(cfg: PipelineConfig) -> dict[str, bool]:
    """Recipe name -> enabled, in recipe-number order."""
    out = {}
    for recipe in ALL_RECIPES:
        holder = cfg.preprocess if recipe.section == "preprocess" else cfg
        out[recipe.name] = bool(getattr(holder, recipe.field))
    return out


# ---------------------------------------------------------------------------
# serialization

_SECTIONS: dict[str, type] = {
    "preprocess": PreprocessConfig,
    "tokenred": TokenReductionConfig,
    "latency": LatencyModel,
    "transfer": TransferConfig,
}
_TUPLE_FIELDS = {"mean", "std"}


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    """Plain nested dict mirroring the dataclass tree (JSON-ready)."""
    out: dict[str, Any] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            out[f.name] = {
                g.name: (
                    list(getattr(value, g.name))
                    if g.name in _TUPLE_FIELDS
                    else getattr(value, g.name)
                )
                for g in fields(value)
            }
        else:
            out[f.name] = value
    return out


def _build_section(cls: type, data: Mapping[str, Any], section: str) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    kwargs = {
        key: tuple(value) if key in _TUPLE_FIELDS and isinstance(value, list) else value
        for key, value in data.items()
    }
    try:
        return cls(**kwargs)
    except (VlmfpError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad {section} config: {exc}") from None


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    """Build a config from a (possibly partial) nested dict."""
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except (VlmfpError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config: {exc}") from None


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _env_overrides(env: Mapping[str, str]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [part.lower() for part in key[len(ENV_PREFIX) :].split("__")]
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting env overrides at {key}")
        node[path[-1]] = _parse_env_value(env[key])
    return tree


def _deep_merge(base: dict[str, Any], extra: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _deep_merge(dict(out[key]), value)
        else:
            out[key] = value
    return out


def load_config(
    path: str | Path, env: Mapping[str, str] | None = None
) -> PipelineConfig:
    """Read a JSON config file and apply ``VLMFP_`` environment overrides."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if env is not None:
        data = _deep_merge(data, _env_overrides(env))
    return config_from_dict(data)


def resolve_config(
    path: str | Path | None, env: Mapping[str, str] | None = None
) -> PipelineConfig:
    """Config from an optional file: defaults + env overrides when absent."""
    if path is None:
        overrides = _env_overrides(env) if env else {}
        return config_from_dict(overrides)
    return load_config(path, env)


def config_hash(cfg: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON form; stable across processes."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
