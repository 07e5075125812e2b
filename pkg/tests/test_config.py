"""Tests for harness configuration: JSON loading, env overrides, recipes."""

from __future__ import annotations

import json

import pytest

from vlmfp.config import (
    ALL_RECIPES,
    PipelineConfig,
    TransferConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    recipe_names,
    recipe_vector,
    resolve_recipe,
    with_recipes,
)
from vlmfp.errors import ConfigError
from vlmfp.imgproc import PreprocessConfig


def test_default_geometry_is_coherent() -> None:
    cfg = PipelineConfig()
    assert cfg.preprocess.tile_edge == 224
    assert cfg.preprocess.max_tiles == 6
    assert cfg.tokenred.patch_edge == 14
    assert cfg.tokenred.r == 2
    assert cfg.tokens_per_tile == 64
    assert cfg.backend == "mock"
    assert cfg.decode_tokens == 64


def test_all_recipes_off_by_default() -> None:
    cfg = PipelineConfig()
    vector = recipe_vector(cfg)
    assert set(vector) == set(recipe_names())
    assert not any(vector.values())


def test_incoherent_geometry_rejected() -> None:
    with pytest.raises(ConfigError):
        PipelineConfig(preprocess=PreprocessConfig(tile_edge=450, max_tiles=6))


def test_defer_normalize_derivation() -> None:
    assert not PipelineConfig().defer_normalize
    assert PipelineConfig(gpu_preprocess=True).defer_normalize
    assert PipelineConfig(uint8_transfer=True).defer_normalize


def test_cost_model_latency_follows_pin_memory() -> None:
    cfg = PipelineConfig()
    assert cfg.cost_model().latency_per_copy == cfg.transfer.pageable_latency_s
    pinned = PipelineConfig(pin_memory=True)
    assert pinned.cost_model().latency_per_copy == pinned.transfer.pinned_latency_s


# ---------------------------------------------------------------------------
# recipes


def test_recipe_count_and_numbering() -> None:
    assert len(ALL_RECIPES) == 12
    assert [r.number for r in ALL_RECIPES] == list(range(1, 13))


@pytest.mark.parametrize("alias", ["5", "decode_once", "⑤"])
def test_recipe_alias_forms(alias: str) -> None:
    assert resolve_recipe(alias).name == "decode_once"


def test_unknown_recipe_rejected() -> None:
    with pytest.raises(ConfigError):
        resolve_recipe("warp_drive")
    with pytest.raises(ConfigError):
        resolve_recipe("13")


def test_with_recipes_sets_only_named_toggles() -> None:
    cfg = with_recipes(PipelineConfig(), ["1", "2"])
    assert cfg.preprocess.fused_transform
    assert cfg.preprocess.contiguous_tensor_path
    assert not cfg.preprocess.decode_once
    assert not cfg.pack_transfers


def test_with_recipes_is_cumulative_and_pure() -> None:
    base = PipelineConfig()
    step1 = with_recipes(base, ["pin_memory"])
    step2 = with_recipes(step1, ["pack_transfers"])
    assert step2.pin_memory and step2.pack_transfers
    assert not base.pin_memory  # original untouched


def test_with_all_recipes_turns_everything_on() -> None:
    cfg = with_recipes(PipelineConfig(), recipe_names())
    assert all(recipe_vector(cfg).values())
    assert cfg.preprocess.effective_precision == "float16-wide"


def test_recipe_vector_tracks_toggles() -> None:
    cfg = with_recipes(PipelineConfig(), ["uint8_transfer", "9"])
    vector = recipe_vector(cfg)
    assert vector["uint8_transfer"]
    assert vector["simd_decode"]
    assert sum(vector.values()) == 2


# ---------------------------------------------------------------------------
# serialization / hashing


def test_dict_round_trip() -> None:
    cfg = with_recipes(PipelineConfig(), ["1", "4", "12"])
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_json_file_round_trip(tmp_path) -> None:
    cfg = PipelineConfig(decode_tokens=32, pin_memory=True)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(path) == cfg


def test_partial_dict_uses_defaults() -> None:
    cfg = config_from_dict({"preprocess": {"tile_edge": 448, "max_tiles": 12}})
    assert cfg.preprocess.tile_edge == 448
    assert cfg.preprocess.mean == (0.5, 0.5, 0.5)
    assert cfg.decode_tokens == 64


def test_unknown_keys_rejected() -> None:
    with pytest.raises(ConfigError):
        config_from_dict({"warp": 9})
    with pytest.raises(ConfigError):
        config_from_dict({"preprocess": {"tile_edge": 224, "warp": 9}})


def test_malformed_file_rejected(tmp_path) -> None:
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_hash_stable_and_sensitive() -> None:
    a = PipelineConfig()
    b = PipelineConfig()
    c = PipelineConfig(decode_tokens=65)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


def test_hash_covers_nested_fields() -> None:
    a = PipelineConfig()
    b = PipelineConfig(preprocess=PreprocessConfig(tile_edge=224, max_tiles=6, simd_decode=True))
    assert config_hash(a) != config_hash(b)


# ---------------------------------------------------------------------------
# env overrides


def test_env_override_top_level_and_nested(tmp_path) -> None:
    path = tmp_path / "config.json"
    path.write_text("{}")
    env = {
        "VLMFP_DECODE_TOKENS": "16",
        "VLMFP_PIN_MEMORY": "true",
        "VLMFP_PREPROCESS__TILE_EDGE": "448",
        "VLMFP_PREPROCESS__MAX_TILES": "12",
        "VLMFP_LATENCY__DECODE_PER_TOKEN_S": "0.0002",
        "IGNORED": "yes",
    }
    cfg = load_config(path, env=env)
    assert cfg.decode_tokens == 16
    assert cfg.pin_memory is True
    assert cfg.preprocess.tile_edge == 448
    assert cfg.latency.decode_per_token_s == 0.0002


def test_env_override_string_passthrough(tmp_path) -> None:
    path = tmp_path / "config.json"
    path.write_text("{}")
    cfg = load_config(path, env={"VLMFP_BACKEND": "mock"})
    assert cfg.backend == "mock"


def test_env_override_bad_key(tmp_path) -> None:
    path = tmp_path / "config.json"
    path.write_text("{}")
    with pytest.raises(ConfigError):
        load_config(path, env={"VLMFP_NO_SUCH_FIELD": "1"})


def test_transfer_config_validation() -> None:
    with pytest.raises(ConfigError):
        TransferConfig(bytes_per_second=0)
    with pytest.raises(ConfigError):
        TransferConfig(alignment=0)


def test_vocab_path_default_resolves() -> None:
    cfg = PipelineConfig()
    assert cfg.resolve_vocab_path().exists()
