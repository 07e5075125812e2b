"""Image pipeline tests: scalar oracles for resampling and planning,
byte-equality across recipe toggles, decode error reporting."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from vlmfp.dtypes import FLOAT16_WIDE, FLOAT32, UINT8
from vlmfp.errors import DecodeError, UnsupportedFormatError
from vlmfp.imgproc import (
    ImageBuffer,
    PreprocessConfig,
    decode_image,
    normalize,
    preprocess,
    resize_bilinear,
    select_tile_plan,
    tile_image,
)
from vlmfp.profiling import SpanRecorder


# ---------------------------------------------------------------------------
# independent scalar oracles

def oracle_resize(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Quadruple-loop scalar bilinear resize, written from the definition:
    half-pixel-centered source positions, clamp, vertical blend first,
    round half away from zero."""
    h, w, c = arr.shape
    out = np.empty((out_h, out_w, c), dtype=np.uint8)
    yscale = h / out_h
    xscale = w / out_w
    for oy in range(out_h):
        sy = (oy + 0.5) * yscale - 0.5
        sy = min(max(sy, 0.0), float(h - 1))
        y0 = min(int(math.floor(sy)), h - 1)
        fy = sy - y0
        y1 = min(y0 + 1, h - 1)
        for ox in range(out_w):
            sx = (ox + 0.5) * xscale - 0.5
            sx = min(max(sx, 0.0), float(w - 1))
            x0 = min(int(math.floor(sx)), w - 1)
            fx = sx - x0
            x1 = min(x0 + 1, w - 1)
            for ch in range(c):
                left = arr[y0, x0, ch] * (1.0 - fy) + arr[y1, x0, ch] * fy
                right = arr[y0, x1, ch] * (1.0 - fy) + arr[y1, x1, ch] * fy
                v = left * (1.0 - fx) + right * fx
                out[oy, ox, ch] = int(math.floor(v + 0.5))
    return out


def oracle_plan(width: int, height: int, max_tiles: int):
    """Enumerate every grid, sort by the selection key, take the head."""
    target = math.log(width / height)
    cands = []
    for r in range(1, max_tiles + 1):
        for c in range(1, max_tiles + 1):
            if r * c <= max_tiles:
                cands.append((abs(target - math.log(c / r)), r * c, r, c))
    cands.sort()
    _, _, r, c = cands[0]
    return r, c


def encode(arr: np.ndarray, fmt: str = "PNG", **kw) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format=fmt, **kw)
    return buf.getvalue()


FAST = PreprocessConfig(
    tile_edge=16,
    max_tiles=4,
    decode_once=True,
    simd_decode=True,
    fused_transform=True,
    contiguous_tensor_path=True,
    skip_pixel_mask=True,
    avoid_per_item_split=True,
)


# ---------------------------------------------------------------------------
# resize

def test_resize_checkerboard_halving():
    cb = ImageBuffer.from_array(np.array([[0, 255], [255, 0]], dtype=np.uint8))
    out = resize_bilinear(cb, 1, 1)
    # center sample blends all four corners equally: 127.5 rounds up
    assert out.data.ravel().tolist() == [128]


def test_resize_identity_is_exact():
    rng = np.random.default_rng(7)
    arr = rng.integers(0, 256, size=(5, 9, 3), dtype=np.uint8)
    out = resize_bilinear(ImageBuffer.from_array(arr), 9, 5)
    assert np.array_equal(out.data, arr)


def test_resize_constant_image_stays_constant():
    arr = np.full((3, 3, 3), 77, dtype=np.uint8)
    out = resize_bilinear(ImageBuffer.from_array(arr), 7, 5)
    assert np.all(out.data == 77)


@settings(max_examples=150, deadline=None)
@given(
    h=st.integers(1, 8),
    w=st.integers(1, 8),
    c=st.sampled_from([1, 3]),
    out_h=st.integers(1, 8),
    out_w=st.integers(1, 8),
    seed=st.integers(0, 2**31),
)
def test_resize_matches_scalar_oracle(h, w, c, out_h, out_w, seed):
    arr = np.random.default_rng(seed).integers(0, 256, size=(h, w, c), dtype=np.uint8)
    got = resize_bilinear(ImageBuffer.from_array(arr), out_w, out_h)
    assert np.array_equal(got.data, oracle_resize(arr, out_w, out_h))


def test_resize_rejects_float_input():
    arr = np.zeros((2, 2, 3), dtype=np.float32)
    buf = ImageBuffer(2, 2, 3, FLOAT32, arr)
    with pytest.raises(ValueError):
        resize_bilinear(buf, 1, 1)


# ---------------------------------------------------------------------------
# tile planning

@settings(max_examples=200, deadline=None)
@given(
    w=st.integers(1, 4096),
    h=st.integers(1, 4096),
    max_tiles=st.integers(1, 12),
)
def test_plan_matches_bruteforce(w, h, max_tiles):
    cfg = PreprocessConfig(tile_edge=32, max_tiles=max_tiles)
    plan = select_tile_plan(w, h, cfg)
    assert (plan.rows, plan.cols) == oracle_plan(w, h, max_tiles)


def test_plan_known_grids():
    cfg = PreprocessConfig(tile_edge=448, max_tiles=12)
    square = select_tile_plan(448, 448, cfg)
    assert (square.rows, square.cols) == (1, 1)
    assert not square.include_thumbnail

    wide = select_tile_plan(900, 450, cfg)
    assert (wide.rows, wide.cols) == (1, 2)
    assert wide.include_thumbnail
    assert (wide.resized_width, wide.resized_height) == (896, 448)

    four_three = select_tile_plan(800, 600, cfg)
    assert (four_three.rows, four_three.cols) == (3, 4)


def test_plan_tiny_image_still_plans():
    cfg = PreprocessConfig(tile_edge=448, max_tiles=12)
    plan = select_tile_plan(1, 1, cfg)
    assert (plan.rows, plan.cols) == (1, 1)


def test_plan_thumbnail_iff_multi_tile():
    cfg = PreprocessConfig(tile_edge=64, max_tiles=12)
    for w, h in [(64, 64), (128, 64), (300, 100), (50, 50), (977, 313)]:
        plan = select_tile_plan(w, h, cfg)
        assert plan.include_thumbnail == (plan.n_tiles > 1)
        assert plan.n_images == plan.n_tiles + int(plan.include_thumbnail)


# ---------------------------------------------------------------------------
# tiling equality across recipe paths

@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(3, 40),
    w=st.integers(3, 40),
    fused=st.booleans(),
    contig=st.booleans(),
    split=st.booleans(),
    seed=st.integers(0, 2**31),
)
def test_tiling_paths_byte_identical(h, w, fused, contig, split, seed):
    arr = np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    img = ImageBuffer.from_array(arr)
    ref_cfg = PreprocessConfig(tile_edge=8, max_tiles=6)
    cfg = PreprocessConfig(
        tile_edge=8,
        max_tiles=6,
        fused_transform=fused,
        contiguous_tensor_path=contig,
        avoid_per_item_split=split,
    )
    plan = select_tile_plan(w, h, ref_cfg)
    ref = tile_image(img, plan, ref_cfg)
    got = tile_image(img, plan, cfg)
    assert len(got) == len(ref) == plan.n_images
    for a, b in zip(ref, got):
        assert np.array_equal(a.data, b.data)


def test_tiles_row_major_then_thumbnail():
    rng = np.random.default_rng(3)
    arr = rng.integers(0, 256, size=(30, 60, 3), dtype=np.uint8)
    img = ImageBuffer.from_array(arr)
    cfg = PreprocessConfig(tile_edge=8, max_tiles=6)
    plan = select_tile_plan(60, 30, cfg)
    assert (plan.rows, plan.cols) == (1, 2)
    tiles = tile_image(img, plan, cfg)
    assert len(tiles) == 3  # 2 tiles + thumbnail
    resized = resize_bilinear(img, plan.resized_width, plan.resized_height)
    assert np.array_equal(tiles[0].data, resized.data[:, :8])
    assert np.array_equal(tiles[1].data, resized.data[:, 8:])
    thumb = resize_bilinear(img, 8, 8)
    assert np.array_equal(tiles[2].data, thumb.data)


def test_shared_backing_views_when_split_avoided():
    rng = np.random.default_rng(4)
    arr = rng.integers(0, 256, size=(20, 40, 3), dtype=np.uint8)
    img = ImageBuffer.from_array(arr)
    plan = select_tile_plan(40, 20, PreprocessConfig(tile_edge=8, max_tiles=6))

    joined = tile_image(img, plan, PreprocessConfig(tile_edge=8, max_tiles=6, avoid_per_item_split=True))
    assert all(t.data.base is not None for t in joined)
    assert len({id(t.data.base) for t in joined}) == 1

    split = tile_image(img, plan, PreprocessConfig(tile_edge=8, max_tiles=6))
    assert all(t.data.base is None for t in split)


# ---------------------------------------------------------------------------
# normalization

def test_normalize_reference_values():
    arr = np.array([[[0, 128, 255]]], dtype=np.uint8)
    cfg = PreprocessConfig()
    out = normalize(ImageBuffer.from_array(arr), cfg)
    assert out.elem == FLOAT32
    expect = (arr.astype(np.float32) / np.float32(255.0) - np.float32(0.5)) / np.float32(0.5)
    assert np.array_equal(out.data, expect)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_reduced_precision_within_relative_tolerance(seed):
    arr = np.random.default_rng(seed).integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    img = ImageBuffer.from_array(arr)
    full = normalize(img, PreprocessConfig())
    wide = normalize(img, PreprocessConfig(reduced_precision_normalize=True))
    assert wide.elem == FLOAT16_WIDE
    a = full.data.astype(np.float64)
    b = wide.data.astype(np.float64)
    mask = a != 0
    assert np.all(np.abs(b[mask] - a[mask]) <= 2.0**-7 * np.abs(a[mask]))
    assert np.all(b[~mask] == 0)


# ---------------------------------------------------------------------------
# decoding

def test_png_roundtrip_lossless():
    rng = np.random.default_rng(11)
    arr = rng.integers(0, 256, size=(13, 17, 3), dtype=np.uint8)
    img = decode_image(encode(arr), FAST)
    assert (img.width, img.height, img.channels, img.elem) == (17, 13, 3, UINT8)
    assert np.array_equal(img.data, arr)


def test_double_decode_matches_single_decode():
    rng = np.random.default_rng(12)
    arr = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
    payload = encode(arr)
    once = decode_image(payload, FAST)
    naive = decode_image(payload, PreprocessConfig(simd_decode=True, contiguous_tensor_path=True))
    assert np.array_equal(once.data, naive.data)


def test_decode_span_counts():
    arr = np.zeros((4, 4, 3), dtype=np.uint8)
    payload = encode(arr)
    rec = SpanRecorder()
    with rec.activate():
        decode_image(payload, FAST)
    assert rec.count("decode") == 1 and rec.count("reencode") == 0
    rec2 = SpanRecorder()
    with rec2.activate():
        decode_image(payload, PreprocessConfig())
    assert rec2.count("decode") == 2 and rec2.count("reencode") == 1


def test_grayscale_and_palette_promoted_to_rgb():
    gray = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
    out = decode_image(encode(gray), FAST)
    assert out.channels == 3
    assert np.array_equal(out.data[:, :, 0], gray)
    assert np.array_equal(out.data[:, :, 0], out.data[:, :, 1])

    pal = Image.fromarray(np.stack([gray] * 3, axis=-1)).convert(
        "P", palette=Image.Palette.ADAPTIVE
    )
    buf = io.BytesIO()
    pal.save(buf, format="PNG")
    out2 = decode_image(buf.getvalue(), FAST)
    assert out2.channels == 3


def test_alpha_modes_rejected():
    arr = np.zeros((4, 4, 4), dtype=np.uint8)
    with pytest.raises(UnsupportedFormatError):
        decode_image(encode(arr), FAST)


def test_unrecognized_container_offset_zero():
    with pytest.raises(DecodeError) as exc:
        decode_image(b"definitely not an image", FAST)
    assert exc.value.byte_offset == 0


def test_truncated_png_reports_end_offset():
    arr = np.random.default_rng(13).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    payload = encode(arr)
    cut = payload[: len(payload) // 2]
    with pytest.raises(DecodeError) as exc:
        decode_image(cut, FAST)
    assert exc.value.byte_offset == len(cut)


def test_corrupt_png_stream_points_at_idat_payload():
    arr = np.random.default_rng(14).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    payload = bytearray(encode(arr))
    idat = bytes(payload).index(b"IDAT")
    # wreck the compressed stream but keep chunk structure intact
    for k in range(6, 30):
        payload[idat + 4 + k] ^= 0xFF
    with pytest.raises(DecodeError) as exc:
        decode_image(bytes(payload), FAST)
    assert exc.value.byte_offset == idat + 4


def test_truncated_jpeg_reports_end_offset():
    arr = np.random.default_rng(15).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    payload = encode(arr, fmt="JPEG", quality=85)
    cut = payload[: len(payload) - 40]
    with pytest.raises(DecodeError) as exc:
        decode_image(cut, FAST)
    assert exc.value.byte_offset == len(cut)


# ---------------------------------------------------------------------------
# end-to-end preprocess

def _small_payload(seed: int = 0, h: int = 24, w: int = 36) -> bytes:
    arr = np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return encode(arr)


def test_stage_timing_keys_exact():
    cfg = PreprocessConfig(tile_edge=8, max_tiles=4)
    r = preprocess(_small_payload(), cfg)
    assert set(r.stage_timings_ns) == {"decode", "plan", "resize", "tile", "normalize", "mask"}

    r2 = preprocess(_small_payload(), FAST)
    assert set(r2.stage_timings_ns) == {"decode", "plan", "resize", "tile", "normalize"}

    r3 = preprocess(_small_payload(), FAST, defer_normalize=True)
    assert set(r3.stage_timings_ns) == {"decode", "plan", "resize", "tile", "defer"}
    assert all(t.elem == UINT8 for t in r3.tiles)
    assert not r.deferred and r3.deferred


def test_preprocess_output_matches_plan():
    cfg = PreprocessConfig(tile_edge=8, max_tiles=6)
    r = preprocess(_small_payload(1, 30, 60), cfg)
    assert len(r.tiles) == r.plan.n_images
    for t in r.tiles:
        assert (t.width, t.height) == (8, 8)
        assert t.elem == FLOAT32


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    toggles=st.tuples(*[st.booleans()] * 7),
)
def test_recipe_subsets_preserve_output(seed, toggles):
    fused, contig, once, reduced, simd, skipmask, split = toggles
    payload = _small_payload(seed, 20, 28)
    ref = preprocess(payload, PreprocessConfig(tile_edge=8, max_tiles=4))
    got = preprocess(
        payload,
        PreprocessConfig(
            tile_edge=8,
            max_tiles=4,
            fused_transform=fused,
            contiguous_tensor_path=contig,
            decode_once=once,
            reduced_precision_normalize=reduced,
            simd_decode=simd,
            skip_pixel_mask=skipmask,
            avoid_per_item_split=split,
        ),
    )
    assert len(ref.tiles) == len(got.tiles)
    for a, b in zip(ref.tiles, got.tiles):
        if b.elem == FLOAT32:
            assert np.array_equal(a.data, b.data)
        else:
            av = a.data.astype(np.float64)
            bv = b.data.astype(np.float64)
            nz = av != 0
            assert np.all(np.abs(bv[nz] - av[nz]) <= 2.0**-7 * np.abs(av[nz]))
            assert np.all(bv[~nz] == 0)


def test_deferred_tiles_equal_normalized_after_the_fact():
    payload = _small_payload(9, 16, 24)
    cfg = PreprocessConfig(tile_edge=8, max_tiles=4)
    eager = preprocess(payload, cfg)
    lazy = preprocess(payload, cfg, defer_normalize=True)
    for a, b in zip(eager.tiles, lazy.tiles):
        assert np.array_equal(a.data, normalize(b, cfg).data)
