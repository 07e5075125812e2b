"""Single-pass image preprocessing: decode, tile planning, resize, normalize.

Every optimization toggle here is latency-only by construction: for any
subset of toggles the emitted pixel data is identical (the reduced-precision
normalize path within its documented tolerance). Naive modes deliberately
perform the redundant work they model (double decode, layout churn,
per-row copies, per-tile splits, all-ones validity masks) so the benchmark
harness measures real costs, not stand-in sleeps.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .dtypes import FLOAT16_WIDE, FLOAT32, UINT8, round_to_wide_half, to_numpy
from .errors import DecodeError, UnsupportedFormatError
from .profiling import span_scope

_SUPPORTED_MODES = {"L", "P", "RGB"}  # everything else is rejected, not coerced


@dataclass
class ImageBuffer:
    """Decoded raster held as a contiguous row-major (H, W, C) array.

    ``data`` may be a view into a shared backing allocation (tile lists
    produced with the avoid-per-item-split recipe share one buffer).
    """

    width: int
    height: int
    channels: int
    elem: str
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = (self.height, self.width, self.channels)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")
        if self.data.dtype != to_numpy(self.elem):
            raise ValueError(f"dtype {self.data.dtype} does not match elem {self.elem!r}")
        if not self.data.flags.c_contiguous:
            raise ValueError("data must be C-contiguous")

    @classmethod
    def from_array(cls, arr: np.ndarray, elem: str = UINT8) -> "ImageBuffer":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, elem, np.ascontiguousarray(arr, dtype=to_numpy(elem)))


@dataclass(frozen=True)
class TilePlan:
    """Chosen tiling grid for one image."""

    rows: int
    cols: int
    tile_edge: int
    include_thumbnail: bool
    resized_width: int
    resized_height: int

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def n_images(self) -> int:
        return self.n_tiles + (1 if self.include_thumbnail else 0)


@dataclass(frozen=True)
class PreprocessConfig:
    """Tiling geometry, normalization constants, and the imgproc recipe toggles.

    All toggles default to off (the naive baseline). ``normalize_precision``
    is the output type the reduced-precision recipe switches to; with the
    recipe off the normalize stage always emits float32.
    """

    tile_edge: int = 448
    max_tiles: int = 12
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    normalize_precision: str = FLOAT32
    fused_transform: bool = False            # recipe 1
    contiguous_tensor_path: bool = False     # recipe 2
    decode_once: bool = False                # recipe 5
    reduced_precision_normalize: bool = False  # recipe 6
    simd_decode: bool = False                # recipe 9
    skip_pixel_mask: bool = False            # recipe 10
    avoid_per_item_split: bool = False       # recipe 11

    def __post_init__(self):
        if self.tile_edge < 1:
            raise ValueError("tile_edge must be positive")
        if self.max_tiles < 1:
            raise ValueError("max_tiles must be >= 1")
        if any(s <= 0 for s in self.std):
            raise ValueError("std components must be strictly positive")
        if self.normalize_precision not in (FLOAT32, FLOAT16_WIDE):
            raise ValueError(f"bad normalize_precision {self.normalize_precision!r}")

    @property
    def effective_precision(self) -> str:
        if self.reduced_precision_normalize:
            return FLOAT16_WIDE
        return self.normalize_precision


@dataclass
class PreprocessResult:
    tiles: list[ImageBuffer]
    plan: TilePlan
    stage_timings_ns: dict[str, int]
    deferred: bool


# ---------------------------------------------------------------------------
# decoding

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _locate_png_fault(payload: bytes) -> int:
    """Best-effort byte offset where PNG chunk structure first breaks."""
    n = len(payload)
    if payload[:8] != _PNG_SIG:
        for i, (a, b) in enumerate(zip(payload, _PNG_SIG)):
            if a != b:
                return i
        return n
    pos = 8
    first_idat = None
    while pos < n:
        if pos + 8 > n:
            return pos
        length = int.from_bytes(payload[pos : pos + 4], "big")
        ctype = payload[pos + 4 : pos + 8]
        if not all(65 <= c <= 90 or 97 <= c <= 122 for c in ctype):
            return pos
        if ctype == b"IDAT" and first_idat is None:
            first_idat = pos + 8
        end = pos + 8 + length + 4
        if end > n:
            return n
        if ctype == b"IEND":
            # structure intact; the fault is in the compressed pixel stream
            return first_idat if first_idat is not None else pos
        pos = end
    return n


def _locate_jpeg_fault(payload: bytes) -> int:
    """Best-effort byte offset where JPEG marker structure first breaks."""
    n = len(payload)
    if payload[:2] != b"\xff\xd8":
        return 0 if payload[:1] != b"\xff" else 1
    pos = 2
    while pos < n:
        if payload[pos] != 0xFF:
            return pos
        if pos + 1 >= n:
            return n
        marker = payload[pos + 1]
        if marker == 0xD9:  # reached end-of-image: fault was in scan data
            return pos
        if marker == 0x01 or 0xD0 <= marker <= 0xD7:
            pos += 2
            continue
        if pos + 4 > n:
            return n
        seglen = int.from_bytes(payload[pos + 2 : pos + 4], "big")
        if seglen < 2:
            return pos + 2
        if marker == 0xDA:  # start of scan: skip entropy-coded data
            pos += 2 + seglen
            while pos + 1 < n:
                if payload[pos] == 0xFF and payload[pos + 1] == 0xD9:
                    return pos  # EOI present; fault is inside the scan data
                pos += 1
            return n
        pos += 2 + seglen
    return n


def _locate_fault(payload: bytes) -> int:
    if payload[:4] == _PNG_SIG[:4]:
        return _locate_png_fault(payload)
    if payload[:2] == b"\xff\xd8":
        return _locate_jpeg_fault(payload)
    return 0


def _layout_churn(arr: np.ndarray) -> np.ndarray:
    # models per-channel object round-trips of non-tensor image pipelines
    planes = [np.ascontiguousarray(arr[..., c]) for c in range(arr.shape[-1])]
    return np.ascontiguousarray(np.stack(planes, axis=-1))


def _decode_pass(payload: bytes, cfg: PreprocessConfig) -> np.ndarray:
    with span_scope("decode"):
        if not (payload[:8] == _PNG_SIG or payload[:2] == b"\xff\xd8"):
            raise DecodeError("unrecognized image container", _locate_fault(payload))
        try:
            img = Image.open(io.BytesIO(payload))
            mode = img.mode
            if mode not in _SUPPORTED_MODES:
                raise UnsupportedFormatError(f"unsupported channel layout {mode!r}")
            if mode != "RGB":
                img = img.convert("RGB")
            img.load()
            arr = np.asarray(img, dtype=np.uint8)
        except UnsupportedFormatError:
            raise
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise DecodeError(str(exc), _locate_fault(payload)) from exc
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if not cfg.simd_decode:
            # row-at-a-time conversion through a float intermediate models the
            # scalar color-convert path of an unvectorized decoder; the
            # uint8 -> float32 -> uint8 round trip is value-exact
            slow = np.empty_like(arr)
            for y in range(arr.shape[0]):
                slow[y] = arr[y].astype(np.float32).astype(np.uint8)
            arr = slow
        if not cfg.contiguous_tensor_path:
            arr = _layout_churn(arr)
        return np.ascontiguousarray(arr)


def decode_image(payload: bytes, cfg: PreprocessConfig) -> ImageBuffer:
    """Decode a JPEG or PNG payload to a 3-channel uint8 buffer.

    With ``decode_once`` off this deliberately decodes, re-encodes
    losslessly, and decodes again, reproducing the redundant decode work
    of naive pipelines; the pixel content is identical in both modes.
    """
    arr = _decode_pass(payload, cfg)
    if not cfg.decode_once:
        with span_scope("reencode"):
            im = Image.fromarray(arr, mode="RGB")
            buf = io.BytesIO()
            im.save(buf, format="PNG")  # library-default settings, as naive code does
        arr = _decode_pass(buf.getvalue(), cfg)
    h, w, c = arr.shape
    return ImageBuffer(w, h, c, UINT8, arr)


# ---------------------------------------------------------------------------
# tile planning

def select_tile_plan(width: int, height: int, cfg: PreprocessConfig) -> TilePlan:
    """Pick the grid whose aspect ratio is log-closest to the image's.

    Candidates are all (rows, cols) with rows*cols <= max_tiles; ties go
    to fewer tiles, then fewer rows. A thumbnail is included exactly when
    the plan has more than one tile.
    """
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    target = math.log(width / height)
    best_key = None
    best_rc = (1, 1)
    for rows in range(1, cfg.max_tiles + 1):
        for cols in range(1, cfg.max_tiles // rows + 1):
            key = (abs(target - math.log(cols / rows)), rows * cols, rows)
            if best_key is None or key < best_key:
                best_key = key
                best_rc = (rows, cols)
    rows, cols = best_rc
    return TilePlan(
        rows=rows,
        cols=cols,
        tile_edge=cfg.tile_edge,
        include_thumbnail=rows * cols > 1,
        resized_width=cols * cfg.tile_edge,
        resized_height=rows * cfg.tile_edge,
    )


# ---------------------------------------------------------------------------
# resampling

def _axis_weights(src: int, out: int):
    # half-pixel-centered source positions, clamped to the valid range
    pos = (np.arange(out, dtype=np.float64) + 0.5) * (src / out) - 0.5
    np.clip(pos, 0.0, float(src - 1), out=pos)
    i0 = np.floor(pos).astype(np.intp)
    np.minimum(i0, src - 1, out=i0)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, frac


def _blend_vertical(src: np.ndarray, y0, y1, fy) -> np.ndarray:
    # float64 throughout; the toggle-equality guarantee relies on this exact
    # operation order, so keep the blending steps pinned (in-place updates
    # reuse buffers without changing any rounding)
    if src.dtype != np.float64:
        src = src.astype(np.float64)
    fyc = fy[:, None, None]
    vert = src[y0]
    vert *= 1.0 - fyc
    lower = src[y1]
    lower *= fyc
    vert += lower
    return vert


def _blend_horizontal(vert: np.ndarray, x0, x1, fx) -> np.ndarray:
    fxc = fx[None, :, None]
    out = vert[:, x0]
    out *= 1.0 - fxc
    right = vert[:, x1]
    right *= fxc
    out += right
    return out


def _sample_bilinear(src: np.ndarray, y0, y1, fy, x0, x1, fx) -> np.ndarray:
    return _blend_horizontal(_blend_vertical(src, y0, y1, fy), x0, x1, fx)


def _to_uint8(vals: np.ndarray) -> np.ndarray:
    # round half away from zero; bilinear output of uint8 inputs is >= 0
    return np.clip(np.floor(vals + 0.5), 0.0, 255.0).astype(np.uint8, order="C")


def _to_uint8_into(vals: np.ndarray, out: np.ndarray) -> None:
    # same rounding as _to_uint8, but with in-place temporaries and the
    # final cast fused into the copy; ``vals`` is consumed
    vals += 0.5
    np.floor(vals, out=vals)
    np.clip(vals, 0.0, 255.0, out=vals)
    out[...] = vals


def _resize_array(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if out_w == w and out_h == h:
        return arr.copy()
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    return _to_uint8(_sample_bilinear(arr, y0, y1, fy, x0, x1, fx))


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resize with half-pixel-centered sampling."""
    if img.elem != UINT8:
        raise ValueError("resize_bilinear expects a uint8 buffer")
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    return ImageBuffer(out_w, out_h, img.channels, UINT8, _resize_array(img.data, out_w, out_h))


# ---------------------------------------------------------------------------
# tiling

def _tile_fused(img: ImageBuffer, plan: TilePlan, cfg: PreprocessConfig) -> list[ImageBuffer]:
    """Sample tiles straight from the source raster, one row band at a time.

    The vertical blend is shared by every tile in a band and the full-size
    resized intermediate is never materialized; outputs are byte-identical
    to the unfused resize-then-crop path because both run the same blend
    steps in the same order on the same values.
    """
    e = plan.tile_edge
    c = img.channels
    y0, y1, fy = _axis_weights(img.height, plan.resized_height)
    x0, x1, fx = _axis_weights(img.width, plan.resized_width)
    churn = not cfg.contiguous_tensor_path
    src = img.data.astype(np.float64)

    def tile_values():
        for r in range(plan.rows):
            ys = slice(r * e, (r + 1) * e)
            band = _blend_vertical(src, y0[ys], y1[ys], fy[ys])
            for cl in range(plan.cols):
                xs = slice(cl * e, (cl + 1) * e)
                yield _blend_horizontal(band, x0[xs], x1[xs], fx[xs])
        if plan.include_thumbnail:
            ty0, ty1, tfy = _axis_weights(img.height, e)
            tx0, tx1, tfx = _axis_weights(img.width, e)
            yield _sample_bilinear(src, ty0, ty1, tfy, tx0, tx1, tfx)

    if cfg.avoid_per_item_split:
        backing = np.empty((plan.n_images, e, e, c), dtype=np.uint8)
        for k, vals in enumerate(tile_values()):
            _to_uint8_into(vals, backing[k])
        return [ImageBuffer(e, e, c, UINT8, backing[i]) for i in range(plan.n_images)]

    out = []
    for vals in tile_values():
        px = _to_uint8(vals)
        if churn:
            px = _layout_churn(px)
        out.append(ImageBuffer(e, e, c, UINT8, px))
    return out


def _tile_crops(
    img: ImageBuffer, resized: np.ndarray, plan: TilePlan, cfg: PreprocessConfig
) -> list[ImageBuffer]:
    """Cut tiles out of an already-resized raster (the unfused second pass)."""
    e = plan.tile_edge
    c = img.channels
    churn = not cfg.contiguous_tensor_path

    if cfg.avoid_per_item_split:
        backing = np.empty((plan.n_images, e, e, c), dtype=np.uint8)
        k = 0
        for r in range(plan.rows):
            for cl in range(plan.cols):
                backing[k] = resized[r * e : (r + 1) * e, cl * e : (cl + 1) * e]
                k += 1
        if plan.include_thumbnail:
            backing[k] = _resize_array(img.data, e, e)
        return [ImageBuffer(e, e, c, UINT8, backing[i]) for i in range(plan.n_images)]

    out = []
    for r in range(plan.rows):
        for cl in range(plan.cols):
            px = np.ascontiguousarray(resized[r * e : (r + 1) * e, cl * e : (cl + 1) * e])
            if churn:
                px = _layout_churn(px)
            out.append(ImageBuffer(e, e, c, UINT8, px))
    if plan.include_thumbnail:
        px = _resize_array(img.data, e, e)
        if churn:
            px = _layout_churn(px)
        out.append(ImageBuffer(e, e, c, UINT8, px))
    return out


def tile_image(img: ImageBuffer, plan: TilePlan, cfg: PreprocessConfig) -> list[ImageBuffer]:
    """Cut the aspect-resized image into row-major tiles, thumbnail last.

    The fused-transform recipe samples each tile directly from the source
    instead of materializing the full resized intermediate; both paths
    produce byte-identical tiles because they share one resampling kernel.
    With avoid_per_item_split the returned buffers are views into a single
    shared allocation.
    """
    if img.elem != UINT8:
        raise ValueError("tile_image expects a uint8 buffer")
    if cfg.fused_transform:
        return _tile_fused(img, plan, cfg)
    resized = _resize_array(img.data, plan.resized_width, plan.resized_height)
    if not cfg.contiguous_tensor_path:
        resized = _layout_churn(resized)
    return _tile_crops(img, resized, plan, cfg)


# ---------------------------------------------------------------------------
# normalization

def _normalize_array(arr: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    c = arr.shape[-1]
    mean = np.asarray(cfg.mean[:c], dtype=np.float32)
    std = np.asarray(cfg.std[:c], dtype=np.float32)
    out = (arr.astype(np.float32) / np.float32(255.0) - mean) / std
    if cfg.effective_precision == FLOAT16_WIDE:
        out = round_to_wide_half(out)
    return out


def normalize(img: ImageBuffer, cfg: PreprocessConfig) -> ImageBuffer:
    """Per-channel (x/255 - mean)/std in float32 or float16-wide."""
    if img.elem != UINT8:
        raise ValueError("normalize expects a uint8 buffer")
    out = _normalize_array(img.data, cfg)
    return ImageBuffer(img.width, img.height, img.channels, cfg.effective_precision, out)


def _shared_backing(tiles: list[ImageBuffer]) -> Optional[np.ndarray]:
    base = tiles[0].data.base
    if base is None or any(t.data.base is not base for t in tiles):
        return None
    return base


def normalize_tiles(tiles: list[ImageBuffer], cfg: PreprocessConfig) -> list[ImageBuffer]:
    """Normalize a tile batch; one fused pass when tiles share a backing.

    Also the completion step for a deferred-normalization preprocess
    result, run past the transfer boundary.
    """
    if not tiles:
        return tiles
    prec = cfg.effective_precision
    if cfg.avoid_per_item_split:
        stacked = _shared_backing(tiles)
        if stacked is not None:
            out = _normalize_array(stacked, cfg)
            return [
                ImageBuffer(t.width, t.height, t.channels, prec, out[i])
                for i, t in enumerate(tiles)
            ]
    return [normalize(t, cfg) for t in tiles]


def _apply_validity_mask(tiles: list[ImageBuffer], cfg: PreprocessConfig) -> None:
    """Materialize an all-ones validity mask and apply it, in place.

    Fully-valid images make this a pure waste of work, which is exactly
    the cost the skip-pixel-mask recipe removes.
    """
    if not tiles:
        return
    if cfg.avoid_per_item_split:
        stacked = _shared_backing(tiles)
        if stacked is not None:
            mask = np.ones(stacked.shape[:-1], dtype=stacked.dtype)
            stacked *= mask[..., None]
            return
    for t in tiles:
        mask = np.ones((t.height, t.width), dtype=t.data.dtype)
        t.data *= mask[:, :, None]


# ---------------------------------------------------------------------------
# full preprocessing pass

def preprocess(
    payload: bytes,
    cfg: PreprocessConfig,
    *,
    defer_normalize: bool = False,
) -> PreprocessResult:
    """Run decode -> plan -> resize -> tile -> normalize (or defer) -> mask.

    With ``defer_normalize`` the tiles are emitted as uint8 and the
    float conversion is expected to happen past the transfer boundary.
    The numeric output is identical across every recipe-toggle subset.
    """
    timings: dict[str, int] = {}

    t0 = time.perf_counter_ns()
    img = decode_image(payload, cfg)
    timings["decode"] = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    with span_scope("plan"):
        plan = select_tile_plan(img.width, img.height, cfg)
    timings["plan"] = time.perf_counter_ns() - t0

    # fusion removes the standalone full-image resample; the cheap
    # sampling-grid setup is all that remains under the resize stage
    t0 = time.perf_counter_ns()
    with span_scope("resize"):
        if cfg.fused_transform:
            resized = None
        else:
            resized = _resize_array(img.data, plan.resized_width, plan.resized_height)
            if not cfg.contiguous_tensor_path:
                resized = _layout_churn(resized)
    timings["resize"] = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    with span_scope("tile"):
        if resized is None:
            tiles = _tile_fused(img, plan, cfg)
        else:
            tiles = _tile_crops(img, resized, plan, cfg)
    timings["tile"] = time.perf_counter_ns() - t0

    if defer_normalize:
        t0 = time.perf_counter_ns()
        with span_scope("defer"):
            pass  # uint8 tiles cross the transfer boundary as-is
        timings["defer"] = time.perf_counter_ns() - t0
    else:
        t0 = time.perf_counter_ns()
        with span_scope("normalize"):
            tiles = normalize_tiles(tiles, cfg)
        timings["normalize"] = time.perf_counter_ns() - t0

    if not cfg.skip_pixel_mask:
        t0 = time.perf_counter_ns()
        with span_scope("mask"):
            _apply_validity_mask(tiles, cfg)
        timings["mask"] = time.perf_counter_ns() - t0

    return PreprocessResult(tiles, plan, timings, deferred=defer_normalize)
