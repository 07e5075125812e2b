"""Bounding-box serialization codecs and the dense-captioning evaluator.

Two interchangeable box formulations: discretized location tokens on a
K x K grid (row/column indices, top-left then bottom-right corner) and
plain-text integer coordinates "[x1, y1, x2, y2]" on a fixed scale. The
evaluator computes joint region-caption mAP with greedy score-descending
matching; AP arithmetic runs on exact rationals so perfect retrieval is
exactly 1.0 and results are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import BoxParseError, DomainError, UndefinedAPError

DEFAULT_IOU_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
DEFAULT_SIM_THRESHOLDS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class BBoxN:
    """Axis-aligned box in normalized [0, 1] coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0 or math.isnan(v):
                raise DomainError(f"{name}={v} outside [0, 1]")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise DomainError(f"box corners out of order: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class LocationGridConfig:
    """Bin count per axis for the location-token grid."""

    K: int = 100

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")


@dataclass(frozen=True)
class RegionCaption:
    box: BBoxN
    caption: str


@dataclass(frozen=True)
class ScoredRegionCaption:
    box: BBoxN
    caption: str
    score: float


# ---------------------------------------------------------------------------
# coordinate quantization

def quantize_coord(x: float, K: int) -> int:
    """Bin index min(floor(x*K), K-1) for x in [0, 1]."""
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise DomainError(f"coordinate {x} outside [0, 1]")
    return min(int(math.floor(x * K)), K - 1)


def dequantize_coord(i: int, K: int) -> float:
    """Bin center (i + 0.5) / K."""
    if not 0 <= i < K:
        raise DomainError(f"bin index {i} outside [0, {K})")
    return (i + 0.5) / K


def loc_token(i: int, cfg: LocationGridConfig) -> str:
    if not 0 <= i < cfg.K:
        raise DomainError(f"bin index {i} outside [0, {cfg.K})")
    return f"loc_{i}"


_LOC_RE = re.compile(r"^loc_(\d+)$")


def parse_loc_token(tok: str, cfg: LocationGridConfig) -> int:
    m = _LOC_RE.match(tok)
    if not m:
        raise BoxParseError(f"not a location token: {tok!r}", 0)
    i = int(m.group(1))
    if i >= cfg.K:
        raise DomainError(f"bin index {i} outside [0, {cfg.K})")
    return i


def encode_box_loc(box: BBoxN, cfg: LocationGridConfig) -> tuple[int, int, int, int]:
    """Four grid indices: row(y1), col(x1), row(y2), col(x2)."""
    K = cfg.K
    return (
        quantize_coord(box.y1, K),
        quantize_coord(box.x1, K),
        quantize_coord(box.y2, K),
        quantize_coord(box.x2, K),
    )


def decode_box_loc(tokens: Sequence[int], cfg: LocationGridConfig) -> BBoxN:
    """Invert encode_box_loc using bin centers."""
    if len(tokens) != 4:
        raise BoxParseError(f"expected 4 location tokens, got {len(tokens)}", 0)
    r1, c1, r2, c2 = tokens
    K = cfg.K
    return BBoxN(
        x1=dequantize_coord(c1, K),
        y1=dequantize_coord(r1, K),
        x2=dequantize_coord(c2, K),
        y2=dequantize_coord(r2, K),
    )


# ---------------------------------------------------------------------------
# plain-text coordinates

def encode_box_text(box: BBoxN, scale: int = 1000) -> str:
    """Serialize as "[x1, y1, x2, y2]" integers on [0, scale]."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")

    def to_int(v: float) -> int:
        return min(int(math.floor(v * scale + 0.5)), scale)

    return (
        f"[{to_int(box.x1)}, {to_int(box.y1)}, {to_int(box.x2)}, {to_int(box.y2)}]"
    )


def parse_box_text(text: str, scale: int = 1000) -> BBoxN:
    """Parse the text codec's output; reports the byte position on error."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    pos = 0
    n = len(text)

    def skip_ws():
        nonlocal pos
        while pos < n and text[pos] == " ":
            pos += 1

    def expect(ch: str):
        nonlocal pos
        skip_ws()
        if pos >= n or text[pos] != ch:
            raise BoxParseError(f"expected {ch!r}", pos)
        pos += 1

    def integer() -> int:
        nonlocal pos
        skip_ws()
        start = pos
        while pos < n and text[pos].isdigit():
            pos += 1
        if pos == start:
            raise BoxParseError("expected integer", start)
        v = int(text[start:pos])
        if v > scale:
            raise BoxParseError(f"coordinate {v} exceeds scale {scale}", start)
        return v

    expect("[")
    vals = [integer()]
    for _ in range(3):
        expect(",")
        vals.append(integer())
    expect("]")
    skip_ws()
    if pos != n:
        raise BoxParseError("trailing characters", pos)
    x1, y1, x2, y2 = (v / scale for v in vals)
    return BBoxN(x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# geometry and captions

def iou(a: BBoxN, b: BBoxN) -> float:
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = max(0.0, ix2 - ix1)
    ih = max(0.0, iy2 - iy1)
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        # two degenerate (zero-area) boxes: identical ones fully overlap
        return 1.0 if (a.x1, a.y1, a.x2, a.y2) == (b.x1, b.y1, b.x2, b.y2) else 0.0
    return inter / union


def caption_similarity(a: str, b: str) -> float:
    """Token-level F1 over lowercased whitespace tokens.

    With overlap o and token counts la, lb this reduces to 2*o/(la+lb),
    which keeps the value an exact dyadic-friendly rational.
    """
    ta = Counter(a.lower().split())
    tb = Counter(b.lower().split())
    la = sum(ta.values())
    lb = sum(tb.values())
    if la == 0 and lb == 0:
        return 1.0
    if la == 0 or lb == 0:
        return 0.0
    overlap = sum((ta & tb).values())
    return 2 * overlap / (la + lb)


# ---------------------------------------------------------------------------
# dense-captioning mAP

def _greedy_match(
    order: list[int],
    ious: list[list[float]],
    sims: list[list[float]],
    n_gts: int,
    iou_t: float,
    sim_t: float,
) -> list[bool]:
    """For each ranked prediction decide TP/FP against unmatched gts.

    A prediction may claim any unmatched gt with iou >= iou_t and
    sim >= sim_t; among candidates the highest IoU wins, ties going to
    the lowest gt index.
    """
    taken = [False] * n_gts
    tp = []
    for p in order:
        best = -1
        best_iou = -1.0
        for g in range(n_gts):
            if taken[g]:
                continue
            if ious[p][g] >= iou_t and sims[p][g] >= sim_t and ious[p][g] > best_iou:
                best = g
                best_iou = ious[p][g]
        if best >= 0:
            taken[best] = True
            tp.append(True)
        else:
            tp.append(False)
    return tp


def _ap_from_flags(tp_flags: list[bool], n_gts: int) -> Fraction:
    """All-points PR integral: sum of (recall step) * precision at each TP."""
    ap = Fraction(0)
    tp = 0
    for k, is_tp in enumerate(tp_flags, start=1):
        if is_tp:
            tp += 1
            # recall step is 1/n_gts; precision at this rank is tp/k
            ap += Fraction(1, n_gts) * Fraction(tp, k)
    return ap


def densecap_map(
    preds: Sequence[ScoredRegionCaption],
    gts: Sequence[RegionCaption],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    sim_thresholds: Sequence[float] = DEFAULT_SIM_THRESHOLDS,
) -> float:
    """Joint region-caption mAP for one instance.

    For every (iou_t, sim_t) pair, predictions are ranked by descending
    score (ties keep submission order) and greedily matched to unmatched
    ground truths; AP is the all-points precision-recall integral and mAP
    averages over all threshold pairs. Exact rational arithmetic inside.
    """
    if not gts:
        raise UndefinedAPError("AP is undefined with no ground-truth regions")
    for g in gts:
        if not g.caption:
            raise DomainError("ground-truth caption must be non-empty")
    if not iou_thresholds or not sim_thresholds:
        raise ValueError("threshold lists must be non-empty")
    if not preds:
        return 0.0

    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    ious = [[iou(p.box, g.box) for g in gts] for p in preds]
    sims = [[caption_similarity(p.caption, g.caption) for g in gts] for p in preds]

    total = Fraction(0)
    pairs = 0
    for iou_t in iou_thresholds:
        for sim_t in sim_thresholds:
            flags = _greedy_match(order, ious, sims, len(gts), iou_t, sim_t)
            total += _ap_from_flags(flags, len(gts))
            pairs += 1
    return float(total / pairs)


def densecap_map_dataset(
    preds_by_image: dict[str, Sequence[ScoredRegionCaption]],
    gts_by_image: dict[str, Sequence[RegionCaption]],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    sim_thresholds: Sequence[float] = DEFAULT_SIM_THRESHOLDS,
) -> float:
    """Pooled mAP across images: global score ranking, per-image matching."""
    n_gts = sum(len(g) for g in gts_by_image.values())
    if n_gts == 0:
        raise UndefinedAPError("AP is undefined with no ground-truth regions")
    for gts in gts_by_image.values():
        for g in gts:
            if not g.caption:
                raise DomainError("ground-truth caption must be non-empty")

    # flatten predictions with their image key, rank globally
    flat: list[tuple[str, ScoredRegionCaption]] = []
    for img, ps in preds_by_image.items():
        for p in ps:
            flat.append((img, p))
    if not flat:
        return 0.0
    order = sorted(range(len(flat)), key=lambda i: -flat[i][1].score)

    # per-image geometry tables
    gt_lists = {img: list(gts) for img, gts in gts_by_image.items()}
    iou_cache: dict[int, list[float]] = {}
    sim_cache: dict[int, list[float]] = {}
    for i, (img, p) in enumerate(flat):
        gts = gt_lists.get(img, [])
        iou_cache[i] = [iou(p.box, g.box) for g in gts]
        sim_cache[i] = [caption_similarity(p.caption, g.caption) for g in gts]

    total = Fraction(0)
    pairs = 0
    for iou_t in iou_thresholds:
        for sim_t in sim_thresholds:
            taken = {img: [False] * len(gts) for img, gts in gt_lists.items()}
            flags: list[bool] = []
            for i in order:
                img = flat[i][0]
                marks = taken.get(img)
                best, best_iou = -1, -1.0
                if marks is not None:
                    for g in range(len(marks)):
                        if marks[g]:
                            continue
                        if (
                            iou_cache[i][g] >= iou_t
                            and sim_cache[i][g] >= sim_t
                            and iou_cache[i][g] > best_iou
                        ):
                            best, best_iou = g, iou_cache[i][g]
                if best >= 0:
                    marks[best] = True
                    flags.append(True)
                else:
                    flags.append(False)
            total += _ap_from_flags(flags, n_gts)
            pairs += 1
    return float(total / pairs)
