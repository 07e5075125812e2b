#!/usr/bin/env python3
"""Generate the reference benchmark corpus: seeded synthetic JPEGs.

The corpus is committed as this generator, not as binaries: running it
with the default arguments always reproduces the same 500 images and
manifest, byte for byte (fixed seed, fixed PIL encoder settings).

Sizes are stratified for measurement stability: 70% of images share one
wide "workhorse" shape whose long edge varies continuously, so their
latencies form a single dense mode and medians sit inside it rather
than on a gap between size clusters; the remaining 30% split into small
and large bands that cycle 12 aspect ratios, covering every tile-plan
family. Pixel content is gradient + noise + blocks so JPEG decode does
realistic work. The manifest is JSONL with one ``{"image_path",
"prompt"}`` record per image, paths relative to the manifest's
directory.
"""

from __future__ import annotations

import argparse
import io
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_COUNT = 500
DEFAULT_SEED = 20260817
JPEG_QUALITY = 85

# (width : height) ratios; chosen to exercise 1x1 through tall/wide plans.
ASPECT_RATIOS = [
    (1, 1),
    (4, 3),
    (3, 4),
    (3, 2),
    (2, 3),
    (16, 9),
    (9, 16),
    (2, 1),
    (1, 2),
    (5, 4),
    (7, 5),
    (3, 1),
]

# Long-edge bands (pixels). Every block of 20 indices holds 3 small,
# 14 workhorse, and 3 large images, so any prefix of the corpus — and the
# cyclic warmup that replays the first requests — sees all three bands.
SMALL_EDGE = (96.0, 224.0)
WORKHORSE_EDGE = (272.0, 336.0)
LARGE_EDGE = (360.0, 432.0)
# Wide enough that integer rounding of the drawn edge cannot move the
# log-closest tile grid off (1, 2): one plan for the whole band.
WORKHORSE_RATIO = (16, 9)
STRATUM_PERIOD = 20
SMALL_SLOTS = 3
LARGE_SLOTS = 3

PROMPT_TEMPLATES = [
    "describe the image",
    "what is in the picture ?",
    "count the objects in the scene",
    "describe every region with a caption",
    "what color is the largest object ?",
    "is there a person in the image ?",
    "summarize the scene in one sentence",
    "list the animals you can see",
    "where is the small red box ?",
    "what is behind the large object ?",
    "read any visible text in the image",
    "describe the background of the photo",
]


def image_shape(index: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw the stratified (width, height) for one corpus image.

    Slots 0-2 of every 20 indices are small images and slots 17-19 large
    ones, both cycling the full aspect-ratio list across occurrences; the
    middle 14 slots share the wide workhorse ratio. Long edges are drawn
    uniformly inside the band so sizes form a continuum, not spikes.
    """
    slot = index % STRATUM_PERIOD
    if slot < SMALL_SLOTS:
        lo, hi = SMALL_EDGE
        occurrence = (index // STRATUM_PERIOD) * SMALL_SLOTS + slot
        ratio_w, ratio_h = ASPECT_RATIOS[occurrence % len(ASPECT_RATIOS)]
    elif slot >= STRATUM_PERIOD - LARGE_SLOTS:
        lo, hi = LARGE_EDGE
        occurrence = (index // STRATUM_PERIOD) * LARGE_SLOTS + (
            slot - (STRATUM_PERIOD - LARGE_SLOTS)
        )
        ratio_w, ratio_h = ASPECT_RATIOS[occurrence % len(ASPECT_RATIOS)]
    else:
        lo, hi = WORKHORSE_EDGE
        ratio_w, ratio_h = WORKHORSE_RATIO
    long_edge = float(rng.uniform(lo, hi))
    if ratio_w >= ratio_h:
        width = round(long_edge)
        height = max(16, round(long_edge * ratio_h / ratio_w))
    else:
        height = round(long_edge)
        width = max(16, round(long_edge * ratio_w / ratio_h))
    return int(width), int(height)


def synth_image(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    xx /= max(width - 1, 1)
    yy /= max(height - 1, 1)
    channels = []
    for _ in range(3):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        freq = rng.uniform(1.5, 7.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        field = 0.55 + 0.35 * np.sin(
            2.0 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)) + phase
        )
        channels.append(field)
    img = np.stack(channels, axis=-1) * 255.0

    # A few solid blocks so there are object-like regions.
    for _ in range(rng.integers(2, 6)):
        bw = int(rng.integers(width // 8 + 1, max(width // 3, width // 8 + 2)))
        bh = int(rng.integers(height // 8 + 1, max(height // 3, height // 8 + 2)))
        x0 = int(rng.integers(0, max(width - bw, 1)))
        y0 = int(rng.integers(0, max(height - bh, 1)))
        color = rng.uniform(0, 255, size=3).astype(np.float32)
        img[y0 : y0 + bh, x0 : x0 + bw] = 0.7 * img[y0 : y0 + bh, x0 : x0 + bw] + 0.3 * color

    img += rng.normal(0.0, 10.0, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 255.0).astype(np.uint8)


def encode_jpeg(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="JPEG", quality=JPEG_QUALITY)
    return buf.getvalue()


def make_corpus(out_dir: Path, count: int, seed: int) -> Path:
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    with manifest_path.open("w") as manifest:
        for index in range(count):
            rng = np.random.default_rng(seed + index)
            width, height = image_shape(index, rng)
            payload = encode_jpeg(synth_image(rng, width, height))
            rel = f"images/img_{index:04d}.jpg"
            (out_dir / rel).write_bytes(payload)
            prompt = PROMPT_TEMPLATES[index % len(PROMPT_TEMPLATES)]
            manifest.write(
                json.dumps({"image_path": rel, "prompt": prompt}) + "\n"
            )
    return manifest_path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--count", type=int, default=DEFAULT_COUNT)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = parser.parse_args()
    manifest = make_corpus(args.out, args.count, args.seed)
    print(f"wrote {args.count} images, manifest at {manifest}")


if __name__ == "__main__":
    main()
