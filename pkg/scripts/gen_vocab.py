#!/usr/bin/env python3
"""Regenerate src/vlmfp/data/base_vocab.txt.

The file is committed; this script exists so the table is reproducible
and reviewable. Layout: one JSON header line declaring the special
tokens, then one token per line (line order = id): specials, 256 byte
fallbacks, printable ASCII, then a fixed word list with space-prefixed
variants. Words are capped at 12 characters so the longest token stays
13 bytes and greedy matching probes a short window.
"""

import json
from pathlib import Path

SPECIALS = {
    "bos": "<|bos|>",
    "eos": "<|eos|>",
    "user_header": "<|user|>",
    "assistant_header": "<|assistant|>",
    "image_marker": "<|image|>",
    "image_context": "<IMG_CONTEXT>",
    "pad": "<|pad|>",
}

WORDS = """
the a an and or of to in on at is are was were be been with for from by
this that these those it its they them their he she his her you your we
our i me my what which who where when how why describe caption show tell
find locate count list give write explain identify compare read answer
question image picture photo scene view frame region area object objects
thing things item items detail details text label labels box boxes
bounding corner corners edge edges center left right top bottom front
back near far small large big tiny huge wide tall short long round square
red green blue yellow orange purple pink brown black white gray dark
light bright color colors colored person people man woman child children
dog cat bird car truck bus bicycle motorcycle train boat plane sign
signs street road building buildings house tree trees grass sky cloud
clouds water river mountain field table chair desk window door wall
floor food fruit apple banana bottle cup plate bowl phone laptop screen
book books paper bag hat shirt shoes hand hands face head eyes standing
sitting walking running holding wearing looking playing eating riding
next above below under behind between inside outside along across there
here very also only just more most some many few all both each every
one two three four five six seven eight nine ten first second third
number numbers contains visible appears shows shown partially fully
please yes no not can could would about other another same different
""".split()


def build_lines() -> list[str]:
    lines: list[str] = []
    seen: set[str] = set()

    def add(tok: str) -> None:
        if tok not in seen:
            seen.add(tok)
            lines.append(tok)

    for tok in SPECIALS.values():
        add(tok)
    for b in range(256):
        add(f"<0x{b:02X}>")
    for code in range(0x20, 0x7F):
        add(chr(code))
    for word in WORDS:
        if len(word) > 12:
            continue
        add(word)
        add(" " + word)
    return lines


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "src" / "vlmfp" / "data" / "base_vocab.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"specials": SPECIALS}, sort_keys=True)
    out.write_text(header + "\n" + "\n".join(build_lines()) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(build_lines())} tokens)")


if __name__ == "__main__":
    main()
