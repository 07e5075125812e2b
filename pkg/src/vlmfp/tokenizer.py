"""Chat templating, greedy tokenization, placeholder expansion, masking.

The tokenizer is a deterministic greedy longest-match over a fixed
vocabulary file with single-byte fallback entries, which is enough to make
every downstream id sequence bit-exact without shipping a trained BPE.
Image placeholders follow the compact scheme: the rendered prompt carries
one marker per image and the per-tile context ids are spliced in after
tokenization, instead of repeating placeholder text in the prompt string.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    DataError,
    DimensionError,
    ExpansionError,
    MalformedSequenceError,
    TemplateError,
)
from .profiling import span_scope

_BYTE_TOKEN = re.compile(r"^<0x([0-9A-F]{2})>$")

_SPECIAL_NAMES = (
    "bos",
    "eos",
    "user_header",
    "assistant_header",
    "image_marker",
    "image_context",
    "pad",
)


@dataclass(frozen=True)
class SpecialIds:
    bos: int
    eos: int
    user_header: int
    assistant_header: int
    image_marker: int
    image_context: int
    pad: int


@dataclass
class Vocab:
    """Immutable token table: line number (after the JSON header) = id."""

    id_to_token: list[str]
    token_to_id: dict[str, int]
    specials: SpecialIds
    byte_ids: list[int]  # byte value -> fallback token id, -1 when absent
    match_table: dict[bytes, int]
    max_token_bytes: int

    def special_token(self, name: str) -> str:
        return self.id_to_token[getattr(self.specials, name)]

    def __len__(self) -> int:
        return len(self.id_to_token)


def load_vocab(path: Union[str, Path]) -> Vocab:
    """Parse a vocab file: one JSON header line naming the special tokens,
    then one token per line, UTF-8, ids assigned in file order."""
    raw = Path(path).read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty vocab file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad JSON header: {exc}") from exc
    if not isinstance(header, dict) or "specials" not in header:
        raise DataError(f"{path}: header must be an object with a 'specials' map")

    id_to_token = lines[1:]
    token_to_id: dict[str, int] = {}
    for i, tok in enumerate(id_to_token):
        if tok == "":
            raise DataError(f"{path}: empty token at id {i}")
        if tok in token_to_id:
            raise DataError(f"{path}: duplicate token {tok!r} at ids {token_to_id[tok]} and {i}")
        token_to_id[tok] = i

    byte_ids = [-1] * 256
    match_table: dict[bytes, int] = {}
    max_len = 1
    for tok, i in token_to_id.items():
        m = _BYTE_TOKEN.match(tok)
        if m:
            byte_ids[int(m.group(1), 16)] = i
        else:
            b = tok.encode("utf-8")
            match_table[b] = i
            max_len = max(max_len, len(b))

    spec_map = header["specials"]
    missing = [n for n in _SPECIAL_NAMES if n not in spec_map]
    if missing:
        raise DataError(f"{path}: header missing specials {missing}")
    ids = {}
    for name in _SPECIAL_NAMES:
        tok = spec_map[name]
        if tok not in token_to_id:
            raise DataError(f"{path}: special {name}={tok!r} has no token line")
        ids[name] = token_to_id[tok]
    if len(set(ids.values())) != len(ids):
        raise DataError(f"{path}: special ids must be distinct")

    return Vocab(
        id_to_token=id_to_token,
        token_to_id=token_to_id,
        specials=SpecialIds(**ids),
        byte_ids=byte_ids,
        match_table=match_table,
        max_token_bytes=max_len,
    )


# ---------------------------------------------------------------------------
# tokenization

def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match over the vocabulary, byte fallback for gaps."""
    data = text.encode("utf-8")
    n = len(data)
    out: list[int] = []
    table = vocab.match_table
    maxlen = vocab.max_token_bytes
    pos = 0
    while pos < n:
        end = min(pos + maxlen, n)
        tid = None
        for stop in range(end, pos, -1):
            tid = table.get(data[pos:stop])
            if tid is not None:
                out.append(tid)
                pos = stop
                break
        if tid is None:
            bid = vocab.byte_ids[data[pos]]
            if bid < 0:
                raise DataError(f"no token or byte fallback for byte 0x{data[pos]:02X}")
            out.append(bid)
            pos += 1
    return out


def detokenize(ids: list[int], vocab: Vocab) -> str:
    chunks: list[bytes] = []
    byte_of = {i: bytes([b]) for b, i in enumerate(vocab.byte_ids) if i >= 0}
    for tid in ids:
        if tid in byte_of:
            chunks.append(byte_of[tid])
        else:
            chunks.append(vocab.id_to_token[tid].encode("utf-8"))
    return b"".join(chunks).decode("utf-8")


# ---------------------------------------------------------------------------
# chat templating

@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    tiles: int

    def __post_init__(self):
        if self.tiles < 1:
            raise ValueError("image part needs >= 1 tile")


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise ValueError(f"role must be user or assistant, got {self.role!r}")
        if not self.parts:
            raise ValueError("message needs at least one part")


def _check_roles(messages: list[ChatMessage]) -> None:
    if not messages:
        raise TemplateError("empty conversation")
    for i, msg in enumerate(messages):
        want = "user" if i % 2 == 0 else "assistant"
        if msg.role != want:
            raise TemplateError(
                f"roles must alternate starting with user; message {i} is {msg.role!r}"
            )


def render_chat(messages: list[ChatMessage], vocab: Vocab) -> tuple[str, list[int]]:
    """Emit the chat text with one image marker per image part.

    Returns the rendered string and the tile count for each marker, in
    order of occurrence. A trailing assistant header is appended when the
    conversation ends on a user turn (the generation prompt).
    """
    _check_roles(messages)
    user_hdr = vocab.special_token("user_header")
    asst_hdr = vocab.special_token("assistant_header")
    marker = vocab.special_token("image_marker")
    pieces: list[str] = []
    counts: list[int] = []
    for msg in messages:
        pieces.append(user_hdr if msg.role == "user" else asst_hdr)
        for part in msg.parts:
            if isinstance(part, TextPart):
                pieces.append(part.text)
            else:
                pieces.append(marker)
                counts.append(part.tiles)
    if messages[-1].role == "user":
        pieces.append(asst_hdr)
    return "".join(pieces), counts


def render_chat_naive(
    messages: list[ChatMessage], vocab: Vocab, tokens_per_tile: int
) -> str:
    """The pre-compaction scheme: repeat the placeholder text inline,
    tiles * tokens_per_tile times per image, growing the prompt string."""
    _check_roles(messages)
    user_hdr = vocab.special_token("user_header")
    asst_hdr = vocab.special_token("assistant_header")
    ctx = vocab.special_token("image_context")
    pieces: list[str] = []
    for msg in messages:
        pieces.append(user_hdr if msg.role == "user" else asst_hdr)
        for part in msg.parts:
            if isinstance(part, TextPart):
                pieces.append(part.text)
            else:
                pieces.append(ctx * (part.tiles * tokens_per_tile))
    if messages[-1].role == "user":
        pieces.append(asst_hdr)
    return "".join(pieces)


# ---------------------------------------------------------------------------
# token sequences

@dataclass
class TokenSequence:
    """Ids plus the supervision bookkeeping for the masked loss."""

    ids: list[int]
    first_assistant_index: int
    image_spans: list[tuple[int, int]]
    supervision_mask: list[bool]

    def validate(self, vocab: Vocab) -> "TokenSequence":
        T = len(self.ids)
        if not 0 <= self.first_assistant_index <= T:
            raise MalformedSequenceError(
                f"first_assistant_index {self.first_assistant_index} outside [0, {T}]"
            )
        if len(self.supervision_mask) != T:
            raise MalformedSequenceError("mask length != sequence length")
        ctx = vocab.specials.image_context
        for start, length in self.image_spans:
            if start < 0 or length < 1 or start + length > T:
                raise MalformedSequenceError(f"image span ({start}, {length}) out of range")
            if any(self.ids[i] != ctx for i in range(start, start + length)):
                raise MalformedSequenceError(
                    f"image span ({start}, {length}) covers non-placeholder ids"
                )
        return self


def expand_image_placeholders(
    ids: list[int], counts: list[int], tokens_per_tile: int, vocab: Vocab
) -> TokenSequence:
    """Replace each image-marker id with tiles * tokens_per_tile context ids."""
    marker = vocab.specials.image_marker
    ctx = vocab.specials.image_context
    n_markers = sum(1 for i in ids if i == marker)
    if n_markers != len(counts):
        raise ExpansionError(f"{n_markers} markers but {len(counts)} tile counts")
    out: list[int] = []
    spans: list[tuple[int, int]] = []
    k = 0
    for tid in ids:
        if tid == marker:
            length = counts[k] * tokens_per_tile
            spans.append((len(out), length))
            out.extend([ctx] * length)
            k += 1
        else:
            out.append(tid)
    t = _first_assistant(out, vocab)
    return TokenSequence(out, t, spans, [False] * len(out))


def _first_assistant(ids: list[int], vocab: Vocab) -> int:
    try:
        return ids.index(vocab.specials.assistant_header)
    except ValueError:
        raise MalformedSequenceError("sequence has no assistant header") from None


def find_image_spans(ids: list[int], vocab: Vocab) -> list[tuple[int, int]]:
    """Runs of consecutive image-context ids (the naive path's spans).

    Adjacent images merge into one run here; use ``split_image_spans``
    when the per-image placeholder lengths are known.
    """
    ctx = vocab.specials.image_context
    spans = []
    i = 0
    n = len(ids)
    while i < n:
        if ids[i] == ctx:
            j = i
            while j < n and ids[j] == ctx:
                j += 1
            spans.append((i, j - i))
            i = j
        else:
            i += 1
    return spans


def split_image_spans(
    ids: list[int], lengths: list[int], vocab: Vocab
) -> list[tuple[int, int]]:
    """Partition the placeholder runs into the known per-image lengths.

    The naive string path loses per-image boundaries when images are
    adjacent; the pipeline still knows each image's tile count, so runs
    are split back into ``lengths`` in order.
    """
    runs = find_image_spans(ids, vocab)
    spans: list[tuple[int, int]] = []
    it = iter(runs)
    start, remaining = -1, 0
    for want in lengths:
        if remaining == 0:
            try:
                start, remaining = next(it)
            except StopIteration:
                raise MalformedSequenceError(
                    "placeholder runs shorter than declared image lengths"
                ) from None
        if want > remaining:
            raise MalformedSequenceError(
                f"placeholder run cannot supply {want} ids ({remaining} left)"
            )
        spans.append((start, want))
        start += want
        remaining -= want
    if remaining or any(True for _ in it):
        raise MalformedSequenceError("placeholder runs longer than declared image lengths")
    return spans


def build_token_sequence(
    messages: list[ChatMessage],
    vocab: Vocab,
    tokens_per_tile: int,
    compact_placeholders: bool = True,
) -> TokenSequence:
    """Render, tokenize, and splice placeholders; both paths yield the
    same ids, the naive one by tokenizing a placeholder-bloated string."""
    if compact_placeholders:
        with span_scope("tokenize"):
            text, counts = render_chat(messages, vocab)
            ids = tokenize(text, vocab)
        with span_scope("expand"):
            seq = expand_image_placeholders(ids, counts, tokens_per_tile, vocab)
    else:
        with span_scope("tokenize"):
            text = render_chat_naive(messages, vocab, tokens_per_tile)
            ids = tokenize(text, vocab)
        with span_scope("expand"):
            lengths = [
                part.tiles * tokens_per_tile
                for msg in messages
                for part in msg.parts
                if isinstance(part, ImagePart)
            ]
            spans = split_image_spans(ids, lengths, vocab)
            seq = TokenSequence(ids, _first_assistant(ids, vocab), spans, [False] * len(ids))
    return build_supervision_mask(seq, vocab)


def build_supervision_mask(seq: TokenSequence, vocab: Vocab) -> TokenSequence:
    """Mark assistant response tokens: index >= t, header ids excluded."""
    T = len(seq.ids)
    t = seq.first_assistant_index
    if not 0 <= t <= T:
        raise MalformedSequenceError(f"first_assistant_index {t} outside [0, {T}]")
    hdr = vocab.specials.assistant_header
    mask = [i >= t and seq.ids[i] != hdr for i in range(T)]
    return TokenSequence(seq.ids, t, seq.image_spans, mask).validate(vocab)


def masked_cross_entropy(logits: np.ndarray, seq: TokenSequence) -> float:
    """Sum of -log softmax(logits[i-1])[ids[i]] over masked positions.

    Next-token convention: row i-1 scores the token at position i, so the
    final logits row never contributes and position 0 can never be masked.
    """
    logits = np.asarray(logits, dtype=np.float64)
    T = len(seq.ids)
    if logits.ndim != 2 or logits.shape[0] != T:
        raise DimensionError(f"logits shape {logits.shape} does not match T={T}")
    if len(seq.supervision_mask) != T:
        raise DimensionError("mask length != sequence length")
    if T and seq.supervision_mask[0]:
        raise MalformedSequenceError("position 0 cannot be supervised (no preceding row)")
    idx = np.nonzero(seq.supervision_mask)[0]
    if idx.size == 0:
        return 0.0
    rows = logits[idx - 1]
    m = rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(rows - m), axis=1))
    ids = np.asarray(seq.ids, dtype=np.intp)
    picked = rows[np.arange(idx.size), ids[idx]]
    return float(np.sum(lse - picked))
