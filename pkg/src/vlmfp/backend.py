"""Prompt assembly and a deterministic mock inference backend.

The backend abstraction lets the harness measure time-to-first-token and
throughput end-to-end without model weights: token generation is a
SHA-256 hash chain over the prompt ids (reproducible across runs and
platforms), while durations come from an explicit latency model instead
of GPU execution.  Everything the front-end does — decoding, tiling,
normalization, tokenization, staging, transfer — stays real; only the
forward passes are modeled.

``assemble`` is the contract point between the tiler and the tokenizer:
the placeholder spans spliced into the prompt must account for exactly
the number of visual tokens the tile plan produces after space-to-depth
compression, and any drift between the two is surfaced as an error
rather than silent garbage.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AssemblyError, ConfigError, DomainError
from .imgproc import TilePlan
from .profiling import span_scope
from .tokenizer import TokenSequence
from .tokenred import TokenReductionConfig, visual_token_count

__all__ = [
    "AssembledSequence",
    "DecodeResult",
    "GenerateResult",
    "LatencyModel",
    "MockBackend",
    "PrefillResult",
    "assemble",
    "create_backend",
]


@dataclass(frozen=True)
class LatencyModel:
    """Modeled GPU-side timing: fixed dispatch overhead plus linear terms."""

    sched_overhead_s: float = 0.0005
    prefill_per_token_s: float = 1.5e-6
    decode_per_token_s: float = 0.0004

    def __post_init__(self) -> None:
        for name in ("sched_overhead_s", "prefill_per_token_s", "decode_per_token_s"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")


@dataclass(frozen=True)
class AssembledSequence:
    """Prompt ids with the visual/text split already accounted for."""

    ids: list[int]
    n_visual: int
    n_text: int


@dataclass(frozen=True)
class PrefillResult:
    first_token_id: int
    duration_s: float
    deferred_result: object = None


@dataclass(frozen=True)
class DecodeResult:
    token_ids: list[int]
    per_token_s: list[float]

    @property
    def duration_s(self) -> float:
        return sum(self.per_token_s)


@dataclass(frozen=True)
class GenerateResult:
    token_ids: list[int]
    prefill: PrefillResult
    decode: DecodeResult


def assemble(
    seq: TokenSequence, plan: Optional[TilePlan], tr_cfg: TokenReductionConfig
) -> AssembledSequence:
    """Validate that placeholder spans match the plan's visual budget.

    ``plan`` is ``None`` for text-only requests, where no visual tokens
    are expected.  The ids pass through unchanged; assembly only checks
    the contract and computes the visual/text split.
    """
    got = sum(length for _, length in seq.image_spans)
    expected = (
        0 if plan is None else visual_token_count(plan, tr_cfg.patch_edge, tr_cfg.r)
    )
    if got != expected:
        raise AssemblyError(expected=expected, got=got)
    return AssembledSequence(
        ids=list(seq.ids), n_visual=got, n_text=len(seq.ids) - got
    )


_CHAIN_SALT = b"vlmfp.mock.hash-chain.v1\x00"


def _seed_digest(ids: list[int]) -> bytes:
    return hashlib.sha256(
        _CHAIN_SALT + np.asarray(ids, dtype="<i4").tobytes()
    ).digest()


def _token_of(digest: bytes, vocab_size: int) -> int:
    return int.from_bytes(digest[:8], "little") % vocab_size


class MockBackend:
    """Deterministic stand-in for an inference engine.

    The first generated token hashes the prompt ids; each subsequent
    token hashes the previous digest, so output depends only on the
    prompt — identical prompts yield identical generations no matter
    which latency recipes produced them.
    """

    name = "mock"

    def __init__(self, latency: LatencyModel, vocab_size: int) -> None:
        if vocab_size < 1:
            raise DomainError(f"vocab_size must be positive, got {vocab_size}")
        self.latency = latency
        self.vocab_size = vocab_size

    def prefill(
        self,
        assembled: AssembledSequence,
        deferred_normalize: Callable[[], object] | None = None,
    ) -> PrefillResult:
        """Produce the first token and the modeled prefill duration.

        When normalization was deferred past the transfer, the callable
        runs here — its wall time is measured and charged to prefill,
        which is where the work would land on a device-side pipeline.
        """
        with span_scope("prefill"):
            deferred_result = None
            deferred_s = 0.0
            if deferred_normalize is not None:
                start = time.perf_counter_ns()
                with span_scope("deferred_normalize"):
                    deferred_result = deferred_normalize()
                deferred_s = (time.perf_counter_ns() - start) / 1e9
            lm = self.latency
            duration = (
                lm.sched_overhead_s
                + lm.prefill_per_token_s * len(assembled.ids)
                + deferred_s
            )
            first = _token_of(_seed_digest(assembled.ids), self.vocab_size)
        return PrefillResult(
            first_token_id=first, duration_s=duration, deferred_result=deferred_result
        )

    def decode(self, assembled: AssembledSequence, n_tokens: int) -> DecodeResult:
        """Generate ``n_tokens`` ids after the first, with modeled timing."""
        if n_tokens < 0:
            raise DomainError(f"n_tokens must be >= 0, got {n_tokens}")
        ids: list[int] = []
        per_token: list[float] = []
        digest = _seed_digest(assembled.ids)
        with span_scope("generate"):
            for _ in range(n_tokens):
                digest = hashlib.sha256(digest).digest()
                ids.append(_token_of(digest, self.vocab_size))
                per_token.append(self.latency.decode_per_token_s)
        return DecodeResult(token_ids=ids, per_token_s=per_token)

    def generate(self, assembled: AssembledSequence, n_tokens: int) -> GenerateResult:
        """First token plus ``n_tokens - 1`` decoded continuations."""
        if n_tokens < 1:
            raise DomainError(f"n_tokens must be >= 1, got {n_tokens}")
        prefill = self.prefill(assembled)
        decode = self.decode(assembled, n_tokens - 1)
        return GenerateResult(
            token_ids=[prefill.first_token_id] + decode.token_ids,
            prefill=prefill,
            decode=decode,
        )


_BACKENDS = {MockBackend.name: MockBackend}


def create_backend(name: str, latency: LatencyModel, vocab_size: int) -> MockBackend:
    """Instantiate a registered backend by name."""
    try:
        cls = _BACKENDS[name]
    except KeyError:
        raise ConfigError(
            f"unknown backend {name!r}; available: {sorted(_BACKENDS)}"
        ) from None
    return cls(latency, vocab_size)
