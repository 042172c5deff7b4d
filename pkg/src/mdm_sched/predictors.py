"""Mask-predictor contract and built-in deterministic predictors.

A predictor answers one denoising step: for every still-masked position of
the active block it proposes a token and a confidence in (0, 1]. Built-ins
are desk-scale stand-ins for a real masked-diffusion runtime:

* ``ScriptedPredictor`` always proposes a per-prompt reference token and
  emits confidences that follow a parametric rise-peak-fall curve over the
  step axis, optionally perturbed by deterministic hash jitter.
* ``BigramPredictor`` proposes the argmax continuation of an
  additively-smoothed bigram table.

Both are immutable after construction and safe to share across decodes.
"""

from __future__ import annotations

import hashlib
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EngineError
from .seqstate import SequenceState, TokenId, masked_in_block

# Byte-level vocabulary used by the harness tokenizer: ids 0..255 are raw
# bytes, 256 is the reserved mask id.
BYTE_VOCAB_SIZE = 257
BYTE_MASK_ID = 256
PAD_TOKEN = 0

CONFIDENCE_FLOOR = 1e-6


@dataclass(frozen=True)
class PredictionFrame:
    """One step's proposals: masked position -> (token, confidence)."""

    block: int
    step: int
    entries: dict[int, tuple[TokenId, float]]

    def positions(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))

    def confidences(self) -> tuple[float, ...]:
        """Confidences in ascending position order."""
        return tuple(self.entries[p][1] for p in sorted(self.entries))


class Predictor(ABC):
    """Contract every predictor implements. One call = one invocation."""

    vocab_size: int
    mask_id: TokenId

    @abstractmethod
    def predict(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        """Propose (token, confidence) for every masked position of ``block``.

        Must be deterministic given (state, block, step) and the predictor's
        own configuration. Raises ``EMPTY_BLOCK`` when nothing is masked.
        """

    def close(self) -> None:
        """Release external resources. Built-ins hold none."""

    def _masked_or_raise(self, state: SequenceState, block: int) -> list[int]:
        positions = sorted(masked_in_block(state, block))
        if not positions:
            raise EngineError("EMPTY_BLOCK", f"no masked positions in block {block}")
        return positions


def stable_unit_hash(
    seed: int, prompt: Sequence[TokenId], block: int, step: int, position: int
) -> float:
    """Deterministic value in [0, 1) from (seed, prompt tokens, b, s, position).

    Keyed on the prompt's token content (not an external id) so that any
    process — including a wire-protocol server — can reproduce it.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", seed))
    h.update(struct.pack("<I", len(prompt)))
    for tok in prompt:
        h.update(struct.pack("<Q", tok))
    h.update(struct.pack("<III", block, step, position))
    return int.from_bytes(h.digest(), "little") / 2.0**64


@dataclass(frozen=True)
class ScriptedSchedule:
    """Parametric confidence curve: low at the block edges, peaked in between.

    ``base(t) = c_peak - (c_peak - c_edge) * ((t - t_peak) / max(t_peak, 1 - t_peak))**2``
    with t the normalized step index. Jitter (when enabled) is hash-based and
    reproducible regardless of evaluation order.
    """

    c_peak: float = 0.95
    c_edge: float = 0.80
    t_peak: float = 0.5
    jitter_scale: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.c_edge <= self.c_peak <= 1.0):
            raise EngineError(
                "INVALID_SCHEDULE", f"need 0 < c_edge <= c_peak <= 1, got {self.c_edge}, {self.c_peak}"
            )
        if not (0.0 <= self.t_peak <= 1.0):
            raise EngineError("INVALID_SCHEDULE", f"t_peak must be in [0,1], got {self.t_peak}")
        if self.jitter_scale < 0.0:
            raise EngineError("INVALID_SCHEDULE", "jitter_scale must be >= 0")


def scripted_confidence(
    block: int,
    step: int,
    steps_estimate: int,
    position: int,
    schedule: ScriptedSchedule,
    prompt: Sequence[TokenId] = (),
) -> float:
    """Confidence for one (block, step, position) under a scripted schedule.

    Total function: output is clamped to [1e-6, 1].
    """
    if steps_estimate < 1:
        raise EngineError("INVALID_SCHEDULE", "steps_estimate must be >= 1")
    t = step / max(steps_estimate - 1, 1)
    spread = max(schedule.t_peak, 1.0 - schedule.t_peak)
    base = schedule.c_peak - (schedule.c_peak - schedule.c_edge) * ((t - schedule.t_peak) / spread) ** 2
    if schedule.jitter_scale > 0.0:
        jitter = 2.0 * stable_unit_hash(schedule.seed, prompt, block, step, position) - 1.0
        base += jitter * schedule.jitter_scale
    return min(max(base, CONFIDENCE_FLOOR), 1.0)


class ScriptedPredictor(Predictor):
    """Echoes per-prompt reference tokens with scripted confidences.

    ``references`` maps a prompt (token tuple) to the target generation
    tokens. Positions beyond the reference get the pad token. The step axis
    is normalized by ``steps_estimate`` (default: the block length, an upper
    bound on steps per block).
    """

    def __init__(
        self,
        schedule: ScriptedSchedule,
        references: Mapping[Sequence[TokenId], Sequence[TokenId]],
        vocab_size: int = BYTE_VOCAB_SIZE,
        mask_id: TokenId = BYTE_MASK_ID,
        steps_estimate: int | None = None,
        pad_token: TokenId = PAD_TOKEN,
    ) -> None:
        self.schedule = schedule
        self.references = {tuple(k): tuple(v) for k, v in references.items()}
        self.vocab_size = vocab_size
        self.mask_id = mask_id
        self.steps_estimate = steps_estimate
        self.pad_token = pad_token

    def predict(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        positions = self._masked_or_raise(state, block)
        prompt = state.prompt
        try:
            reference = self.references[prompt]
        except KeyError:
            raise EngineError("UNKNOWN_PROMPT", f"no reference for prompt of length {len(prompt)}")
        s_est = self.steps_estimate or state.layout.block_len
        entries: dict[int, tuple[TokenId, float]] = {}
        for pos in positions:
            offset = pos - state.layout.prompt_len
            token = reference[offset] if offset < len(reference) else self.pad_token
            conf = scripted_confidence(block, step, s_est, pos, self.schedule, prompt)
            entries[pos] = (token, conf)
        return PredictionFrame(block=block, step=step, entries=entries)


def constant_predictor(
    confidence: float,
    references: Mapping[Sequence[TokenId], Sequence[TokenId]],
    **kwargs,
) -> ScriptedPredictor:
    """Scripted predictor whose every confidence equals ``confidence``."""
    schedule = ScriptedSchedule(c_peak=confidence, c_edge=confidence, jitter_scale=0.0)
    return ScriptedPredictor(schedule, references, **kwargs)


@dataclass(frozen=True)
class BigramModel:
    """Additively smoothed first-order transition table."""

    vocab_size: int
    counts: np.ndarray = field(repr=False)
    alpha: float

    def row_distribution(self, context: TokenId) -> np.ndarray:
        """P(next | context) with add-alpha smoothing; sums to 1."""
        row = self.counts[context].astype(np.float64)
        return (row + self.alpha) / (row.sum() + self.alpha * self.vocab_size)


def bigram_fit(
    corpus: Iterable[Sequence[TokenId]], vocab_size: int, alpha: float
) -> BigramModel:
    """Count adjacent pairs within each corpus sequence."""
    if vocab_size < 2:
        raise EngineError("INVALID_VOCAB", f"vocab_size must be >= 2, got {vocab_size}")
    if alpha <= 0.0:
        raise EngineError("INVALID_SMOOTHING", f"alpha must be > 0, got {alpha}")
    counts = np.zeros((vocab_size, vocab_size), dtype=np.int64)
    empty = True
    for seq in corpus:
        seq = list(seq)
        if seq:
            empty = False
        for a, b in zip(seq, seq[1:]):
            counts[a, b] += 1
    if empty:
        raise EngineError("EMPTY_CORPUS", "bigram_fit needs at least one non-empty sequence")
    return BigramModel(vocab_size=vocab_size, counts=counts, alpha=alpha)


class BigramPredictor(Predictor):
    """Greedy bigram continuation.

    Each masked position is predicted from its nearest unmasked left
    neighbor (a prompt token when the whole block prefix is still masked);
    token id 0 stands in as start context for empty prompts. Confidence is
    the smoothed row maximum, ties resolved to the lowest token id.
    """

    def __init__(self, model: BigramModel, mask_id: TokenId = BYTE_MASK_ID) -> None:
        self.model = model
        self.vocab_size = model.vocab_size
        self.mask_id = mask_id

    def _context_for(self, state: SequenceState, pos: int) -> TokenId:
        for left in range(pos - 1, -1, -1):
            if not state.masked[left]:
                return state.tokens[left]
        return 0

    def predict(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        positions = self._masked_or_raise(state, block)
        entries: dict[int, tuple[TokenId, float]] = {}
        for pos in positions:
            dist = self.model.row_distribution(self._context_for(state, pos))
            token = int(np.argmax(dist))
            entries[pos] = (token, float(dist[token]))
        return PredictionFrame(block=block, step=step, entries=entries)


def tokenize_text(text: str) -> tuple[TokenId, ...]:
    """Byte-level tokenization used by every built-in predictor."""
    return tuple(text.encode("utf-8"))


def detokenize(tokens: Sequence[TokenId]) -> str:
    """Best-effort inverse of :func:`tokenize_text` (pad/mask bytes dropped)."""
    return bytes(t for t in tokens if 0 <= t < 256).decode("utf-8", errors="replace")
