"""Sequence state machine for block-wise masked decoding.

A sequence is a fixed-length token buffer: an immutable prompt prefix
followed by a generation region partitioned into contiguous blocks that are
decoded left-to-right. Within the active block, positions are committed
(unmasked) irreversibly over denoising steps. All operations are pure:
they validate their inputs and return fresh values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .errors import EngineError

TokenId = int


@dataclass(frozen=True)
class BlockLayout:
    """Prompt/generation split and the block partition of the generation region."""

    prompt_len: int
    gen_len: int
    block_len: int

    def __post_init__(self) -> None:
        if self.prompt_len < 0:
            raise EngineError("INVALID_LAYOUT", f"prompt_len must be >= 0, got {self.prompt_len}")
        if self.gen_len < 1:
            raise EngineError("EMPTY_GENERATION", "gen_len must be >= 1")
        if self.block_len < 1 or self.gen_len % self.block_len != 0:
            raise EngineError(
                "NON_DIVISIBLE_LENGTH",
                f"block_len {self.block_len} must be >= 1 and divide gen_len {self.gen_len}",
            )

    @property
    def num_blocks(self) -> int:
        return self.gen_len // self.block_len

    @property
    def total_len(self) -> int:
        return self.prompt_len + self.gen_len

    def block_range(self, block: int) -> range:
        """Absolute positions covered by 1-based block index ``block``."""
        if not 1 <= block <= self.num_blocks:
            raise EngineError(
                "BLOCK_OUT_OF_RANGE",
                f"block {block} outside 1..{self.num_blocks}",
            )
        start = self.prompt_len + (block - 1) * self.block_len
        return range(start, start + self.block_len)


@dataclass(frozen=True)
class UnmaskSelection:
    """Positions (and their tokens) committed by one denoising step."""

    block: int
    step: int
    positions: tuple[int, ...]
    tokens: tuple[TokenId, ...]
    fallback_used: bool = False

    def __post_init__(self) -> None:
        if not self.positions:
            raise EngineError("EMPTY_SELECTION", "a selection must commit at least one position")
        if len(self.positions) != len(self.tokens):
            raise EngineError(
                "INVALID_SELECTION",
                f"{len(self.positions)} positions but {len(self.tokens)} tokens",
            )


@dataclass(frozen=True)
class SequenceState:
    """Token buffer with mask flags. Masked slots hold the mask token id."""

    tokens: tuple[TokenId, ...]
    masked: tuple[bool, ...]
    layout: BlockLayout
    mask_id: TokenId

    @property
    def prompt(self) -> tuple[TokenId, ...]:
        return self.tokens[: self.layout.prompt_len]

    @property
    def generated(self) -> tuple[TokenId, ...]:
        return self.tokens[self.layout.prompt_len :]

    def masked_count(self) -> int:
        return sum(self.masked)


def init_sequence(
    prompt: Sequence[TokenId], gen_len: int, block_len: int, mask_id: TokenId
) -> SequenceState:
    """Build a fresh state: prompt copied verbatim, generation region fully masked."""
    if gen_len < 1:
        raise EngineError("EMPTY_GENERATION", "gen_len must be >= 1")
    layout = BlockLayout(prompt_len=len(prompt), gen_len=gen_len, block_len=block_len)
    prompt_tokens = tuple(int(t) for t in prompt)
    for tok in prompt_tokens:
        if tok < 0 or tok == mask_id:
            raise EngineError("INVALID_PROMPT_TOKEN", f"prompt token {tok} is invalid")
    tokens = prompt_tokens + (mask_id,) * gen_len
    masked = (False,) * len(prompt_tokens) + (True,) * gen_len
    return SequenceState(tokens=tokens, masked=masked, layout=layout, mask_id=mask_id)


def masked_in_block(state: SequenceState, block: int) -> set[int]:
    """Absolute positions of block ``block`` that are still masked."""
    return {p for p in state.layout.block_range(block) if state.masked[p]}


def unmask_and_update(state: SequenceState, sel: UnmaskSelection) -> SequenceState:
    """Commit ``sel``: write its tokens and clear mask flags at its positions."""
    block_positions = state.layout.block_range(sel.block)
    tokens = list(state.tokens)
    masked = list(state.masked)
    for pos, tok in zip(sel.positions, sel.tokens):
        if pos not in block_positions:
            raise EngineError(
                "POSITION_OUTSIDE_BLOCK",
                f"position {pos} not in block {sel.block} ({block_positions})",
            )
        if not masked[pos]:
            raise EngineError("POSITION_NOT_MASKED", f"position {pos} already committed")
        if tok < 0 or tok == state.mask_id:
            raise EngineError("INVALID_COMMIT_TOKEN", f"cannot commit token {tok} at {pos}")
        tokens[pos] = int(tok)
        masked[pos] = False
    return SequenceState(
        tokens=tuple(tokens), masked=tuple(masked), layout=state.layout, mask_id=state.mask_id
    )


def state_to_json(state: SequenceState) -> dict[str, Any]:
    """Serialize for trace files. Key names are part of the file format."""
    return {
        "prompt": list(state.prompt),
        "tokens": list(state.tokens),
        "masked": list(state.masked),
        "block_len": state.layout.block_len,
    }


def state_from_json(obj: dict[str, Any], mask_id: TokenId | None = None) -> SequenceState:
    """Inverse of :func:`state_to_json`.

    ``mask_id`` may be omitted for fully decoded states; otherwise it is
    recovered from the first masked slot.
    """
    prompt = [int(t) for t in obj["prompt"]]
    tokens = [int(t) for t in obj["tokens"]]
    masked = [bool(m) for m in obj["masked"]]
    if len(tokens) != len(masked):
        raise EngineError("INVALID_STATE_JSON", "tokens and masked lengths differ")
    if mask_id is None:
        mask_id = next((tokens[i] for i in range(len(masked)) if masked[i]), -1)
    layout = BlockLayout(
        prompt_len=len(prompt),
        gen_len=len(tokens) - len(prompt),
        block_len=int(obj["block_len"]),
    )
    return SequenceState(tokens=tuple(tokens), masked=tuple(masked), layout=layout, mask_id=mask_id)
