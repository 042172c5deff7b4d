"""Reference predictor server for the ``mdm-pred/1`` stdio protocol.

Speaks newline-delimited UTF-8 JSON: one handshake line on startup, then
exactly one response line per request line, ids echoed back in order.
Malformed input produces an ``{"id": ..., "error": ...}`` object and the
loop continues; only a broken stdio stream is fatal.

Two toy predictor kinds are built in:

* ``echo-reference`` proposes the configured reference token for every
  masked position and scores it with a parametric confidence curve (low at
  block edges, peaked in between) plus optional deterministic hash jitter.
  Given the same curve parameters and seed it is bit-for-bit compatible
  with an engine-side scripted predictor, which is what the golden test
  checks.
* ``uniform-random`` proposes seeded pseudo-random tokens and confidences,
  useful for protocol soak testing.

To wire a real model runtime instead, replace :func:`predict_with_model`
and route requests to it; the protocol layer stays unchanged.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import struct
import sys
from dataclasses import dataclass, field
from typing import IO, Sequence


def unit_hash(seed: int, prompt: Sequence[int], block: int, step: int, position: int) -> float:
    """Deterministic value in [0, 1); must match the engine's hash exactly."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", seed))
    h.update(struct.pack("<I", len(prompt)))
    for tok in prompt:
        h.update(struct.pack("<Q", tok))
    h.update(struct.pack("<III", block, step, position))
    return int.from_bytes(h.digest(), "little") / 2.0**64


@dataclass(frozen=True)
class Schedule:
    c_peak: float = 0.95
    c_edge: float = 0.80
    t_peak: float = 0.5
    jitter_scale: float = 0.0


def curve_confidence(
    schedule: Schedule,
    seed: int,
    prompt: Sequence[int],
    block: int,
    step: int,
    steps_estimate: int,
    position: int,
) -> float:
    t = step / max(steps_estimate - 1, 1)
    spread = max(schedule.t_peak, 1.0 - schedule.t_peak)
    base = schedule.c_peak - (schedule.c_peak - schedule.c_edge) * ((t - schedule.t_peak) / spread) ** 2
    if schedule.jitter_scale > 0.0:
        jitter = 2.0 * unit_hash(seed, prompt, block, step, position) - 1.0
        base += jitter * schedule.jitter_scale
    return min(max(base, 1e-6), 1.0)


@dataclass
class ServerConfig:
    vocab: int = 257
    mask_id: int = 256
    kind: str = "echo-reference"
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    # (prompt tokens, reference tokens) pairs for echo-reference
    references: list[tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=list)
    pad_token: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.mask_id < self.vocab:
            raise ValueError(f"mask_id {self.mask_id} outside vocab {self.vocab}")
        if self.kind not in ("echo-reference", "uniform-random"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")


def load_references(path: str) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Read (prompt, reference) pairs from a JSONL dataset file."""

    def tokens(value) -> tuple[int, ...]:
        if isinstance(value, str):
            return tuple(value.encode("utf-8"))
        return tuple(int(t) for t in value)

    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                pairs.append((tokens(obj["prompt"]), tokens(obj["reference"])))
    return pairs


class RequestError(Exception):
    pass


def _match_prompt(
    config: ServerConfig, tokens: list[int], start: int, block_len: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Find the configured prompt this request belongs to.

    The prompt must be a prefix of the token buffer and leave the block
    grid aligned (the block start sits a whole number of blocks past it).
    The longest consistent prefix wins.
    """
    best = None
    for prompt, reference in config.references:
        plen = len(prompt)
        if plen <= len(tokens) and tuple(tokens[:plen]) == prompt:
            if start >= plen and (start - plen) % block_len == 0:
                if best is None or plen > len(best[0]):
                    best = (prompt, reference)
    if best is None:
        raise RequestError("no configured reference matches the request's prompt prefix")
    return best


def _echo_reference_entries(
    config: ServerConfig, tokens: list[int], start: int, end: int, step: int
) -> list[dict]:
    block_len = end - start
    prompt, reference = _match_prompt(config, tokens, start, block_len)
    plen = len(prompt)
    block = (start - plen) // block_len + 1
    entries = []
    for pos in range(start, end):
        if tokens[pos] != config.mask_id:
            continue
        offset = pos - plen
        token = reference[offset] if offset < len(reference) else config.pad_token
        conf = curve_confidence(
            config.schedule, config.seed, prompt, block, step, block_len, pos
        )
        entries.append({"pos": pos, "token": token, "conf": conf})
    return entries


def _uniform_random_entries(
    config: ServerConfig, tokens: list[int], start: int, end: int, step: int
) -> list[dict]:
    entries = []
    for pos in range(start, end):
        if tokens[pos] != config.mask_id:
            continue
        u_tok = unit_hash(config.seed, (start,), 0, step, pos)
        u_conf = unit_hash(config.seed + 1, (start,), 0, step, pos)
        token = int(u_tok * (config.vocab - 1))
        if token >= config.mask_id:
            token += 1
        entries.append({"pos": pos, "token": token, "conf": max(u_conf, 1e-6)})
    return entries


def predict_with_model(request: dict) -> list[dict]:
    """Adapter seam for a real masked-diffusion runtime.

    Implement this to run a forward pass over ``request["tokens"]`` and
    return one ``{"pos", "token", "conf"}`` entry per masked position in
    ``request["block"]``, where ``conf`` is the proposed token's
    probability in (0, 1]. Then dispatch to it from :func:`handle_request`
    under a new ``kind``. Nothing else in the protocol layer changes.
    """
    raise NotImplementedError("plug a model runtime in here")


def handle_request(config: ServerConfig, line: str) -> dict:
    """One request line in, one response object out (never raises)."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"malformed JSON: {exc}"}
    req_id = req.get("id")
    try:
        tokens = [int(t) for t in req["tokens"]]
        start, end = (int(x) for x in req["block"])
        step = int(req["step"])
        if not 0 <= start < end <= len(tokens):
            raise RequestError(f"block [{start},{end}) outside the token buffer")
        if config.kind == "echo-reference":
            entries = _echo_reference_entries(config, tokens, start, end, step)
        else:
            entries = _uniform_random_entries(config, tokens, start, end, step)
        return {"id": req_id, "entries": entries}
    except (KeyError, TypeError, ValueError) as exc:
        return {"id": req_id, "error": f"bad request: {exc}"}
    except RequestError as exc:
        return {"id": req_id, "error": str(exc)}


def serve(config: ServerConfig, in_stream: IO[str], out_stream: IO[str]) -> None:
    """Handshake, then answer every request line until the stream closes."""
    handshake = {"proto": "mdm-pred/1", "vocab": config.vocab, "mask_id": config.mask_id}
    out_stream.write(json.dumps(handshake) + "\n")
    out_stream.flush()
    for line in in_stream:
        if not line.strip():
            continue
        out_stream.write(json.dumps(handle_request(config, line)) + "\n")
        out_stream.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdm-bridge", description="Reference mdm-pred/1 predictor server (stdio)"
    )
    parser.add_argument("--kind", default="echo-reference", choices=["echo-reference", "uniform-random"])
    parser.add_argument("--dataset", default=None, help="JSONL with prompt/reference pairs")
    parser.add_argument("--vocab", type=int, default=257)
    parser.add_argument("--mask-id", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--c-peak", type=float, default=0.95)
    parser.add_argument("--c-edge", type=float, default=0.80)
    parser.add_argument("--t-peak", type=float, default=0.5)
    parser.add_argument("--jitter", type=float, default=0.0)
    args = parser.parse_args(argv)

    references = load_references(args.dataset) if args.dataset else []
    if args.kind == "echo-reference" and not references:
        parser.error("--kind echo-reference requires --dataset")
    config = ServerConfig(
        vocab=args.vocab,
        mask_id=args.mask_id,
        kind=args.kind,
        seed=args.seed,
        schedule=Schedule(
            c_peak=args.c_peak, c_edge=args.c_edge, t_peak=args.t_peak, jitter_scale=args.jitter
        ),
        references=references,
    )
    try:
        serve(config, sys.stdin, sys.stdout)
    except (BrokenPipeError, OSError):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
