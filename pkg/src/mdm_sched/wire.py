"""Wire protocol for external predictor processes.

Newline-delimited UTF-8 JSON over stdio (or any line-oriented stream pair).
The server speaks first with a handshake line; after that, one request line
yields exactly one response line:

    handshake: {"proto": "mdm-pred/1", "vocab": int, "mask_id": int}
    request:   {"id": u64, "tokens": [int], "mask_id": int, "block": [start, end), "step": int}
    response:  {"id": u64, "entries": [{"pos": int, "token": int, "conf": float}]}

Sessions are single-flight: one in-flight request at a time, ids strictly
increasing. Concurrent sequences need separate sessions.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from typing import IO, Sequence

from .errors import EngineError
from .predictors import PredictionFrame, Predictor
from .seqstate import SequenceState, TokenId, masked_in_block

PROTOCOL_VERSION = "mdm-pred/1"


def encode_request(request_id: int, state: SequenceState, block: int, step: int) -> str:
    """One request line (newline-terminated) for the masked positions of ``block``."""
    rng = state.layout.block_range(block)
    payload = {
        "id": request_id,
        "tokens": list(state.tokens),
        "mask_id": state.mask_id,
        "block": [rng.start, rng.stop],
        "step": step,
    }
    return json.dumps(payload) + "\n"


def parse_handshake(line: str) -> tuple[int, int]:
    """Validate the server's first line; returns (vocab_size, mask_id)."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EngineError("MALFORMED_RESPONSE", f"bad handshake line: {exc}") from exc
    proto = obj.get("proto")
    if proto != PROTOCOL_VERSION:
        raise EngineError(
            "PROTOCOL_MISMATCH", f"server speaks {proto!r}, client needs {PROTOCOL_VERSION!r}"
        )
    try:
        return int(obj["vocab"]), int(obj["mask_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EngineError("MALFORMED_RESPONSE", f"handshake missing vocab/mask_id: {exc}") from exc


def decode_response(
    line: str, request_id: int, block: int, step: int, expected_positions: Sequence[int]
) -> PredictionFrame:
    """Parse a response line and check id match and exact position coverage."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EngineError("MALFORMED_RESPONSE", f"response is not valid JSON: {exc}") from exc
    if "error" in obj:
        raise EngineError("MALFORMED_RESPONSE", f"server error: {obj['error']}")
    if obj.get("id") != request_id:
        raise EngineError("ID_MISMATCH", f"expected id {request_id}, got {obj.get('id')}")
    raw_entries = obj.get("entries")
    if not isinstance(raw_entries, list):
        raise EngineError("MALFORMED_RESPONSE", "response lacks an entries list")
    entries: dict[int, tuple[TokenId, float]] = {}
    for item in raw_entries:
        try:
            pos, token, conf = int(item["pos"]), int(item["token"]), float(item["conf"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EngineError("MALFORMED_RESPONSE", f"bad entry {item!r}") from exc
        if not 0.0 < conf <= 1.0:
            raise EngineError("MALFORMED_RESPONSE", f"confidence {conf} outside (0,1] at {pos}")
        entries[pos] = (token, conf)
    expected = set(expected_positions)
    if set(entries) - expected:
        raise EngineError(
            "MALFORMED_RESPONSE", f"unexpected positions {sorted(set(entries) - expected)}"
        )
    if expected - set(entries):
        raise EngineError(
            "INCOMPLETE_COVERAGE", f"missing masked positions {sorted(expected - set(entries))}"
        )
    return PredictionFrame(block=block, step=step, entries=entries)


class WireClient:
    """Session over a (reader, writer) stream pair. Performs the handshake eagerly."""

    def __init__(self, reader: IO[str], writer: IO[str]) -> None:
        self._reader = reader
        self._writer = writer
        self._next_id = 0
        line = self._read_line()
        self.vocab_size, self.mask_id = parse_handshake(line)

    def _read_line(self) -> str:
        try:
            line = self._reader.readline()
        except (OSError, ValueError) as exc:
            raise EngineError("PREDICTOR_UNAVAILABLE", f"read failed: {exc}") from exc
        if not line:
            raise EngineError("PREDICTOR_UNAVAILABLE", "server closed the stream")
        return line

    def request(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        request_id = self._next_id
        self._next_id += 1
        expected = sorted(masked_in_block(state, block))
        try:
            self._writer.write(encode_request(request_id, state, block, step))
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise EngineError("PREDICTOR_UNAVAILABLE", f"write failed: {exc}") from exc
        return decode_response(self._read_line(), request_id, block, step, expected)


class ExternPredictor(Predictor):
    """Predictor backed by an external server process launched over stdio."""

    def __init__(self, command: str | Sequence[str]) -> None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise EngineError("PREDICTOR_UNAVAILABLE", f"cannot launch {argv!r}: {exc}") from exc
        assert self._proc.stdin is not None and self._proc.stdout is not None
        try:
            self._client = WireClient(self._proc.stdout, self._proc.stdin)
        except EngineError:
            self._proc.kill()
            self._proc.wait()
            raise
        self.vocab_size = self._client.vocab_size
        self.mask_id = self._client.mask_id

    def predict(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        self._masked_or_raise(state, block)
        if self._proc.poll() is not None:
            raise EngineError(
                "PREDICTOR_UNAVAILABLE", f"server exited with code {self._proc.returncode}"
            )
        return self._client.request(state, block, step)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternPredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
