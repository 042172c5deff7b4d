"""Golden test: the engine driving this server over the wire must reproduce
its in-process predictor bit for bit.

The engine is consumed only through its CLI and file formats. Both runs use
the same confidence-curve parameters and seed; the traces (selections,
effective thresholds, per-step mean confidences) must be identical up to
the wall-time fields.
"""

from __future__ import annotations

import json
import random
import shlex
import subprocess
import sys
from pathlib import Path

import pytest

ENGINE = [sys.executable, "-m", "mdm_sched.cli"]
SEED = 7
GEN_LEN = 32
BLOCK_LEN = 8


@pytest.fixture(scope="module")
def dataset(tmp_path_factory) -> Path:
    rng = random.Random(1234)
    path = tmp_path_factory.mktemp("golden") / "ds.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(10):
            prompt = [rng.randrange(256) for _ in range(6)]
            reference = [rng.randrange(256) for _ in range(GEN_LEN)]
            fh.write(json.dumps({"id": f"g{i}", "prompt": prompt, "reference": reference}) + "\n")
    return path


def run_engine(*argv: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [*ENGINE, *argv], capture_output=True, text=True, timeout=120
    )


def scrub_time(obj):
    if isinstance(obj, dict):
        return {
            k: (0.0 if k in ("wall_time", "tokens_per_second") else scrub_time(v))
            for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [scrub_time(v) for v in obj]
    return obj


def normalized_traces(path: Path) -> list:
    return [scrub_time(json.loads(l)) for l in path.read_text().splitlines() if l.strip()]


def test_wire_round_trip_reproduces_in_process_traces(dataset, tmp_path):
    common = [
        "run", "--strategy", "osdt", "--dataset", str(dataset),
        "--gen-len", str(GEN_LEN), "--block-len", str(BLOCK_LEN),
        "--metric", "q1", "--cap", "0.8", "--slack", "0.1",
        "--seed", str(SEED),
    ]
    in_proc_out = tmp_path / "in-proc"
    wire_out = tmp_path / "wire"

    result = run_engine(*common, "--predictor", "noisy", "--out", str(in_proc_out))
    assert result.returncode == 0, result.stderr

    server_cmd = " ".join(
        shlex.quote(part)
        for part in [
            sys.executable, "-m", "mdm_bridge",
            "--kind", "echo-reference", "--dataset", str(dataset),
            "--seed", str(SEED), "--jitter", "0.02",
        ]
    )
    result = run_engine(
        *common, "--predictor", "extern", "--extern-cmd", server_cmd, "--out", str(wire_out)
    )
    assert result.returncode == 0, result.stderr

    in_proc = normalized_traces(in_proc_out / "traces.jsonl")
    wire = normalized_traces(wire_out / "traces.jsonl")
    assert len(wire) == 10
    assert wire == in_proc

    # calibrated profiles must agree exactly too
    assert (wire_out / "profile.json").read_bytes() == (in_proc_out / "profile.json").read_bytes()
    print("\nACCEPTANCE B1 wire golden test (10 prompts, exact trace equality): PASS")


def test_version_mismatch_is_rejected_cleanly(dataset, tmp_path):
    bad_server = (
        'import json; print(json.dumps({"proto": "mdm-pred/0", "vocab": 257, "mask_id": 256}), flush=True)'
    )
    cmd = " ".join(shlex.quote(p) for p in [sys.executable, "-c", bad_server])
    result = run_engine(
        "run", "--strategy", "static", "--dataset", str(dataset),
        "--gen-len", str(GEN_LEN), "--block-len", str(BLOCK_LEN),
        "--predictor", "extern", "--extern-cmd", cmd, "--out", str(tmp_path / "o"),
    )
    assert result.returncode == 2
    assert "PROTOCOL_MISMATCH" in result.stderr
    print("\nACCEPTANCE B1 handshake mismatch rejected cleanly: PASS")
