"""Desk-scale toy tasks.

Real MDLM benchmarks need an 8B model; these two tasks exercise the same
control flow with deterministic predictors:

* copy task — the reference is a fixed transform of the prompt; paired with
  the scripted predictor (which echoes references), accuracy is always 1 and
  only the unmask schedule varies.
* cycle task — sequences walk a fixed token cycle; a bigram model fit on the
  dataset reproduces the continuation only when decoding stays effectively
  sequential, so aggressive parallelism trades accuracy for throughput.
"""

from __future__ import annotations

import random
from typing import Sequence


def _copy_reference(prompt: Sequence[int], gen_len: int) -> list[int]:
    # Cycle the prompt, shifting by +1 per wrap so the reference is not a verbatim copy.
    plen = len(prompt)
    return [(prompt[i % plen] + 1 + i // plen) % 256 for i in range(gen_len)]


def make_copy_dataset(
    n: int, prompt_len: int = 16, gen_len: int = 256, seed: int = 0
) -> list[dict]:
    """JSONL-ready items with random byte prompts and transformed references."""
    rng = random.Random(seed)
    items = []
    for i in range(n):
        prompt = [rng.randrange(256) for _ in range(prompt_len)]
        items.append(
            {"id": f"copy-{i:04d}", "prompt": prompt, "reference": _copy_reference(prompt, gen_len)}
        )
    return items


def make_cycle_dataset(
    n: int, prompt_len: int = 8, gen_len: int = 32, seed: int = 0, period: int = 7
) -> list[dict]:
    """Items whose prompt and reference walk the token cycle 1..period."""
    rng = random.Random(seed)
    items = []
    for i in range(n):
        start = rng.randrange(period)
        seq = [1 + (start + j) % period for j in range(prompt_len + gen_len)]
        items.append(
            {"id": f"cycle-{i:04d}", "prompt": seq[:prompt_len], "reference": seq[prompt_len:]}
        )
    return items
