"""Observational analytics over decode traces.

Covers the quantities that motivate dynamic thresholding: per-(block, step)
mean-confidence trajectories, their pairwise cosine similarity across
prompts, throughput metrics, and accuracy/throughput Pareto frontiers.
All functions are pure; file writers emit deterministic CSV/JSONL.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EngineError
from .strategies import ConfidenceRecord, DecodeTrace


@dataclass(frozen=True)
class TrajectoryVector:
    """Flat per-(block, step) mean confidences for one decode, ordered by (b, s)."""

    prompt_id: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class SimilarityMatrix:
    prompt_ids: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def min_off_diagonal(self) -> float:
        n = len(self.prompt_ids)
        return min(self.values[i][j] for i in range(n) for j in range(n) if i != j)


@dataclass(frozen=True)
class RunMetrics:
    accuracy: float
    tokens_per_second: float
    tokens_per_call: float
    mean_tokens_per_step: float
    predictor_calls: int
    generated_tokens: int


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    accuracy: float
    throughput: float


def stepblock_mean_vector(records: Sequence[ConfidenceRecord]) -> TrajectoryVector:
    """Mean confidence per (block, step) cell, flattened in (b, s) order.

    The records must form a dense grid: steps 0..S_b-1 for every block. A
    gap (a cell the grid expects but no record fills) is an error, as is an
    empty record list.
    """
    if not records:
        raise EngineError("EMPTY_RECORDS", "no records to summarize")
    cells: dict[tuple[int, int], list[float]] = {}
    for rec in records:
        cells.setdefault((rec.block, rec.step), []).extend(rec.values)
    values: list[float] = []
    for block in sorted({b for b, _ in cells}):
        steps = sorted(s for b, s in cells if b == block)
        if steps != list(range(len(steps))):
            missing = sorted(set(range(max(steps) + 1)) - set(steps))
            raise EngineError("EMPTY_RECORDS", f"block {block} missing steps {missing}")
        for s in steps:
            cell = cells[(block, s)]
            values.append(math.fsum(cell) / len(cell))
    return TrajectoryVector(prompt_id="", values=tuple(values))


def trajectory_from_trace(trace: DecodeTrace) -> TrajectoryVector:
    """Trajectory straight from a trace's per-step mean confidences."""
    records = [
        ConfidenceRecord(block=s.block, step=s.step, values=(s.mean_confidence,), scope="all-masked")
        for s in trace.steps
    ]
    vec = stepblock_mean_vector(records)
    return TrajectoryVector(prompt_id=trace.prompt_id, values=vec.values)


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise EngineError("LENGTH_MISMATCH", f"vector lengths {len(u)} != {len(v)}")
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise EngineError("ZERO_VECTOR", "cosine similarity of a zero vector is undefined")
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return min(max(value, -1.0), 1.0)


def pairwise_similarity(vectors: Sequence[TrajectoryVector]) -> SimilarityMatrix:
    """All-pairs cosine matrix; symmetric with unit diagonal."""
    if len(vectors) < 2:
        raise EngineError("LENGTH_MISMATCH", "pairwise similarity needs at least 2 vectors")
    lengths = {len(v.values) for v in vectors}
    if len(lengths) != 1:
        raise EngineError("LENGTH_MISMATCH", f"unequal trajectory lengths {sorted(lengths)}")
    n = len(vectors)
    matrix = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            value = cosine_similarity(vectors[i].values, vectors[j].values)
            matrix[i][j] = value
            matrix[j][i] = value
    return SimilarityMatrix(
        prompt_ids=tuple(v.prompt_id for v in vectors),
        values=tuple(tuple(row) for row in matrix),
    )


def run_metrics(traces: Sequence[DecodeTrace], correct: Sequence[bool]) -> RunMetrics:
    """Aggregate throughput and accuracy over one run's traces.

    ``tokens_per_call`` is the hardware-independent throughput proxy;
    wall-clock tokens/s is reported alongside it.
    """
    if not traces:
        raise EngineError("INCOMPLETE_TRACE", "no traces to aggregate")
    if len(traces) != len(correct):
        raise EngineError("ARITY_MISMATCH", f"{len(traces)} traces but {len(correct)} labels")
    for trace in traces:
        if trace.committed_total() != trace.generated_tokens:
            raise EngineError(
                "INCOMPLETE_TRACE",
                f"trace {trace.prompt_id!r} committed {trace.committed_total()} of "
                f"{trace.generated_tokens} tokens",
            )
    gen = sum(t.generated_tokens for t in traces)
    calls = sum(t.predictor_calls for t in traces)
    wall = sum(t.wall_time for t in traces)
    per_call = gen / calls
    return RunMetrics(
        accuracy=sum(map(bool, correct)) / len(correct),
        tokens_per_second=gen / wall if wall > 0 else float("inf"),
        tokens_per_call=per_call,
        mean_tokens_per_step=per_call,
        predictor_calls=calls,
        generated_tokens=gen,
    )


def _dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    return (
        a.accuracy >= b.accuracy
        and a.throughput >= b.throughput
        and (a.accuracy > b.accuracy or a.throughput > b.throughput)
    )


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points, sorted by throughput descending.

    Coordinate duplicates keep their first occurrence in input order.
    """
    if not points:
        raise EngineError("EMPTY_SAMPLE", "pareto_frontier of no points")
    deduped: list[ParetoPoint] = []
    seen: set[tuple[float, float]] = set()
    for p in points:
        key = (p.accuracy, p.throughput)
        if key not in seen:
            seen.add(key)
            deduped.append(p)
    frontier = [p for p in deduped if not any(_dominates(q, p) for q in deduped if q is not p)]
    return sorted(frontier, key=lambda p: (-p.throughput, -p.accuracy))


# ---------------------------------------------------------------------------
# Report files (the plot inputs replacing figure rendering)

def write_trajectories_jsonl(vectors: Iterable[TrajectoryVector], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for vec in vectors:
            fh.write(json.dumps({"prompt": vec.prompt_id, "values": list(vec.values)}) + "\n")


def write_similarity_csv(matrix: SimilarityMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(matrix.prompt_ids)
        for row in matrix.values:
            writer.writerow([repr(v) for v in row])


def write_metrics_csv(rows: Iterable[tuple[str, RunMetrics]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "accuracy", "tokens_per_second", "tokens_per_call", "predictor_calls"])
        for label, m in rows:
            writer.writerow(
                [label, repr(m.accuracy), repr(m.tokens_per_second), repr(m.tokens_per_call), m.predictor_calls]
            )


def write_frontier_csv(points: Iterable[ParetoPoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "accuracy", "throughput"])
        for p in points:
            writer.writerow([p.label, repr(p.accuracy), repr(p.throughput)])
