"""Dataset ingestion, run execution, grid sweeps, comparisons, and reports.

Everything here is deterministic given (dataset, predictor config, policy,
seed): two runs differ only in wall-time fields. Reports are written as
JSONL/CSV with stable key order and shortest-round-trip float formatting.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .analysis import ParetoPoint, RunMetrics, pareto_frontier, run_metrics, write_metrics_csv
from .errors import EngineError
from .predictors import (
    BYTE_MASK_ID,
    BYTE_VOCAB_SIZE,
    BigramPredictor,
    Predictor,
    ScriptedPredictor,
    ScriptedSchedule,
    bigram_fit,
    tokenize_text,
)
from .seqstate import SequenceState, TokenId, state_to_json
from .strategies import (
    DecodePolicy,
    DecodeTrace,
    ThresholdProfile,
    decode_fixed_quota,
    dynamic_threshold_generate,
    osdt_run,
    profile_to_json,
    static_threshold_generate,
)

TOOL_VERSION = "0.1.0"
NOISY_JITTER_SCALE = 0.02


@dataclass(frozen=True)
class DatasetItem:
    id: str
    prompt: tuple[TokenId, ...]
    reference: tuple[TokenId, ...]


def _coerce_tokens(value: Any, line_no: int, key: str) -> tuple[TokenId, ...]:
    if isinstance(value, str):
        return tokenize_text(value)
    if isinstance(value, list) and all(isinstance(t, int) and t >= 0 for t in value):
        return tuple(value)
    raise EngineError(
        "PARSE_ERROR", f"line {line_no}: {key!r} must be a string or list of non-negative ints"
    )


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """Read newline-delimited JSON items with keys id, prompt, reference.

    Text fields are tokenized to byte-level ids (the built-in vocabulary).
    """
    items: list[DatasetItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EngineError("PARSE_ERROR", f"line {line_no}: {exc}") from exc
            if not isinstance(obj, dict) or not {"id", "prompt", "reference"} <= set(obj):
                raise EngineError(
                    "PARSE_ERROR", f"line {line_no}: need keys id, prompt, reference"
                )
            item_id = str(obj["id"])
            if item_id in seen:
                raise EngineError("DUPLICATE_ID", f"line {line_no}: duplicate id {item_id!r}")
            seen.add(item_id)
            items.append(
                DatasetItem(
                    id=item_id,
                    prompt=_coerce_tokens(obj["prompt"], line_no, "prompt"),
                    reference=_coerce_tokens(obj["reference"], line_no, "reference"),
                )
            )
    return items


def save_dataset(items: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in items:
            fh.write(json.dumps(obj) + "\n")


def per_item_correct(
    answers: Sequence[Sequence[TokenId]], items: Sequence[DatasetItem]
) -> list[bool]:
    if len(answers) != len(items):
        raise EngineError("ARITY_MISMATCH", f"{len(answers)} answers for {len(items)} items")
    return [
        tuple(ans[: len(item.reference)]) == item.reference
        for ans, item in zip(answers, items)
    ]


def evaluate_exact_match(
    answers: Sequence[Sequence[TokenId]], items: Sequence[DatasetItem]
) -> float:
    """Fraction of answers matching the reference position-wise up to its length."""
    correct = per_item_correct(answers, items)
    return sum(correct) / len(correct)


def build_predictor(
    kind: str,
    items: Sequence[DatasetItem],
    seed: int = 0,
    jitter: float | None = None,
    extern_cmd: str | None = None,
    alpha: float = 0.1,
) -> Predictor:
    """Construct one of the built-in predictors (or an external client) for a dataset."""
    if kind == "extern":
        if not extern_cmd:
            raise EngineError("INVALID_POLICY", "--extern-cmd is required with the extern predictor")
        from .wire import ExternPredictor

        return ExternPredictor(extern_cmd)
    if kind in ("scripted", "noisy"):
        references = {}
        for item in items:
            if item.prompt in references and references[item.prompt] != item.reference:
                raise EngineError(
                    "DUPLICATE_ID", f"two references for the same prompt (item {item.id!r})"
                )
            references[item.prompt] = item.reference
        scale = jitter if jitter is not None else (NOISY_JITTER_SCALE if kind == "noisy" else 0.0)
        schedule = ScriptedSchedule(jitter_scale=scale, seed=seed)
        return ScriptedPredictor(schedule, references)
    if kind == "bigram":
        corpus = [item.prompt + item.reference for item in items]
        model = bigram_fit(corpus, BYTE_VOCAB_SIZE, alpha)
        return BigramPredictor(model, mask_id=BYTE_MASK_ID)
    raise EngineError("UNKNOWN_STRATEGY", f"unknown predictor kind {kind!r}")


@dataclass
class RunReport:
    """Everything one configuration produced, or the error that stopped it."""

    label: str
    policy: DecodePolicy
    seed: int
    version: str = TOOL_VERSION
    prompt_ids: list[str] = field(default_factory=list)
    answers: list[tuple[TokenId, ...]] = field(default_factory=list)
    states: list[SequenceState] = field(default_factory=list)
    traces: list[DecodeTrace] = field(default_factory=list)
    correct: list[bool] = field(default_factory=list)
    metrics: RunMetrics | None = None
    profile: ThresholdProfile | None = None
    error: str | None = None


def _check_reference_lengths(items: Sequence[DatasetItem], gen_len: int) -> None:
    for item in items:
        if len(item.reference) > gen_len:
            raise EngineError(
                "REFERENCE_TOO_LONG",
                f"item {item.id!r} reference ({len(item.reference)}) exceeds gen_len {gen_len}",
            )


def execute_policy(
    items: Sequence[DatasetItem],
    predictor: Predictor,
    policy: DecodePolicy,
    gen_len: int,
    block_len: int,
    label: str = "",
    seed: int = 0,
    profile: ThresholdProfile | None = None,
) -> RunReport:
    """Run one policy over a dataset and score it with exact match.

    For OSDT, a preloaded ``profile`` skips calibration and decodes every
    prompt on the dynamic path; otherwise the first prompt calibrates.
    """
    if not items:
        raise EngineError("EMPTY_DATASET", "no dataset items")
    _check_reference_lengths(items, gen_len)
    report = RunReport(label=label or policy.strategy, policy=policy, seed=seed)
    report.prompt_ids = [item.id for item in items]
    if policy.strategy == "fixed_quota":
        for item in items:
            outcome = decode_fixed_quota(
                item.prompt, predictor, policy.quota, gen_len, block_len,
                record_scope=policy.record_scope, prompt_id=item.id,
            )
            report.answers.append(outcome.state.generated)
            report.states.append(outcome.state)
            report.traces.append(outcome.trace)
    elif policy.strategy == "static":
        for item in items:
            state, trace, _ = static_threshold_generate(
                item.prompt, predictor, policy.tau_static, gen_len, block_len,
                record_scope=policy.record_scope, prompt_id=item.id,
            )
            report.answers.append(state.generated)
            report.states.append(state)
            report.traces.append(trace)
    elif policy.strategy == "osdt" and profile is not None:
        report.profile = profile
        for item in items:
            state, trace, _ = dynamic_threshold_generate(
                item.prompt, predictor, profile, policy.cap, policy.slack,
                gen_len, block_len, record_scope=policy.record_scope, prompt_id=item.id,
            )
            report.answers.append(state.generated)
            report.states.append(state)
            report.traces.append(trace)
    else:
        result = osdt_run(
            [item.prompt for item in items], predictor, policy, gen_len, block_len,
            prompt_ids=[item.id for item in items],
        )
        report.answers = result.answers
        report.states = result.states
        report.traces = result.traces
        report.profile = result.profile
    report.correct = per_item_correct(report.answers, items)
    report.metrics = run_metrics(report.traces, report.correct)
    return report


@dataclass(frozen=True)
class SweepGrid:
    """Hyperparameter grid: every (mode, metric, cap, slack) combination runs once."""

    modes: tuple[str, ...]
    metrics: tuple[str, ...]
    caps: tuple[float, ...]
    slacks: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (self.modes and self.metrics and self.caps and self.slacks):
            raise EngineError("INVALID_GRID", "every grid axis must be non-empty")
        from .strategies import METRICS, MODES

        if not set(self.modes) <= set(MODES) or not set(self.metrics) <= set(METRICS):
            raise EngineError("INVALID_GRID", "unknown mode or metric in grid")
        if any(not 0.0 < c <= 1.0 for c in self.caps):
            raise EngineError("INVALID_GRID", "caps must lie in (0,1]")
        if any(not 0.0 <= s < 1.0 for s in self.slacks):
            raise EngineError("INVALID_GRID", "slacks must lie in [0,1)")

    def size(self) -> int:
        return len(self.modes) * len(self.metrics) * len(self.caps) * len(self.slacks)


# The reference grid-search ranges for cap and slack.
FULL_SWEEP_GRID = SweepGrid(
    modes=("block", "step-block"),
    metrics=("mean", "q1", "q2", "q3", "min-whisker"),
    caps=(0.75, 0.8, 0.85, 0.9, 0.95),
    slacks=(0.01, 0.05, 0.1, 0.15, 0.2),
)


def grid_from_json(obj: dict[str, Any]) -> SweepGrid:
    try:
        return SweepGrid(
            modes=tuple(obj["modes"]),
            metrics=tuple(obj["metrics"]),
            caps=tuple(float(c) for c in obj["caps"]),
            slacks=tuple(float(s) for s in obj["slacks"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EngineError("INVALID_GRID", f"bad grid file: {exc}") from exc


def sweep_label(mode: str, metric: str, cap: float, slack: float) -> str:
    return f"osdt-{mode}-{metric}-cap{cap}-slack{slack}"


def sweep(
    items: Sequence[DatasetItem],
    predictor: Predictor,
    grid: SweepGrid,
    gen_len: int,
    block_len: int,
    calibration_tau: float = 0.9,
    record_scope: str = "accepted",
    seed: int = 0,
) -> list[RunReport]:
    """One OSDT run per grid point, calibration redone per run on prompt 1.

    A failing configuration is recorded as an error report; the sweep
    continues.
    """
    reports: list[RunReport] = []
    for mode, metric, cap, slack in itertools.product(
        grid.modes, grid.metrics, grid.caps, grid.slacks
    ):
        label = sweep_label(mode, metric, cap, slack)
        policy = DecodePolicy(
            strategy="osdt", mode=mode, metric=metric, cap=cap, slack=slack,
            calibration_tau=calibration_tau, record_scope=record_scope,
        )
        try:
            reports.append(
                execute_policy(items, predictor, policy, gen_len, block_len, label=label, seed=seed)
            )
        except EngineError as exc:
            reports.append(
                RunReport(label=label, policy=policy, seed=seed, error=f"{exc.code}: {exc.message}")
            )
    return reports


def compare(
    items: Sequence[DatasetItem],
    predictor: Predictor,
    policies: Sequence[tuple[str, DecodePolicy]],
    gen_len: int,
    block_len: int,
    seed: int = 0,
    frontier_metric: str = "tokens_per_call",
) -> tuple[list[RunReport], list[ParetoPoint]]:
    """Run each labeled policy and extract the accuracy/throughput frontier."""
    if not policies:
        raise EngineError("EMPTY_SAMPLE", "compare needs at least one policy")
    if frontier_metric not in ("tokens_per_call", "tokens_per_second"):
        raise EngineError("INVALID_POLICY", f"unknown frontier metric {frontier_metric!r}")
    reports = [
        execute_policy(items, predictor, policy, gen_len, block_len, label=label, seed=seed)
        for label, policy in policies
    ]
    points = [
        ParetoPoint(
            label=r.label,
            accuracy=r.metrics.accuracy,
            throughput=getattr(r.metrics, frontier_metric),
        )
        for r in reports
    ]
    return reports, pareto_frontier(points)


# ---------------------------------------------------------------------------
# Report files

def policy_to_json(policy: DecodePolicy) -> dict[str, Any]:
    return {
        "strategy": policy.strategy,
        "mode": policy.mode,
        "metric": policy.metric,
        "cap": policy.cap,
        "slack": policy.slack,
        "tau_static": policy.tau_static,
        "quota": policy.quota,
        "calibration_tau": policy.calibration_tau,
        "record_scope": policy.record_scope,
    }


def policy_from_json(obj: dict[str, Any]) -> DecodePolicy:
    known = {
        "strategy", "mode", "metric", "cap", "slack",
        "tau_static", "quota", "calibration_tau", "record_scope",
    }
    return DecodePolicy(**{k: v for k, v in obj.items() if k in known})


def trace_to_json(trace: DecodeTrace, state_json: dict[str, Any] | None = None) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "prompt": trace.prompt_id,
        "phase": trace.phase,
        "predictor_calls": trace.predictor_calls,
        "generated_tokens": trace.generated_tokens,
        "wall_time": trace.wall_time,
        "steps": [
            {
                "block": s.block,
                "step": s.step,
                "tau_eff": s.tau_eff,
                "positions": list(s.positions),
                "tokens": list(s.tokens),
                "fallback": s.fallback_used,
                "masked_count": s.masked_count,
                "mean_conf": s.mean_confidence,
            }
            for s in trace.steps
        ],
    }
    if state_json is not None:
        obj["state"] = state_json
    return obj


def report_to_json(report: RunReport) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "label": report.label,
        "policy": policy_to_json(report.policy),
        "seed": report.seed,
        "version": report.version,
        "prompt_ids": report.prompt_ids,
        "correct": [bool(c) for c in report.correct],
        "error": report.error,
    }
    if report.metrics is not None:
        obj["metrics"] = {
            "accuracy": report.metrics.accuracy,
            "tokens_per_second": report.metrics.tokens_per_second,
            "tokens_per_call": report.metrics.tokens_per_call,
            "mean_tokens_per_step": report.metrics.mean_tokens_per_step,
            "predictor_calls": report.metrics.predictor_calls,
            "generated_tokens": report.metrics.generated_tokens,
        }
    return obj


def write_run_outputs(report: RunReport, outdir: str | Path) -> None:
    """traces.jsonl + metrics.csv + report.json (+ profile.json for OSDT)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for trace, state in zip(report.traces, report.states):
            fh.write(json.dumps(trace_to_json(trace, state_to_json(state))) + "\n")
    if report.metrics is not None:
        write_metrics_csv([(report.label, report.metrics)], out / "metrics.csv")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")
    if report.profile is not None:
        with open(out / "profile.json", "w", encoding="utf-8") as fh:
            json.dump(profile_to_json(report.profile), fh, indent=2)
            fh.write("\n")


def write_sweep_outputs(reports: Sequence[RunReport], outdir: str | Path) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(r.label, r.metrics) for r in reports if r.metrics is not None]
    write_metrics_csv(rows, out / "sweep.csv")
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(report_to_json(r)) + "\n")


def write_compare_outputs(
    reports: Sequence[RunReport], frontier: Sequence[ParetoPoint], outdir: str | Path
) -> None:
    from .analysis import write_frontier_csv

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([(r.label, r.metrics) for r in reports], out / "compare.csv")
    write_frontier_csv(frontier, out / "frontier.csv")
