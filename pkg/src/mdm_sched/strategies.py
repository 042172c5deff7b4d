"""Decoding strategies: fixed-quota top-k, static threshold, and one-shot
dynamic thresholding (calibrate on the first sequence, reuse the profile).

All three share one denoising loop: blocks are decoded left-to-right; within
the active block, each step asks the predictor for proposals over the masked
positions and commits a subset. A step that clears nothing commits the single
most confident position instead, so every step makes progress and a block
never takes more steps than it has positions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from .errors import EngineError
from .predictors import PredictionFrame, Predictor
from .seqstate import (
    SequenceState,
    TokenId,
    UnmaskSelection,
    init_sequence,
    masked_in_block,
    unmask_and_update,
)

STRATEGIES = ("fixed_quota", "static", "osdt")
MODES = ("block", "step-block")
METRICS = ("mean", "q1", "q2", "q3", "min-whisker")
RECORD_SCOPES = ("accepted", "all-masked")

DEFAULT_CALIBRATION_TAU = 0.9  # the fixed-threshold baseline setting


def _interpolated_quantile(ordered: Sequence[float], p: float) -> float:
    # Linear interpolation between closest ranks at virtual index p*(n-1).
    pos = p * (len(ordered) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    frac = pos - lo
    return ordered[lo] + (ordered[hi] - ordered[lo]) * frac


def statistic(values: Sequence[float], metric: str) -> float:
    """Summary statistic used to turn calibration confidences into thresholds.

    Quartiles interpolate between closest ranks. ``min-whisker`` is the lower
    boxplot whisker: the smallest value at or above q1 - 1.5*IQR, clamped to
    q1 so the whisker never crosses the box.
    """
    if metric not in METRICS:
        raise EngineError("UNKNOWN_METRIC", f"metric must be one of {METRICS}, got {metric!r}")
    vals = list(values)
    if not vals:
        raise EngineError("EMPTY_SAMPLE", "statistic of an empty sample")
    if metric == "mean":
        return math.fsum(vals) / len(vals)
    ordered = sorted(vals)
    if metric == "q1":
        return _interpolated_quantile(ordered, 0.25)
    if metric == "q2":
        return _interpolated_quantile(ordered, 0.5)
    if metric == "q3":
        return _interpolated_quantile(ordered, 0.75)
    q1 = _interpolated_quantile(ordered, 0.25)
    q3 = _interpolated_quantile(ordered, 0.75)
    fence = q1 - 1.5 * (q3 - q1)
    whisker = next(v for v in ordered if v >= fence)
    return min(whisker, q1)


@dataclass(frozen=True)
class ConfidenceRecord:
    """Confidences observed at one (block, step) of one decode."""

    block: int
    step: int
    values: tuple[float, ...]
    scope: str

    def __post_init__(self) -> None:
        if not self.values:
            raise EngineError("EMPTY_RECORDS", f"record at ({self.block},{self.step}) is empty")


@dataclass(frozen=True)
class ThresholdProfile:
    """Calibrated thresholds, per block or per (block, step)."""

    mode: str
    metric: str
    per_block: tuple[float, ...] = ()
    per_step: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise EngineError("UNKNOWN_MODE", f"mode must be one of {MODES}, got {self.mode!r}")
        entries = self.per_block if self.mode == "block" else [t for row in self.per_step for t in row]
        if self.mode == "step-block" and any(not row for row in self.per_step):
            raise EngineError("MISSING_BLOCK", "step-block profile has a block with no thresholds")
        for tau in entries:
            if not 0.0 < tau <= 1.0:
                raise EngineError("INVALID_THRESHOLD", f"profile threshold {tau} outside (0,1]")

    @property
    def num_blocks(self) -> int:
        return len(self.per_block) if self.mode == "block" else len(self.per_step)


@dataclass(frozen=True)
class DecodePolicy:
    """Strategy selector plus every knob any strategy reads."""

    strategy: str = "static"
    mode: str = "block"
    metric: str = "q1"
    cap: float = 1.0
    slack: float = 0.0
    tau_static: float = DEFAULT_CALIBRATION_TAU
    quota: int = 1
    calibration_tau: float = DEFAULT_CALIBRATION_TAU
    record_scope: str = "accepted"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise EngineError("UNKNOWN_STRATEGY", f"strategy must be one of {STRATEGIES}")
        if self.mode not in MODES:
            raise EngineError("UNKNOWN_MODE", f"mode must be one of {MODES}")
        if self.metric not in METRICS:
            raise EngineError("UNKNOWN_METRIC", f"metric must be one of {METRICS}")
        if self.record_scope not in RECORD_SCOPES:
            raise EngineError("UNKNOWN_SCOPE", f"record_scope must be one of {RECORD_SCOPES}")
        for name, value in (("cap", self.cap), ("tau_static", self.tau_static),
                            ("calibration_tau", self.calibration_tau)):
            if not 0.0 < value <= 1.0:
                raise EngineError("INVALID_POLICY", f"{name} must be in (0,1], got {value}")
        if not 0.0 <= self.slack < 1.0:
            raise EngineError("INVALID_POLICY", f"slack must be in [0,1), got {self.slack}")
        if self.quota < 1:
            raise EngineError("INVALID_POLICY", f"quota must be >= 1, got {self.quota}")


# Best grid-search configurations per benchmark family, shipped as presets.
PRESETS: dict[str, DecodePolicy] = {
    "gpqa": DecodePolicy(strategy="osdt", mode="step-block", metric="q2", cap=0.75, slack=0.20),
    "gsm8k": DecodePolicy(strategy="osdt", mode="block", metric="q1", cap=0.75, slack=0.20),
    "humaneval": DecodePolicy(strategy="osdt", mode="block", metric="q1", cap=0.80, slack=0.10),
}


@dataclass(frozen=True)
class TraceStep:
    """One denoising step: what was proposed (summary) and what was committed."""

    block: int
    step: int
    tau_eff: float | None
    positions: tuple[int, ...]
    tokens: tuple[TokenId, ...]
    fallback_used: bool
    masked_count: int
    mean_confidence: float


@dataclass
class DecodeTrace:
    """Ordered evidence record of one decode."""

    prompt_id: str
    phase: str
    steps: list[TraceStep]
    predictor_calls: int
    generated_tokens: int
    wall_time: float

    def committed_total(self) -> int:
        return sum(len(s.positions) for s in self.steps)

    def selection_schedule(self) -> list[tuple[int, int, tuple[int, ...], tuple[TokenId, ...]]]:
        """(block, step, positions, tokens) sequence, for trace diffing."""
        return [(s.block, s.step, s.positions, s.tokens) for s in self.steps]


@dataclass
class DecodeOutcome:
    state: SequenceState
    trace: DecodeTrace
    records: list[ConfidenceRecord]


def select_unmask_set(frame: PredictionFrame, tau_eff: float) -> UnmaskSelection:
    """Positions with confidence strictly above ``tau_eff``.

    When none clears the bar, fall back to the single most confident
    position (ties to the lowest index) so the step still commits.
    """
    if not frame.entries:
        raise EngineError("EMPTY_BLOCK", "selection over an empty frame")
    ordered = sorted(frame.entries)
    passing = [p for p in ordered if frame.entries[p][1] > tau_eff]
    fallback = not passing
    if fallback:
        best = max(ordered, key=lambda p: (frame.entries[p][1], -p))
        passing = [best]
    return UnmaskSelection(
        block=frame.block,
        step=frame.step,
        positions=tuple(passing),
        tokens=tuple(frame.entries[p][0] for p in passing),
        fallback_used=fallback,
    )


def _topk_selection(frame: PredictionFrame, k: int) -> UnmaskSelection:
    # Highest confidence first, position index breaking ties.
    ranked = sorted(frame.entries, key=lambda p: (-frame.entries[p][1], p))[: max(k, 1)]
    chosen = tuple(sorted(ranked))
    return UnmaskSelection(
        block=frame.block,
        step=frame.step,
        positions=chosen,
        tokens=tuple(frame.entries[p][0] for p in chosen),
        fallback_used=False,
    )


def _record_values(frame: PredictionFrame, sel: UnmaskSelection, scope: str) -> tuple[float, ...]:
    if scope == "accepted":
        return tuple(frame.entries[p][1] for p in sel.positions)
    return frame.confidences()


SelectFn = Callable[[PredictionFrame], tuple[UnmaskSelection, float | None]]


def _run_decode(
    prompt: Sequence[TokenId],
    predictor: Predictor,
    gen_len: int,
    block_len: int,
    select: SelectFn,
    record_scope: str,
    prompt_id: str,
    phase: str,
) -> DecodeOutcome:
    if record_scope not in RECORD_SCOPES:
        raise EngineError("UNKNOWN_SCOPE", f"record_scope must be one of {RECORD_SCOPES}")
    state = init_sequence(prompt, gen_len, block_len, predictor.mask_id)
    steps: list[TraceStep] = []
    records: list[ConfidenceRecord] = []
    start = time.perf_counter()
    for block in range(1, state.layout.num_blocks + 1):
        step = 0
        while masked_in_block(state, block):
            frame = predictor.predict(state, block, step)
            sel, tau_eff = select(frame)
            records.append(
                ConfidenceRecord(
                    block=block,
                    step=step,
                    values=_record_values(frame, sel, record_scope),
                    scope=record_scope,
                )
            )
            state = unmask_and_update(state, sel)
            confs = frame.confidences()
            steps.append(
                TraceStep(
                    block=block,
                    step=step,
                    tau_eff=tau_eff,
                    positions=sel.positions,
                    tokens=sel.tokens,
                    fallback_used=sel.fallback_used,
                    masked_count=len(confs),
                    mean_confidence=math.fsum(confs) / len(confs),
                )
            )
            step += 1
    wall = time.perf_counter() - start
    trace = DecodeTrace(
        prompt_id=prompt_id,
        phase=phase,
        steps=steps,
        predictor_calls=len(steps),
        generated_tokens=gen_len,
        wall_time=wall,
    )
    return DecodeOutcome(state=state, trace=trace, records=records)


def decode_fixed_quota(
    prompt: Sequence[TokenId],
    predictor: Predictor,
    quota: int,
    gen_len: int,
    block_len: int,
    record_scope: str = "all-masked",
    prompt_id: str = "",
) -> DecodeOutcome:
    if quota < 1:
        raise EngineError("INVALID_POLICY", f"quota must be >= 1, got {quota}")
    return _run_decode(
        prompt,
        predictor,
        gen_len,
        block_len,
        lambda frame: (_topk_selection(frame, quota), None),
        record_scope,
        prompt_id,
        phase="fixed_quota",
    )


def fixed_quota_generate(
    prompt: Sequence[TokenId],
    predictor: Predictor,
    quota: int,
    gen_len: int,
    block_len: int,
    prompt_id: str = "",
) -> tuple[SequenceState, DecodeTrace]:
    """Baseline: each step commits the ``quota`` most confident positions."""
    outcome = decode_fixed_quota(prompt, predictor, quota, gen_len, block_len, prompt_id=prompt_id)
    return outcome.state, outcome.trace


def static_threshold_generate(
    prompt: Sequence[TokenId],
    predictor: Predictor,
    tau: float,
    gen_len: int,
    block_len: int,
    record_scope: str = "accepted",
    prompt_id: str = "",
    phase: str = "static",
) -> tuple[SequenceState, DecodeTrace, list[ConfidenceRecord]]:
    """Baseline: one global threshold for every block and step."""
    if not 0.0 < tau <= 1.0:
        raise EngineError("INVALID_THRESHOLD", f"tau must be in (0,1], got {tau}")
    outcome = _run_decode(
        prompt,
        predictor,
        gen_len,
        block_len,
        lambda frame: (select_unmask_set(frame, tau), tau),
        record_scope,
        prompt_id,
        phase=phase,
    )
    return outcome.state, outcome.trace, outcome.records


def calibrate(
    records: Iterable[ConfidenceRecord], mode: str, metric: str, num_blocks: int
) -> ThresholdProfile:
    """Turn one decode's confidence records into a threshold profile.

    Block mode pools every value recorded in a block; step-block mode keeps
    one threshold per observed (block, step) cell.
    """
    if mode not in MODES:
        raise EngineError("UNKNOWN_MODE", f"mode must be one of {MODES}, got {mode!r}")
    by_block: dict[int, dict[int, list[float]]] = {}
    for rec in records:
        by_block.setdefault(rec.block, {}).setdefault(rec.step, []).extend(rec.values)
    missing = [b for b in range(1, num_blocks + 1) if b not in by_block]
    if missing:
        raise EngineError("MISSING_BLOCK", f"no records for blocks {missing}")
    if mode == "block":
        per_block = tuple(
            statistic([v for step_vals in by_block[b].values() for v in step_vals], metric)
            for b in range(1, num_blocks + 1)
        )
        return ThresholdProfile(mode=mode, metric=metric, per_block=per_block)
    per_step = []
    for b in range(1, num_blocks + 1):
        step_map = by_block[b]
        row = tuple(statistic(step_map[s], metric) for s in sorted(step_map))
        per_step.append(row)
    return ThresholdProfile(mode=mode, metric=metric, per_step=tuple(per_step))


def lookup_threshold(
    profile: ThresholdProfile, block: int, step: int, cap: float, slack: float
) -> float:
    """Effective threshold: profile entry capped at ``cap``, loosened by ``slack``.

    Step indices past the calibrated range clamp to the block's last entry.
    """
    if not 1 <= block <= profile.num_blocks:
        raise EngineError("BLOCK_OUT_OF_RANGE", f"block {block} outside 1..{profile.num_blocks}")
    if profile.mode == "block":
        tau = profile.per_block[block - 1]
    else:
        row = profile.per_step[block - 1]
        tau = row[min(step, len(row) - 1)]
    return min(tau, cap) * (1.0 - slack)


def dynamic_threshold_generate(
    prompt: Sequence[TokenId],
    predictor: Predictor,
    profile: ThresholdProfile,
    cap: float,
    slack: float,
    gen_len: int,
    block_len: int,
    record_scope: str = "accepted",
    prompt_id: str = "",
) -> tuple[SequenceState, DecodeTrace, list[ConfidenceRecord]]:
    """Decode with per-step thresholds looked up from a calibrated profile."""
    if profile.num_blocks != gen_len // block_len:
        raise EngineError(
            "BLOCK_OUT_OF_RANGE",
            f"profile covers {profile.num_blocks} blocks, layout has {gen_len // block_len}",
        )

    def select(frame: PredictionFrame) -> tuple[UnmaskSelection, float | None]:
        tau_eff = lookup_threshold(profile, frame.block, frame.step, cap, slack)
        return select_unmask_set(frame, tau_eff), tau_eff

    outcome = _run_decode(
        prompt, predictor, gen_len, block_len, select, record_scope, prompt_id, phase="dynamic"
    )
    return outcome.state, outcome.trace, outcome.records


@dataclass
class OsdtResult:
    answers: list[tuple[TokenId, ...]]
    states: list[SequenceState]
    traces: list[DecodeTrace]
    profile: ThresholdProfile


def osdt_run(
    prompts: Sequence[Sequence[TokenId]],
    predictor: Predictor,
    policy: DecodePolicy,
    gen_len: int,
    block_len: int,
    prompt_ids: Sequence[str] | None = None,
) -> OsdtResult:
    """Two-phase run over a prompt list.

    Phase 1 decodes the first prompt with the static-threshold baseline at
    ``policy.calibration_tau`` and calibrates a threshold profile from its
    confidence records. Phase 2 decodes every remaining prompt with
    per-step thresholds ``min(tau, cap) * (1 - slack)`` looked up from that
    profile, which is immutable once built. Answers come back in input
    order; a calibration failure aborts the whole run.
    """
    if policy.strategy != "osdt":
        raise EngineError("UNKNOWN_STRATEGY", f"osdt_run needs an osdt policy, got {policy.strategy}")
    if not prompts:
        raise EngineError("EMPTY_DATASET", "osdt_run needs at least one prompt")
    ids = list(prompt_ids) if prompt_ids is not None else [str(i) for i in range(len(prompts))]
    if len(ids) != len(prompts):
        raise EngineError("ARITY_MISMATCH", f"{len(prompts)} prompts but {len(ids)} ids")

    state, trace, records = static_threshold_generate(
        prompts[0],
        predictor,
        policy.calibration_tau,
        gen_len,
        block_len,
        record_scope=policy.record_scope,
        prompt_id=ids[0],
        phase="calibration",
    )
    profile = calibrate(records, policy.mode, policy.metric, gen_len // block_len)
    answers = [state.generated]
    states = [state]
    traces = [trace]
    for prompt, pid in zip(prompts[1:], ids[1:]):
        state, trace, _ = dynamic_threshold_generate(
            prompt,
            predictor,
            profile,
            policy.cap,
            policy.slack,
            gen_len,
            block_len,
            record_scope=policy.record_scope,
            prompt_id=pid,
        )
        answers.append(state.generated)
        states.append(state)
        traces.append(trace)
    return OsdtResult(answers=answers, states=states, traces=traces, profile=profile)


def profile_to_json(profile: ThresholdProfile) -> dict[str, Any]:
    thresholds: Any
    if profile.mode == "block":
        thresholds = list(profile.per_block)
    else:
        thresholds = [list(row) for row in profile.per_step]
    return {"mode": profile.mode, "metric": profile.metric, "thresholds": thresholds}


def profile_from_json(obj: dict[str, Any]) -> ThresholdProfile:
    mode = obj.get("mode")
    metric = obj.get("metric", "q1")
    thresholds = obj.get("thresholds")
    if mode not in MODES or not isinstance(thresholds, list) or not thresholds:
        raise EngineError("INVALID_PROFILE", f"bad profile object: {obj!r}")
    if mode == "block":
        return ThresholdProfile(
            mode=mode, metric=metric, per_block=tuple(float(t) for t in thresholds)
        )
    return ThresholdProfile(
        mode=mode,
        metric=metric,
        per_step=tuple(tuple(float(t) for t in row) for row in thresholds),
    )
