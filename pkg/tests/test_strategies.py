from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from mdm_sched.errors import EngineError
from mdm_sched.predictors import PredictionFrame, ScriptedPredictor, ScriptedSchedule, constant_predictor
from mdm_sched.strategies import (
    DEFAULT_CALIBRATION_TAU,
    ConfidenceRecord,
    DecodePolicy,
    PRESETS,
    ThresholdProfile,
    calibrate,
    dynamic_threshold_generate,
    fixed_quota_generate,
    lookup_threshold,
    osdt_run,
    profile_from_json,
    profile_to_json,
    select_unmask_set,
    static_threshold_generate,
)

from conftest import MapPredictor

MASK = 256


def frame_of(conf_by_pos: dict[int, float], block: int = 1, step: int = 0) -> PredictionFrame:
    return PredictionFrame(
        block=block, step=step, entries={p: (1, c) for p, c in conf_by_pos.items()}
    )


class TestSelectUnmaskSet:
    def test_strictly_above_threshold(self):
        sel = select_unmask_set(frame_of({5: 0.9, 6: 0.7, 7: 0.95}), 0.8)
        assert sel.positions == (5, 7)
        assert not sel.fallback_used

    def test_fallback_to_most_confident(self):
        sel = select_unmask_set(frame_of({5: 0.3, 6: 0.5}), 0.8)
        assert sel.positions == (6,)
        assert sel.fallback_used

    def test_fallback_tie_breaks_to_lowest_position(self):
        sel = select_unmask_set(frame_of({5: 0.5, 6: 0.5}), 0.8)
        assert sel.positions == (5,)

    def test_equal_to_threshold_is_excluded(self):
        sel = select_unmask_set(frame_of({5: 0.8, 6: 0.9}), 0.8)
        assert sel.positions == (6,)

    @given(
        confs=st.dictionaries(
            st.integers(0, 30), st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=12
        ),
        tau_lo=st.floats(min_value=0.0, max_value=1.0),
        tau_hi=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_lower_threshold_selects_superset(self, confs, tau_lo, tau_hi):
        tau_lo, tau_hi = min(tau_lo, tau_hi), max(tau_lo, tau_hi)
        loose = set(select_unmask_set(frame_of(confs), tau_lo).positions)
        tight = set(select_unmask_set(frame_of(confs), tau_hi).positions)
        assert tight <= loose


class TestFixedQuota:
    def test_two_steps_of_two(self):
        pred = MapPredictor({0: 0.9, 1: 0.8, 2: 0.7, 3: 0.6})
        state, trace = fixed_quota_generate([], pred, quota=2, gen_len=4, block_len=4)
        assert [s.positions for s in trace.steps] == [(0, 1), (2, 3)]
        assert trace.predictor_calls == 2
        assert not any(state.masked)

    def test_quota_one_is_most_confident_first(self):
        pred = MapPredictor({0: 0.6, 1: 0.9, 2: 0.7, 3: 0.8})
        _, trace = fixed_quota_generate([], pred, quota=1, gen_len=4, block_len=4)
        assert [s.positions for s in trace.steps] == [(1,), (3,), (2,), (0,)]
        assert trace.predictor_calls == 4

    def test_quota_covering_block_is_one_step(self):
        pred = MapPredictor({})
        _, trace = fixed_quota_generate([9], pred, quota=10, gen_len=4, block_len=4)
        assert trace.predictor_calls == 1

    def test_steps_per_block_is_ceil_div(self):
        pred = MapPredictor({})
        _, trace = fixed_quota_generate([9], pred, quota=3, gen_len=8, block_len=4)
        # ceil(4/3) = 2 steps per block
        assert trace.predictor_calls == 4


class TestStaticThreshold:
    def test_hand_traced_schedule(self):
        # constant per-position confidences; tau 0.9 admits only 0.95 and 0.92
        pred = MapPredictor({0: 0.95, 1: 0.85, 2: 0.92, 3: 0.70})
        state, trace, records = static_threshold_generate([], pred, 0.9, gen_len=4, block_len=4)
        assert [(s.positions, s.fallback_used) for s in trace.steps] == [
            ((0, 2), False),
            ((1,), True),
            ((3,), True),
        ]
        assert trace.predictor_calls == 3
        assert not any(state.masked)

    def test_all_pass_in_one_step(self):
        pred = MapPredictor({p: 0.99 for p in range(8)})
        _, trace, _ = static_threshold_generate([], pred, 0.9, gen_len=8, block_len=4)
        assert trace.predictor_calls == 2  # one step per block

    def test_none_pass_means_all_fallback(self):
        pred = MapPredictor({p: 0.5 for p in range(4)})
        _, trace, _ = static_threshold_generate([], pred, 0.9, gen_len=4, block_len=4)
        assert trace.predictor_calls == 4
        assert all(s.fallback_used for s in trace.steps)

    def test_record_scopes(self):
        pred = MapPredictor({0: 0.95, 1: 0.5})
        _, _, accepted = static_threshold_generate([], pred, 0.9, 2, 2, record_scope="accepted")
        _, _, all_masked = static_threshold_generate([], pred, 0.9, 2, 2, record_scope="all-masked")
        assert accepted[0].values == (0.95,)
        assert all_masked[0].values == (0.95, 0.5)


class TestCalibrate:
    def test_block_mode_pools_values(self):
        records = [
            ConfidenceRecord(1, 0, (0.8, 0.9), "accepted"),
            ConfidenceRecord(1, 1, (1.0,), "accepted"),
        ]
        profile = calibrate(records, "block", "mean", num_blocks=1)
        assert profile.per_block == (pytest.approx(0.9),)

    def test_step_block_mode_keeps_cells(self):
        records = [
            ConfidenceRecord(1, 0, (0.8,), "accepted"),
            ConfidenceRecord(1, 1, (0.95,), "accepted"),
        ]
        for metric in ("mean", "q1", "q2", "q3", "min-whisker"):
            profile = calibrate(records, "step-block", metric, num_blocks=1)
            assert profile.per_step == ((0.8, 0.95),)

    def test_missing_block(self):
        records = [ConfidenceRecord(1, 0, (0.8,), "accepted")]
        with pytest.raises(EngineError) as exc:
            calibrate(records, "block", "mean", num_blocks=2)
        assert exc.value.code == "MISSING_BLOCK"


class TestLookupThreshold:
    def test_cap_and_slack_arithmetic(self):
        profile = ThresholdProfile(mode="block", metric="q2", per_block=(0.92,))
        assert lookup_threshold(profile, 1, 0, cap=0.85, slack=0.1) == pytest.approx(0.765)

    def test_cap_inactive_no_slack(self):
        profile = ThresholdProfile(mode="block", metric="q2", per_block=(0.7,))
        assert lookup_threshold(profile, 1, 3, cap=0.85, slack=0.0) == 0.7

    def test_step_overflow_clamps_to_last_calibrated(self):
        profile = ThresholdProfile(
            mode="step-block", metric="q2", per_step=((0.8, 0.85, 0.9),)
        )
        assert lookup_threshold(profile, 1, 5, cap=1.0, slack=0.0) == 0.9

    def test_block_out_of_range(self):
        profile = ThresholdProfile(mode="block", metric="q2", per_block=(0.7,))
        with pytest.raises(EngineError) as exc:
            lookup_threshold(profile, 2, 0, cap=1.0, slack=0.0)
        assert exc.value.code == "BLOCK_OUT_OF_RANGE"

    def test_exact_paper_grid_arithmetic(self):
        taus = [0.05, 0.3, 0.7, 0.76, 0.85, 0.9, 0.92, 1.0]
        for tau in taus:
            profile = ThresholdProfile(mode="block", metric="q1", per_block=(tau,))
            for cap in (0.75, 0.8, 0.85, 0.9, 0.95):
                for slack in (0.01, 0.05, 0.1, 0.15, 0.2):
                    assert lookup_threshold(profile, 1, 0, cap, slack) == min(tau, cap) * (1 - slack)


def scripted_refs(prompts, gen_len):
    return {tuple(p): tuple((sum(p) + i) % 256 for i in range(gen_len)) for p in prompts}


class TestOsdtRun:
    def test_single_prompt_matches_static(self):
        prompts = [(3, 4)]
        refs = scripted_refs(prompts, 8)
        pred = ScriptedPredictor(ScriptedSchedule(jitter_scale=0.02, seed=1), refs)
        policy = DecodePolicy(strategy="osdt", calibration_tau=0.9)
        result = osdt_run(prompts, pred, policy, gen_len=8, block_len=4)
        state, trace, _ = static_threshold_generate(prompts[0], pred, 0.9, 8, 4)
        assert result.answers == [state.generated]
        assert result.traces[0].selection_schedule() == trace.selection_schedule()
        assert result.traces[0].phase == "calibration"
        assert result.profile.num_blocks == 2

    def test_constant_confidence_matches_static_trace_for_trace(self):
        prompts = [(i, i + 1) for i in range(1, 6)]
        refs = scripted_refs(prompts, 8)
        pred = constant_predictor(0.7, refs)
        policy = DecodePolicy(
            strategy="osdt", mode="block", metric="q2", cap=1.0, slack=0.0, calibration_tau=0.5
        )
        result = osdt_run(prompts, pred, policy, gen_len=8, block_len=4)
        assert result.profile.per_block == (0.7, 0.7)
        for prompt, trace in zip(prompts[1:], result.traces[1:]):
            assert trace.phase == "dynamic"
            _, static_trace, _ = static_threshold_generate(prompt, pred, 0.7, 8, 4)
            assert trace.selection_schedule() == static_trace.selection_schedule()
            assert [s.tau_eff for s in trace.steps] == [s.tau_eff for s in static_trace.steps]
            assert [s.fallback_used for s in trace.steps] == [
                s.fallback_used for s in static_trace.steps
            ]

    def test_calibration_failure_aborts(self):
        class Broken(MapPredictor):
            def predict(self, state, block, step):
                raise EngineError("PREDICTOR_UNAVAILABLE", "gone")

        with pytest.raises(EngineError):
            osdt_run([(1,)], Broken({}), DecodePolicy(strategy="osdt"), 4, 2)

    def test_requires_osdt_policy(self):
        with pytest.raises(EngineError) as exc:
            osdt_run([(1,)], MapPredictor({}), DecodePolicy(strategy="static"), 4, 2)
        assert exc.value.code == "UNKNOWN_STRATEGY"


def test_presets_match_reported_best_configs():
    gpqa = PRESETS["gpqa"]
    assert (gpqa.mode, gpqa.metric, gpqa.cap, gpqa.slack) == ("step-block", "q2", 0.75, 0.20)
    gsm8k = PRESETS["gsm8k"]
    assert (gsm8k.mode, gsm8k.metric, gsm8k.cap, gsm8k.slack) == ("block", "q1", 0.75, 0.20)
    humaneval = PRESETS["humaneval"]
    assert (humaneval.mode, humaneval.metric, humaneval.cap, humaneval.slack) == (
        "block", "q1", 0.80, 0.10,
    )
    assert DEFAULT_CALIBRATION_TAU == 0.9


def test_policy_validation():
    with pytest.raises(EngineError):
        DecodePolicy(strategy="osdt", cap=0.0)
    with pytest.raises(EngineError):
        DecodePolicy(strategy="osdt", slack=1.0)
    with pytest.raises(EngineError):
        DecodePolicy(strategy="fixed_quota", quota=0)
    with pytest.raises(EngineError):
        DecodePolicy(strategy="greedy")


def test_profile_json_round_trip():
    block = ThresholdProfile(mode="block", metric="q1", per_block=(0.7, 0.8))
    step = ThresholdProfile(mode="step-block", metric="mean", per_step=((0.7,), (0.8, 0.9)))
    for profile in (block, step):
        obj = profile_to_json(profile)
        assert set(obj) == {"mode", "metric", "thresholds"}
        assert profile_from_json(obj) == profile


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    block_len=st.integers(1, 6),
    num_blocks=st.integers(1, 3),
    strategy=st.sampled_from(["fixed_quota", "static", "osdt"]),
    data=st.data(),
)
def test_every_strategy_terminates_and_conserves(seed, block_len, num_blocks, strategy, data):
    gen_len = block_len * num_blocks
    prompts = [(seed % 251, i) for i in range(2)]
    refs = scripted_refs(prompts, gen_len)
    pred = ScriptedPredictor(
        ScriptedSchedule(jitter_scale=0.05, seed=seed), refs
    )
    if strategy == "fixed_quota":
        quota = data.draw(st.integers(1, block_len + 2), label="quota")
        _, trace = fixed_quota_generate(prompts[0], pred, quota, gen_len, block_len)
        traces = [trace]
    elif strategy == "static":
        tau = data.draw(st.floats(min_value=0.01, max_value=1.0), label="tau")
        _, trace, _ = static_threshold_generate(prompts[0], pred, tau, gen_len, block_len)
        traces = [trace]
    else:
        policy = DecodePolicy(
            strategy="osdt",
            mode=data.draw(st.sampled_from(["block", "step-block"]), label="mode"),
            metric=data.draw(st.sampled_from(["mean", "q1", "q2", "q3", "min-whisker"]), label="metric"),
            cap=data.draw(st.floats(min_value=0.05, max_value=1.0), label="cap"),
            slack=data.draw(st.floats(min_value=0.0, max_value=0.99), label="slack"),
        )
        traces = osdt_run(prompts, pred, policy, gen_len, block_len).traces
    for trace in traces:
        assert trace.committed_total() == gen_len
        assert trace.predictor_calls <= gen_len
        assert trace.predictor_calls == len(trace.steps)


@given(
    entries=st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=5),
    cap=st.floats(min_value=0.05, max_value=1.0),
    slack=st.floats(min_value=0.0, max_value=0.99),
)
def test_effective_threshold_bounds(entries, cap, slack):
    profile = ThresholdProfile(mode="block", metric="q1", per_block=tuple(entries))
    for b in range(1, len(entries) + 1):
        tau_eff = lookup_threshold(profile, b, 0, cap, slack)
        assert 0.0 < tau_eff <= cap
        if slack == 0.0 and cap == 1.0:
            assert tau_eff == entries[b - 1]


def test_degenerate_profile_reproduces_static():
    # every profile entry equals tau0, cap >= tau0, no slack -> identical traces
    prompts = [(11, 3)]
    refs = scripted_refs(prompts, 12)
    pred = ScriptedPredictor(ScriptedSchedule(jitter_scale=0.03, seed=8), refs)
    tau0 = 0.88
    profile = ThresholdProfile(mode="block", metric="q2", per_block=(tau0, tau0, tau0))
    _, dyn_trace, _ = dynamic_threshold_generate(
        prompts[0], pred, profile, cap=0.95, slack=0.0, gen_len=12, block_len=4
    )
    _, static_trace, _ = static_threshold_generate(prompts[0], pred, tau0, 12, 4)
    assert dyn_trace.selection_schedule() == static_trace.selection_schedule()


def test_threshold_one_reduces_to_quota_one():
    prompts = [(42, 17)]
    refs = scripted_refs(prompts, 8)
    pred = ScriptedPredictor(ScriptedSchedule(jitter_scale=0.05, seed=3), refs)
    profile = ThresholdProfile(mode="block", metric="q2", per_block=(1.0, 1.0))
    _, thresh_trace, _ = dynamic_threshold_generate(
        prompts[0], pred, profile, cap=1.0, slack=0.0, gen_len=8, block_len=4
    )
    _, quota_trace = fixed_quota_generate(prompts[0], pred, 1, 8, 4)
    assert thresh_trace.selection_schedule() == quota_trace.selection_schedule()
    assert all(s.fallback_used for s in thresh_trace.steps)
