from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from mdm_sched.errors import EngineError
from mdm_sched.strategies import METRICS, statistic

from oracles import statistic_oracle


def test_singleton_is_identity_for_every_metric():
    for metric in METRICS:
        assert statistic([0.5], metric) == 0.5


def test_quartiles_rank_interpolation():
    values = [1.0, 2.0, 3.0, 4.0]
    assert statistic(values, "q1") == pytest.approx(1.75, abs=1e-12)
    assert statistic(values, "q2") == pytest.approx(2.5, abs=1e-12)
    assert statistic(values, "q3") == pytest.approx(3.25, abs=1e-12)


def test_min_whisker_skips_outlier_below_fence():
    # q1=0.8, q3=0.85, fence=0.725: the 0.1 outlier is excluded
    assert statistic([0.1, 0.8, 0.82, 0.85, 0.9], "min-whisker") == pytest.approx(0.8)


def test_mean():
    assert statistic([0.8, 0.9, 1.0], "mean") == pytest.approx(0.9)


def test_empty_sample():
    with pytest.raises(EngineError) as exc:
        statistic([], "mean")
    assert exc.value.code == "EMPTY_SAMPLE"


def test_unknown_metric():
    with pytest.raises(EngineError) as exc:
        statistic([0.5], "median")
    assert exc.value.code == "UNKNOWN_METRIC"


def test_matches_brute_force_oracle_on_random_samples():
    rng = random.Random(7)
    for _ in range(500):
        n = rng.randint(1, 50)
        values = [rng.random() for _ in range(n)]
        if rng.random() < 0.3:  # encourage ties
            values = [round(v, 1) + 0.05 for v in values]
        for metric in METRICS:
            assert statistic(values, metric) == pytest.approx(
                statistic_oracle(values, metric), abs=1e-12
            )


@given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=60))
def test_statistic_ordering_chain(values):
    lo, hi = min(values), max(values)
    q1 = statistic(values, "q1")
    q2 = statistic(values, "q2")
    q3 = statistic(values, "q3")
    whisker = statistic(values, "min-whisker")
    assert lo <= whisker <= q1 <= q2 <= q3 <= hi
    # mean can drift by one ulp on constant samples
    assert lo - 1e-9 <= statistic(values, "mean") <= hi + 1e-9
