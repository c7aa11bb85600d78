import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbecc.harness.metrics import delay_percentiles, jain_index, time_in_state, windowed_throughput
from oracles import jain_oracle


def test_jain_examples():
    assert jain_index([10, 10, 10]) == pytest.approx(1.0)
    assert jain_index([10, 0]) == pytest.approx(0.5)
    assert jain_index([30, 30, 40]) == pytest.approx(100**2 / (3 * 3400))
    assert round(jain_index([30, 30, 40]), 2) == 0.98


def test_jain_rejects_degenerate_input():
    for bad in ([], [0, 0], [1, -1]):
        with pytest.raises(ValueError):
            jain_index(bad)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40).filter(lambda x: sum(x) > 0))
def test_jain_matches_brute_force(xs):
    j = jain_index(xs)
    assert j == pytest.approx(jain_oracle(xs), rel=1e-9)
    assert 0 < j <= 1 + 1e-12


def test_uniform_delivery_is_12mbps():
    times = np.arange(0, 100_000, 1000)
    series = windowed_throughput(times, np.full(100, 12_000), 0, 100_000)
    assert series.tolist() == [12e6]


def test_empty_window_is_zero():
    series = windowed_throughput([50_000], [1000], 0, 300_000)
    assert series[1] == 0 and series[2] == 0


def test_two_windows_average():
    series = windowed_throughput([10, 100_010], [1_000_000, 2_000_000], 0, 200_000)
    assert series.tolist() == [10e6, 20e6] and series.mean() == 15e6


@given(st.lists(st.tuples(st.integers(0, 999_999), st.integers(1, 20_000)), max_size=300))
def test_windows_sum_to_total(samples):
    t = [s[0] for s in samples]
    b = [s[1] for s in samples]
    series = windowed_throughput(t, b, 0, 1_000_000)
    assert (series * 0.1).sum() == pytest.approx(sum(b), abs=1e-6)


def test_partial_last_window_uses_its_length():
    series = windowed_throughput([120_000], [600], 0, 150_000)
    assert series[-1] == pytest.approx(600 / 0.05)


@given(st.lists(st.floats(0, 500), min_size=1, max_size=200))
def test_percentiles_monotone(d):
    p = delay_percentiles(d)
    vals = [p[k] for k in ("p10", "p25", "p50", "p75", "p90", "p95")]
    assert vals == sorted(vals)
    assert min(d) <= vals[0] and vals[-1] <= max(d)


def test_percentiles_empty():
    assert delay_percentiles([]) == {}


def test_time_in_state_examples():
    assert time_in_state([], 0, 1000) == {"wireless": 1.0, "internet": 0.0}
    assert time_in_state([(500, 1)], 0, 1000) == {"wireless": 0.5, "internet": 0.5}
    # a transition before the window sets the initial state
    assert time_in_state([(10, 1), (750, 0)], 500, 1000) == {"wireless": 0.5, "internet": 0.5}


@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 1)), max_size=30))
def test_time_in_state_sums_to_one(tr):
    tr.sort()
    out = time_in_state(tr, 1000, 9000)
    assert sum(out.values()) == pytest.approx(1.0)
