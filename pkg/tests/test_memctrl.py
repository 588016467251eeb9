"""
Tests for the memory controller model
"""

import math
import os
import sys
from fractions import Fraction

import numpy as np
import pytest

# Add parent directory to path to import framework
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.memctrl import (
    AccessClass,
    AccessRecord,
    AdaptiveEvent,
    BankState,
    PagePolicy,
    TimingConfig,
    access,
    access_trace_frame,
    adaptive_update,
    class_histogram,
    converted_cycles,
    latency_cycles,
)
from error_handling import InvalidInputError, OrderingError, PolicyMisuseError


@pytest.fixture
def timing():
    return TimingConfig()


def run_stream(policy, timing, rows, gap_ns, state=None):
    state = state or BankState.for_policy(policy)
    outcomes = []
    for i, row in enumerate(rows):
        outcome, state = access(state, row, i * gap_ns, policy, timing)
        outcomes.append(outcome)
    return outcomes, state


class TestLatency:
    """DRAM-cycle to CPU-cycle conversion"""

    def test_ddr4_2133_page_empty(self, timing):
        assert converted_cycles(14, timing) == 53
        assert latency_cycles(AccessClass.ROW_HIT, timing) == 200
        assert latency_cycles(AccessClass.PAGE_EMPTY, timing) == 253
        assert latency_cycles(AccessClass.ROW_CONFLICT, timing) == 306

    def test_zero_timings_collapse(self):
        timing = TimingConfig(t_rp=0, t_rcd=0)
        assert {latency_cycles(cls, timing) for cls in AccessClass} == {200}

    def test_single_clocked_is_twice_as_fast(self):
        fast = TimingConfig(double_clocked=False)
        assert converted_cycles(14, fast) == math.ceil(Fraction(14 * 4000, 2133))

    def test_random_configs_keep_order_and_formula(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            t_rp, t_rcd = (int(v) for v in rng.integers(1, 40, size=2))
            rate = float(rng.choice([1600.0, 1866.0, 2133.0, 2400.0, 2666.0, 3200.0]))
            cpu = float(rng.integers(1, 50)) * 1e8
            double = bool(rng.integers(2))
            timing = TimingConfig(t_rp=t_rp, t_rcd=t_rcd, base_hit_latency=int(rng.integers(50, 400)),
                                  dram_transfer_rate=rate, double_clocked=double, cpu_freq=cpu)
            clock = Fraction(str(rate)) * 1_000_000 / (2 if double else 1)

            def expected(cycles):
                return math.ceil(Fraction(cycles) / clock * Fraction(str(cpu)))

            hit = latency_cycles(AccessClass.ROW_HIT, timing)
            empty = latency_cycles(AccessClass.PAGE_EMPTY, timing)
            conflict = latency_cycles(AccessClass.ROW_CONFLICT, timing)
            assert hit < empty < conflict
            assert empty - hit == expected(t_rp)
            assert conflict - hit == expected(t_rp + t_rcd)

    def test_invalid_timing(self):
        with pytest.raises(InvalidInputError):
            TimingConfig(cpu_freq=0)


class TestPolicies:
    """Access classification per page policy"""

    def test_closed_never_hits(self, timing):
        outcomes, _ = run_stream(PagePolicy.closed(), timing, [5, 5, 5, 7, 7, 5], 10.0)
        assert {o.cls for o in outcomes} == {AccessClass.PAGE_EMPTY}
        assert all(o.activated for o in outcomes)

    def test_fixed_open_hit_then_conflict(self, timing):
        outcomes, _ = run_stream(PagePolicy.fixed_open(), timing, [1, 1, 2], 10.0)
        assert [o.cls for o in outcomes] == [AccessClass.PAGE_EMPTY, AccessClass.ROW_HIT, AccessClass.ROW_CONFLICT]

    def test_fixed_open_timeout_closes_row(self, timing):
        policy = PagePolicy.fixed_open(timeout_ns=100.0)
        state = BankState.for_policy(policy)
        first, state = access(state, 1, 0.0, policy, timing)
        second, state = access(state, 1, 150.0, policy, timing)
        assert first.cls is AccessClass.PAGE_EMPTY
        assert second.cls is AccessClass.PAGE_EMPTY

    def test_fixed_open_within_timeout_hits(self, timing):
        outcomes, _ = run_stream(PagePolicy.fixed_open(timeout_ns=100.0), timing, [3] * 20, 50.0)
        assert [o.cls for o in outcomes[1:]] == [AccessClass.ROW_HIT] * 19
        assert len({o.latency for o in outcomes[1:]}) == 1

    def test_time_regression(self, timing):
        policy = PagePolicy.fixed_open()
        state = BankState.for_policy(policy)
        _, state = access(state, 1, 100.0, policy, timing)
        with pytest.raises(OrderingError):
            access(state, 1, 99.0, policy, timing)

    def test_activations_match_non_hits(self, timing):
        rng = np.random.default_rng(5)
        policy = PagePolicy.fixed_open(timeout_ns=80.0)
        state = BankState.for_policy(policy)
        time = 0.0
        records = []
        activations = 0
        for _ in range(2000):
            time += float(rng.integers(1, 120))
            row = int(rng.integers(0, 4))
            outcome, state = access(state, row, time, policy, timing)
            activations += outcome.activated
            records.append(AccessRecord(time, 0, row, outcome.cls, outcome.latency))
        histogram = class_histogram(records)
        assert activations == histogram["page_empty"] + histogram["row_conflict"]
        assert sum(histogram.values()) == 2000
        assert list(access_trace_frame(records).columns) == ["time", "bank", "row", "class", "latency"]


class TestAdaptive:
    """Mistake counter and timeout register"""

    def test_scripted_trajectory(self):
        policy = PagePolicy.adaptive_policy(initial_timeout_ns=0.0, timeout_min_ns=0.0, timeout_max_ns=30.0,
                                            step_ns=10.0, inc_threshold=1, dec_threshold=-1, check_period=4)
        E, C, N = AdaptiveEvent.EMPTY_COULD_HAVE_HIT, AdaptiveEvent.CONFLICT, AdaptiveEvent.NONE
        events = [E, E, E, N, C, C, C, C] + [E] * 16
        expected = [
            (1, 0), (2, 0), (3, 0), (0, 10),
            (-1, 10), (-2, 10), (-3, 10), (0, 0),
            (1, 0), (2, 0), (3, 0), (0, 10),
            (1, 10), (2, 10), (3, 10), (0, 20),
            (1, 20), (2, 20), (3, 20), (0, 30),
            (1, 30), (2, 30), (3, 30), (0, 30),
        ]
        state = BankState.for_policy(policy)
        trajectory = []
        for event in events:
            state = adaptive_update(state, event, policy)
            trajectory.append((state.mistake_counter, state.timeout_register))
        assert trajectory == expected

    def test_counter_saturates(self):
        policy = PagePolicy.adaptive_policy(saturation=3, check_period=1000)
        state = BankState.for_policy(policy)
        for _ in range(10):
            adaptive_update(state, AdaptiveEvent.CONFLICT, policy)
        assert state.mistake_counter == -3

    def test_rejects_other_policies(self):
        with pytest.raises(PolicyMisuseError):
            adaptive_update(BankState(), AdaptiveEvent.CONFLICT, PagePolicy.closed())

    def test_same_row_stream_learns_to_keep_row_open(self, timing):
        policy = PagePolicy.adaptive_policy()
        outcomes, state = run_stream(policy, timing, [9] * 1000, 100.0)
        assert outcomes[1].event is AdaptiveEvent.EMPTY_COULD_HAVE_HIT
        assert outcomes[-1].cls is AccessClass.ROW_HIT
        assert state.timeout_register == 125.0

    def test_conflict_stream_drives_timeout_to_minimum(self, timing):
        policy = PagePolicy.adaptive_policy(initial_timeout_ns=500.0)
        outcomes, state = run_stream(policy, timing, [1, 2] * 1000, 10.0)
        assert outcomes[1].cls is AccessClass.ROW_CONFLICT
        assert state.timeout_register == 0.0
        assert outcomes[-1].cls is AccessClass.PAGE_EMPTY

    def test_invalid_params(self):
        with pytest.raises(InvalidInputError):
            PagePolicy.adaptive_policy(initial_timeout_ns=20_000.0)
