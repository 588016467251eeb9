"""
Tests for the DRAM model
"""

import os
import sys
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Add parent directory to path to import framework
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.dram import (
    ActivationLedger,
    AddressMapping,
    COORDINATES,
    DramGeometry,
    DramLocation,
    FlipModel,
    TrrConfig,
    apply_trr,
    bank_collision_probability,
    collisions_for,
    effective_window_ns,
    evaluate_flips,
    map_address,
    pigeonhole_guarantee,
    record_activation,
    simulate_bank_collisions,
)
from error_handling import InvalidInputError, OrderingError

BANK = (0, 0, 0, 0, 0)


def parity_decode(addr, functions):
    """Evaluate every XOR set bit by bit."""
    decoded = {name: 0 for name in COORDINATES}
    for name, bit_sets in functions.items():
        for out_bit, bits in enumerate(bit_sets):
            decoded[name] |= (sum((addr >> b) & 1 for b in bits) % 2) << out_bit
    return decoded


def random_mapping(seed, address_bits=34):
    """Sixteen random XOR functions spread over the default geometry's coordinates."""
    rng = np.random.default_rng(seed)
    widths = {"bank": 2, "bank_group": 2, "rank": 1, "row": 11}
    functions = {
        name: [sorted(int(b) for b in rng.choice(address_bits, size=int(rng.integers(1, 7)), replace=False))
               for _ in range(width)]
        for name, width in widths.items()
    }
    return functions, AddressMapping.from_lists(functions, address_bits)


@pytest.fixture
def geometry():
    return DramGeometry()


@pytest.fixture
def mapping(geometry):
    return AddressMapping.default_ddr4(geometry)


class TestGeometry:
    """Geometry bounds"""

    def test_default_has_32_banks(self, geometry):
        assert geometry.total_banks == 32
        assert geometry.cells_per_row == 65536

    def test_flat_bank_is_dense(self, geometry):
        flat = {geometry.flat_bank((0, 0, r, g, b)) for r in range(2) for g in range(4) for b in range(4)}
        assert flat == set(range(32))

    def test_row_size_power_of_two(self):
        with pytest.raises(InvalidInputError):
            DramGeometry(row_size_bytes=3000)

    def test_zero_banks_rejected(self):
        with pytest.raises(InvalidInputError):
            DramGeometry(banks_per_group=0)


class TestAddressMapping:
    """XOR-reduction decoding"""

    def test_default_mapping_fits_geometry(self, mapping, geometry):
        mapping.check_compatible(geometry)
        assert mapping.address_bits == 34

    def test_single_bit_functions(self):
        m = AddressMapping.from_lists({"bank": [[6], [7]], "row": [[8], [9]], "column": [[0], [1]]}, address_bits=10)
        loc = m.decode(0b1011000011)
        assert loc.column == 3
        assert loc.bank == 0b11
        assert loc.row == 0b10

    def test_xor_function_is_parity(self):
        m = AddressMapping.from_lists({"bank": [[3, 5]]}, address_bits=8)
        assert m.decode(0b001000).bank == 1
        assert m.decode(0b101000).bank == 0
        assert m.decode(0b100000).bank == 1

    def test_address_too_wide(self, mapping):
        with pytest.raises(InvalidInputError):
            mapping.decode(1 << 34)

    def test_bit_outside_width_rejected(self):
        with pytest.raises(InvalidInputError):
            AddressMapping.from_lists({"bank": [[40]]}, address_bits=34)

    def test_unknown_coordinate_rejected(self):
        with pytest.raises(InvalidInputError):
            AddressMapping.from_lists({"subarray": [[1]]})

    def test_decoded_value_beyond_geometry(self):
        m = AddressMapping.from_lists({"bank": [[0], [1], [2]]}, address_bits=8)
        with pytest.raises(InvalidInputError):
            map_address(0b111, m, DramGeometry())

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=(1 << 34) - 1))
    def test_encode_inverts_decode(self, addr):
        mapping = AddressMapping.default_ddr4()
        location = mapping.decode(addr)
        assert mapping.decode(mapping.encode(location)) == location

    def test_encode_unreachable_value(self, mapping):
        with pytest.raises(InvalidInputError):
            mapping.encode(DramLocation(bank=9))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_mapping_matches_parity_evaluation(self, seed, geometry):
        functions, mapping = random_mapping(seed)
        assert sum(len(bit_sets) for bit_sets in functions.values()) == 16
        rng = np.random.default_rng(100 + seed)
        for addr in rng.integers(0, 1 << 34, size=10_000):
            addr = int(addr)
            assert map_address(addr, mapping, geometry).as_dict() == parity_decode(addr, functions)


class TestActivationLedger:
    """Window accounting"""

    def test_counts_accumulate_within_window(self):
        ledger = ActivationLedger(100.0)
        loc = DramLocation(row=7)
        for t in (0.0, 10.0, 99.9):
            record_activation(ledger, loc, t)
        assert ledger.count(loc.row_key) == 3

    def test_reset_exactly_at_boundary(self):
        ledger = ActivationLedger(100.0)
        closed = []
        ledger.on_close(closed.append)
        loc = DramLocation(row=7)
        record_activation(ledger, loc, 99.0)
        record_activation(ledger, loc, 100.0)
        assert ledger.count(loc.row_key) == 1
        assert ledger.window_id == 1
        assert len(closed) == 1
        assert closed[0].window_id == 0
        assert closed[0].max_count == 1

    def test_out_of_order_time(self):
        ledger = ActivationLedger(100.0)
        record_activation(ledger, DramLocation(), 50.0)
        with pytest.raises(OrderingError):
            record_activation(ledger, DramLocation(), 49.0)

    def test_empty_window_not_reported(self):
        ledger = ActivationLedger(100.0)
        assert ledger.close_window() is None

    def test_positive_window_required(self):
        with pytest.raises(InvalidInputError):
            ActivationLedger(0)


class TestTrr:
    """Target-row refresh"""

    def test_double_refresh_halves_window(self):
        assert effective_window_ns(64e6, TrrConfig(double_refresh=True)) == 32e6
        assert effective_window_ns(64e6, TrrConfig()) == 64e6

    def test_neighbours_refreshed_above_limit(self):
        counts = {(BANK, 10): 50_001, (BANK, 20): 50_000}
        refreshed = apply_trr(counts, TrrConfig(enabled=True), rows_per_bank=65536)
        assert set(refreshed) == {(BANK, 9), (BANK, 11)}

    def test_disabled_refreshes_nothing(self):
        assert not apply_trr({(BANK, 10): 10 ** 6}, TrrConfig(enabled=False))

    def test_radius_clipped_at_bank_edge(self):
        refreshed = apply_trr({(BANK, 0): 60_000}, TrrConfig(enabled=True, refresh_radius=2), rows_per_bank=100)
        assert set(refreshed) == {(BANK, 1), (BANK, 2)}

    def test_overlapping_neighbourhoods(self):
        """Aggressors two rows apart share the row between them"""
        counts = {(BANK, 100): 60_000, (BANK, 102): 60_000}
        refreshed = apply_trr(counts, TrrConfig(enabled=True, refresh_radius=1), rows_per_bank=65536)
        assert refreshed[(BANK, 101)] == 2
        assert refreshed[(BANK, 99)] == 1
        assert refreshed[(BANK, 103)] == 1
        assert (BANK, 98) not in refreshed
        assert set(refreshed) == {(BANK, 99), (BANK, 101), (BANK, 103)}

    def test_trr_suppresses_flips(self):
        model = FlipModel({1: 100}, susceptibility=0.01, deterministic_mode=True)
        counts = {(BANK, 10): 200}
        assert evaluate_flips(counts, model, TrrConfig(enabled=False), 65536)
        assert evaluate_flips(counts, model, TrrConfig(enabled=True, max_activation_count=150), 65536) == []


class TestFlipModel:
    """Threshold and susceptibility"""

    def test_below_threshold_no_flip(self):
        model = FlipModel({1: 139_000}, susceptibility=0.01)
        assert evaluate_flips({(BANK, 10): 138_999}, model, TrrConfig(), 65536) == []

    def test_double_sided_sums_neighbours(self):
        model = FlipModel({1: 139_000}, susceptibility=0.01, deterministic_mode=True)
        flips = evaluate_flips({(BANK, 9): 70_000, (BANK, 11): 70_000}, model, TrrConfig(), 65536)
        assert {f.row for f in flips} == {10}
        assert all(f.distance == 1 for f in flips)

    def test_distance_two_threshold(self):
        model = FlipModel({1: 1_000_000, 2: 2_000_000}, susceptibility=0.01, deterministic_mode=True)
        flips = evaluate_flips({(BANK, 10): 2_000_000}, model, TrrConfig(), 65536)
        assert {(f.row, f.distance) for f in flips} == {(8, 2), (9, 1), (11, 1), (12, 2)}

    def test_deterministic_mode_one_cell_per_row(self):
        model = FlipModel({1: 10}, susceptibility=0.001, deterministic_mode=True, seed=3)
        flips = evaluate_flips({(BANK, 5): 10}, model, TrrConfig(), 65536)
        assert len(flips) == 2

    def test_susceptibility_map_is_seeded(self):
        a = FlipModel(susceptibility=0.001, seed=7)
        b = FlipModel(susceptibility=0.001, seed=7)
        c = FlipModel(susceptibility=0.001, seed=8)
        key = (BANK, 1234)
        assert a.susceptible_cells(key) == b.susceptible_cells(key)
        assert a.susceptible_cells(key) != c.susceptible_cells(key)

    def test_zero_susceptibility_never_flips(self):
        model = FlipModel({1: 1}, susceptibility=0.0, deterministic_mode=True)
        assert evaluate_flips({(BANK, 5): 10 ** 6}, model, TrrConfig(), 65536) == []

    def test_thresholds_must_not_decrease(self):
        with pytest.raises(InvalidInputError):
            FlipModel({1: 200, 2: 100})


class TestBankCollisions:
    """Bank-collision probabilities"""

    def test_known_value(self):
        assert bank_collision_probability(8, 32) == pytest.approx(0.6143, abs=1e-4)

    def test_pigeonhole(self):
        assert pigeonhole_guarantee(32) == 33
        assert bank_collision_probability(33, 32) == 1.0

    @pytest.mark.parametrize("k", [0, 1])
    def test_trivial_counts(self, k):
        assert bank_collision_probability(k, 32) == 0.0

    def test_monte_carlo_agrees(self):
        estimate = simulate_bank_collisions(8, 32, trials=200_000, seed=1)
        assert estimate == pytest.approx(bank_collision_probability(8, 32), abs=0.01)

    def test_histogram_over_mapping(self, mapping, geometry):
        same_bank = [mapping.encode(DramLocation(row=r)) for r in range(4)]
        histogram = collisions_for(same_bank, mapping, geometry)
        assert histogram.total == 4
        assert histogram.max_bucket == 4
        assert histogram.colliding_banks() == [BANK]

    def test_histogram_matches_parity_tally(self, mapping, geometry):
        rng = np.random.default_rng(5)
        addresses = [int(a) for a in rng.integers(0, 1 << 34, size=1_000)]
        tally = Counter()
        for addr in addresses:
            decoded = parity_decode(addr, mapping.functions)
            tally[tuple(decoded[name] for name in ("channel", "dimm", "rank", "bank_group", "bank"))] += 1
        histogram = collisions_for(addresses, mapping, geometry)
        assert dict(histogram.counts) == dict(tally)
        assert histogram.total == 1_000


class TestLedgerProperties:
    """Properties over arbitrary activation streams"""

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(min_value=0.0, max_value=250.0), st.integers(min_value=0, max_value=5)),
                    max_size=200))
    def test_every_activation_is_counted_once(self, stream):
        ledger = ActivationLedger(100.0)
        closed = []
        ledger.on_close(closed.append)
        now = 0.0
        for gap, row in stream:
            now += gap
            record_activation(ledger, DramLocation(row=row), now)
        assert sum(snapshot.total for snapshot in closed) + sum(ledger.counts.values()) == len(stream)
        assert all(snapshot.window_id < ledger.window_id for snapshot in closed)

    @settings(max_examples=100, deadline=None)
    @given(st.dictionaries(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=400),
                           max_size=12),
           st.dictionaries(st.integers(min_value=2, max_value=40), st.integers(min_value=1, max_value=400),
                           max_size=6))
    def test_more_activations_never_remove_flips(self, base, extra):
        model = FlipModel({1: 300, 2: 600}, susceptibility=0.01, deterministic_mode=True, seed=1)
        before = {(BANK, row): count for row, count in base.items()}
        after = dict(before)
        for row, count in extra.items():
            after[(BANK, row)] = after.get((BANK, row), 0) + count

        def flipped(counts):
            return {(f.row, f.cell) for f in evaluate_flips(counts, model, TrrConfig(), 65536)}

        assert flipped(before) <= flipped(after)
