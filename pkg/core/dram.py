"""
DRAM model for HammerLab.

Geometry, XOR-reduction address mapping, per-window row-activation
accounting, the distance-aware flip model and TRR mitigation.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from error_handling import InvalidInputError, OrderingError

logger = logging.getLogger("HAMMERLAB.Dram")

COORDINATES = ("channel", "dimm", "rank", "bank_group", "bank", "row", "column")
BANK_COORDINATES = COORDINATES[:5]

DEFAULT_WINDOW_NS = 64_000_000.0
DEFAULT_THRESHOLDS = {1: 139_000, 2: 556_000}

BankKey = Tuple[int, int, int, int, int]
RowKey = Tuple[BankKey, int]


@dataclass(frozen=True)
class DramGeometry:
    """Channel/DIMM/rank/bank-group/bank/row hierarchy of the DRAM."""
    channels: int = 1
    dimms_per_channel: int = 1
    ranks_per_dimm: int = 2
    bank_groups: int = 4
    banks_per_group: int = 4
    rows_per_bank: int = 65536
    row_size_bytes: int = 8192

    def __post_init__(self):
        for name in ("channels", "dimms_per_channel", "ranks_per_dimm", "bank_groups",
                     "banks_per_group", "rows_per_bank", "row_size_bytes"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"geometry.{name} must be >= 1", context={"value": getattr(self, name)})
        if self.row_size_bytes & (self.row_size_bytes - 1):
            raise InvalidInputError("geometry.row_size_bytes must be a power of two",
                                    context={"value": self.row_size_bytes})

    @property
    def total_banks(self) -> int:
        return self.channels * self.dimms_per_channel * self.ranks_per_dimm * self.bank_groups * self.banks_per_group

    @property
    def cells_per_row(self) -> int:
        return self.row_size_bytes * 8

    def bound(self, coordinate: str) -> int:
        return {
            "channel": self.channels,
            "dimm": self.dimms_per_channel,
            "rank": self.ranks_per_dimm,
            "bank_group": self.bank_groups,
            "bank": self.banks_per_group,
            "row": self.rows_per_bank,
            "column": self.row_size_bytes,
        }[coordinate]

    def flat_bank(self, bank: BankKey) -> int:
        """Global bank index in [0, total_banks)."""
        channel, dimm, rank, bank_group, bank_index = bank
        index = channel
        index = index * self.dimms_per_channel + dimm
        index = index * self.ranks_per_dimm + rank
        index = index * self.bank_groups + bank_group
        return index * self.banks_per_group + bank_index


@dataclass(frozen=True)
class DramLocation:
    """A physical address decomposed into DRAM coordinates."""
    channel: int = 0
    dimm: int = 0
    rank: int = 0
    bank_group: int = 0
    bank: int = 0
    row: int = 0
    column: int = 0

    @property
    def bank_key(self) -> BankKey:
        return (self.channel, self.dimm, self.rank, self.bank_group, self.bank)

    @property
    def row_key(self) -> RowKey:
        return (self.bank_key, self.row)

    def as_dict(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in COORDINATES}


def _parity(value: int) -> int:
    return bin(value).count("1") & 1


@dataclass(frozen=True)
class AddressMapping:
    """
    XOR-reduction mapping from physical addresses to DRAM coordinates.

    ``functions[coord]`` lists one bit-index set per output bit of the
    coordinate, least-significant output bit first; the output bit is the
    parity of the address bits in the set.
    """
    functions: Mapping[str, Tuple[Tuple[int, ...], ...]]
    address_bits: int = 34
    _masks: Dict[str, Tuple[int, ...]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        unknown = set(self.functions) - set(COORDINATES)
        if unknown:
            raise InvalidInputError(f"unknown mapping coordinates: {sorted(unknown)}")
        if self.address_bits < 1:
            raise InvalidInputError("mapping.address_bits must be >= 1")
        masks = {}
        for coordinate in COORDINATES:
            bit_sets = self.functions.get(coordinate, ())
            coordinate_masks = []
            for bit_set in bit_sets:
                mask = 0
                for bit in bit_set:
                    if not 0 <= bit < self.address_bits:
                        raise InvalidInputError(
                            f"mapping.{coordinate} uses bit {bit} outside the {self.address_bits}-bit address",
                            context={"coordinate": coordinate, "bit": bit},
                        )
                    mask ^= 1 << bit
                coordinate_masks.append(mask)
            masks[coordinate] = tuple(coordinate_masks)
        object.__setattr__(self, "_masks", masks)

    @classmethod
    def from_lists(cls, functions: Mapping[str, Sequence[Sequence[int]]], address_bits: int = 34) -> "AddressMapping":
        return cls({k: tuple(tuple(bits) for bits in v) for k, v in functions.items()}, address_bits)

    @classmethod
    def default_ddr4(cls, geometry: Optional[DramGeometry] = None) -> "AddressMapping":
        """
        Synthetic DDR4-like mapping: byte column in the low bits, bank,
        bank-group and rank bits XORed with low row bits, row bits on top.
        """
        geometry = geometry or DramGeometry()
        column_bits = _log2_exact(geometry.row_size_bytes)
        bits_for = {name: _bits_needed(geometry.bound(name)) for name in COORDINATES}
        next_bit = column_bits
        xor_coordinates = ["bank", "bank_group", "rank", "dimm", "channel"]
        xor_low = {}
        for name in xor_coordinates:
            xor_low[name] = list(range(next_bit, next_bit + bits_for[name]))
            next_bit += bits_for[name]
        row_bits = list(range(next_bit, next_bit + bits_for["row"]))
        functions: Dict[str, Tuple[Tuple[int, ...], ...]] = {
            "column": tuple((bit,) for bit in range(column_bits)),
            "row": tuple((bit,) for bit in row_bits),
        }
        partner = iter(row_bits)
        for name in xor_coordinates:
            sets = []
            for bit in xor_low[name]:
                paired = next(partner, None)
                sets.append((bit, paired) if paired is not None and paired != bit else (bit,))
            functions[name] = tuple(sets)
        return cls(functions, next_bit + len(row_bits))

    def masks(self, coordinate: str) -> Tuple[int, ...]:
        return self._masks[coordinate]

    def check_compatible(self, geometry: DramGeometry) -> None:
        """Every decoded coordinate must fit its geometry bound."""
        for coordinate in COORDINATES:
            width = len(self._masks[coordinate])
            if (1 << width) > geometry.bound(coordinate):
                raise InvalidInputError(
                    f"mapping.{coordinate} has {width} bits but geometry allows {geometry.bound(coordinate)} values",
                    context={"coordinate": coordinate},
                )

    def decode(self, addr: int) -> DramLocation:
        if addr < 0 or addr >> self.address_bits:
            raise InvalidInputError(
                f"address {addr:#x} exceeds the {self.address_bits}-bit physical address width",
                context={"address": addr},
            )
        values = {}
        for coordinate in COORDINATES:
            value = 0
            for index, mask in enumerate(self._masks[coordinate]):
                value |= _parity(addr & mask) << index
            values[coordinate] = value
        return DramLocation(**values)

    def encode(self, location: DramLocation) -> int:
        """
        Smallest-support address decoding to ``location``.

        Solves the XOR system over GF(2); free address bits are zero.
        """
        equations: List[Tuple[int, int]] = []
        for coordinate in COORDINATES:
            target = getattr(location, coordinate)
            masks = self._masks[coordinate]
            if target >> len(masks):
                raise InvalidInputError(
                    f"{coordinate}={target} is not reachable with {len(masks)} mapping bits",
                    context={"coordinate": coordinate, "value": target},
                )
            for index, mask in enumerate(masks):
                equations.append((mask, (target >> index) & 1))

        pivots: Dict[int, Tuple[int, int]] = {}
        for mask, value in equations:
            for bit, (pivot_mask, pivot_value) in pivots.items():
                if mask >> bit & 1:
                    mask ^= pivot_mask
                    value ^= pivot_value
            if mask == 0:
                if value:
                    raise InvalidInputError("location is inconsistent with the mapping functions",
                                            context=location.as_dict())
                continue
            bit = mask.bit_length() - 1
            for other_bit, (other_mask, other_value) in list(pivots.items()):
                if other_mask >> bit & 1:
                    pivots[other_bit] = (other_mask ^ mask, other_value ^ value)
            pivots[bit] = (mask, value)

        addr = 0
        for bit, (mask, value) in pivots.items():
            if value:
                addr |= 1 << bit
        return addr


def _log2_exact(value: int) -> int:
    return value.bit_length() - 1


def _bits_needed(bound: int) -> int:
    """Largest width whose value range fits inside ``bound``."""
    return bound.bit_length() - 1


def map_address(addr: int, mapping: AddressMapping, geom: DramGeometry) -> DramLocation:
    """Decode a physical address into DRAM coordinates."""
    location = mapping.decode(addr)
    for coordinate in COORDINATES:
        if getattr(location, coordinate) >= geom.bound(coordinate):
            raise InvalidInputError(
                f"decoded {coordinate} {getattr(location, coordinate)} exceeds geometry bound {geom.bound(coordinate)}",
                context={"address": addr},
            )
    return location


@dataclass(frozen=True)
class WindowSnapshot:
    """Activation counts of one closed refresh window."""
    window_id: int
    window_start_ns: float
    window_length_ns: float
    counts: Mapping[RowKey, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def max_count(self) -> int:
        return max(self.counts.values(), default=0)


class ActivationLedger:
    """
    Per-refresh-window row-activation counts.

    Windows are aligned fixed intervals of ``window_length_ns``; counts
    reset exactly at window boundaries. Registered close handlers receive
    the snapshot of every window that held activations before it resets.
    """

    def __init__(self, window_length_ns: float = DEFAULT_WINDOW_NS):
        if window_length_ns <= 0:
            raise InvalidInputError("window_length must be positive", context={"value": window_length_ns})
        self.window_length_ns = float(window_length_ns)
        self.window_id = 0
        self.counts: Dict[RowKey, int] = {}
        self.issued = 0
        self.last_time = float("-inf")
        self.close_handlers: List[Callable[[WindowSnapshot], None]] = []

    def on_close(self, handler: Callable[[WindowSnapshot], None]) -> Callable[[WindowSnapshot], None]:
        """Register a window-close handler."""
        self.close_handlers.append(handler)
        return handler

    def window_of(self, time_ns: float) -> int:
        return int(time_ns // self.window_length_ns)

    def snapshot(self) -> WindowSnapshot:
        return WindowSnapshot(
            window_id=self.window_id,
            window_start_ns=self.window_id * self.window_length_ns,
            window_length_ns=self.window_length_ns,
            counts=dict(self.counts),
        )

    def close_window(self) -> Optional[WindowSnapshot]:
        """Close the current window, notify handlers and reset the counts."""
        if not self.counts:
            return None
        snapshot = self.snapshot()
        logger.debug(f"Window {snapshot.window_id} closed with {snapshot.total} activations")
        for handler in self.close_handlers:
            handler(snapshot)
        self.counts = {}
        self.issued = 0
        return snapshot

    def advance_to(self, time_ns: float) -> None:
        """Roll over to the window containing ``time_ns``."""
        if time_ns < self.last_time:
            raise OrderingError(
                f"activation time {time_ns} ns precedes the previous time {self.last_time} ns",
                context={"time_ns": time_ns, "last_time_ns": self.last_time},
            )
        window = self.window_of(time_ns)
        if window != self.window_id:
            self.close_window()
            self.window_id = window
        self.last_time = time_ns

    def record(self, key: RowKey, time_ns: float, amount: int = 1) -> "ActivationLedger":
        self.advance_to(time_ns)
        self.counts[key] = self.counts.get(key, 0) + amount
        self.issued += amount
        return self

    def count(self, key: RowKey) -> int:
        return self.counts.get(key, 0)

    def shift_time(self, delta_ns: float) -> None:
        """Move the ordering clock forward after an arithmetic fast-forward."""
        self.last_time += delta_ns


def record_activation(ledger: ActivationLedger, loc: DramLocation, time: float) -> ActivationLedger:
    """Count one activation of ``loc``'s row at ``time`` (ns)."""
    return ledger.record(loc.row_key, time)


@dataclass(frozen=True)
class TrrConfig:
    """Target-row-refresh settings."""
    enabled: bool = False
    max_activation_count: int = 50_000
    refresh_radius: int = 1
    double_refresh: bool = False

    def __post_init__(self):
        if self.max_activation_count < 1:
            raise InvalidInputError("trr.max_activation_count must be >= 1")
        if self.refresh_radius < 1:
            raise InvalidInputError("trr.refresh_radius must be >= 1")


def effective_window_ns(base_window_ns: float, trr: TrrConfig) -> float:
    """Double refresh halves the refresh window."""
    return base_window_ns / 2 if trr.double_refresh else base_window_ns


def _counts_of(source) -> Mapping[RowKey, int]:
    if isinstance(source, ActivationLedger):
        return source.counts
    if isinstance(source, WindowSnapshot):
        return source.counts
    return source


def apply_trr(ledger, trr: TrrConfig, rows_per_bank: Optional[int] = None) -> Counter:
    """
    Rows refreshed by TRR in the window.

    Every row activated more than ``max_activation_count`` times refreshes
    the rows within ``refresh_radius``. The result counts how often each
    row was refreshed; its keys form the refreshed set.
    """
    refreshed: Counter = Counter()
    if not trr.enabled:
        return refreshed
    for (bank, row), count in _counts_of(ledger).items():
        if count <= trr.max_activation_count:
            continue
        for offset in range(1, trr.refresh_radius + 1):
            for neighbour in (row - offset, row + offset):
                if neighbour < 0 or (rows_per_bank is not None and neighbour >= rows_per_bank):
                    continue
                refreshed[(bank, neighbour)] += 1
    return refreshed


class FlipModel:
    """
    Distance-aware activation thresholds plus a seeded susceptibility map.

    A row's susceptible cells are drawn from a generator seeded by
    ``(seed, bank, row)``, so the cell map is reproducible and independent
    of evaluation order.
    """

    def __init__(
        self,
        threshold_by_distance: Optional[Mapping[int, int]] = None,
        susceptibility: float = 1e-4,
        deterministic_mode: bool = False,
        seed: int = 0,
        cells_per_row: int = 8192 * 8,
    ):
        thresholds = dict(sorted((threshold_by_distance or DEFAULT_THRESHOLDS).items()))
        if not thresholds:
            raise InvalidInputError("flip_model.threshold_by_distance must not be empty")
        previous = 0
        for distance, threshold in thresholds.items():
            if distance < 1 or threshold < 1:
                raise InvalidInputError("flip thresholds need distance >= 1 and threshold >= 1",
                                        context={"distance": distance, "threshold": threshold})
            if threshold < previous:
                raise InvalidInputError("flip thresholds must be non-decreasing in distance",
                                        context={"distance": distance, "threshold": threshold})
            previous = threshold
        if not 0.0 <= susceptibility <= 1.0:
            raise InvalidInputError("flip_model.susceptibility must lie in [0, 1]")
        self.threshold_by_distance = thresholds
        self.susceptibility = susceptibility
        self.deterministic_mode = deterministic_mode
        self.seed = seed
        self.cells_per_row = cells_per_row
        self._cells: Dict[RowKey, Tuple[int, ...]] = {}

    @property
    def max_distance(self) -> int:
        return max(self.threshold_by_distance)

    @property
    def min_threshold(self) -> int:
        return min(self.threshold_by_distance.values())

    def _rng(self, key: RowKey) -> np.random.Generator:
        bank, row = key
        return np.random.default_rng([self.seed, *bank, row])

    def susceptible_cells(self, key: RowKey) -> Tuple[int, ...]:
        cells = self._cells.get(key)
        if cells is None:
            if self.susceptibility <= 0.0:
                cells = ()
            else:
                rng = self._rng(key)
                amount = int(rng.binomial(self.cells_per_row, self.susceptibility))
                chosen = rng.choice(self.cells_per_row, size=amount, replace=False) if amount else []
                cells = tuple(sorted(int(c) for c in chosen))
            self._cells[key] = cells
        return cells

    def is_susceptible(self, key: RowKey, cell: int) -> bool:
        return cell in self.susceptible_cells(key)

    def flipping_cells(self, key: RowKey) -> Tuple[int, ...]:
        """Cells that flip once the row is disturbed past its threshold."""
        if self.susceptibility <= 0.0:
            return ()
        if self.deterministic_mode:
            cells = self.susceptible_cells(key)
            if cells:
                return cells[:1]
            return (int(self._rng(key).integers(self.cells_per_row)),)
        return self.susceptible_cells(key)


@dataclass(frozen=True)
class Flip:
    """One flipped cell."""
    window_id: int
    bank: BankKey
    row: int
    cell: int
    distance: int
    time_ns: float = 0.0

    def as_row(self) -> Dict[str, int]:
        channel, dimm, rank, bank_group, bank = self.bank
        return {
            "window_id": self.window_id,
            "channel": channel,
            "dimm": dimm,
            "rank": rank,
            "bank_group": bank_group,
            "bank": bank,
            "row": self.row,
            "cell": self.cell,
            "distance": self.distance,
        }


def disturbance_by_distance(counts: Mapping[RowKey, int], max_distance: int,
                            rows_per_bank: Optional[int] = None) -> Dict[RowKey, Dict[int, int]]:
    """Aggressor activations summed per victim row and distance."""
    pressure: Dict[RowKey, Dict[int, int]] = {}
    for (bank, row), count in counts.items():
        if count <= 0:
            continue
        for distance in range(1, max_distance + 1):
            for victim in (row - distance, row + distance):
                if victim < 0 or (rows_per_bank is not None and victim >= rows_per_bank):
                    continue
                per_distance = pressure.setdefault((bank, victim), {})
                per_distance[distance] = per_distance.get(distance, 0) + count
    return pressure


def evaluate_flips(ledger, model: FlipModel, trr: TrrConfig, rows_per_bank: Optional[int] = None,
                   window_id: Optional[int] = None, time_ns: float = 0.0) -> List[Flip]:
    """
    Flips of a closed window.

    A victim row flips when TRR did not refresh it and, for some distance,
    the summed aggressor activations at that distance reach the threshold.
    The reported distance is the smallest qualifying one.
    """
    counts = _counts_of(ledger)
    if window_id is None:
        window_id = getattr(ledger, "window_id", 0)
    refreshed = apply_trr(counts, trr, rows_per_bank)
    pressure = disturbance_by_distance(counts, model.max_distance, rows_per_bank)
    flips: List[Flip] = []
    for key in sorted(pressure):
        if key in refreshed:
            continue
        per_distance = pressure[key]
        distance = next(
            (d for d, threshold in model.threshold_by_distance.items() if per_distance.get(d, 0) >= threshold),
            None,
        )
        if distance is None:
            continue
        bank, row = key
        for cell in model.flipping_cells(key):
            flips.append(Flip(window_id, bank, row, cell, distance, time_ns))
    return flips


def bank_collision_probability(k: int, banks: int) -> float:
    """Probability that at least two of ``k`` uniformly random addresses share a bank."""
    if k < 0 or banks < 1:
        raise InvalidInputError("need k >= 0 and banks >= 1", context={"k": k, "banks": banks})
    if k > banks:
        return 1.0
    no_collision = 1.0
    for i in range(k):
        no_collision *= (banks - i) / banks
    return 1.0 - no_collision


def simulate_bank_collisions(k: int, banks: int, trials: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo estimate of :func:`bank_collision_probability`."""
    if k < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    draws = np.sort(rng.integers(0, banks, size=(trials, k)), axis=1)
    collided = np.any(draws[:, 1:] == draws[:, :-1], axis=1)
    return float(collided.mean())


@dataclass(frozen=True)
class BankHistogram:
    """Per-bank address counts."""
    counts: Mapping[BankKey, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def max_bucket(self) -> int:
        return max(self.counts.values(), default=0)

    def colliding_banks(self) -> List[BankKey]:
        return sorted(bank for bank, count in self.counts.items() if count >= 2)


def collisions_for(addresses: Iterable[int], mapping: AddressMapping, geom: DramGeometry) -> BankHistogram:
    """Histogram of banks hit by ``addresses``."""
    histogram: Counter = Counter(map_address(addr, mapping, geom).bank_key for addr in addresses)
    return BankHistogram(dict(histogram))


def pigeonhole_guarantee(banks: int) -> int:
    """Smallest address count that must put two addresses in one bank."""
    return banks + 1


def collision_table(ks: Sequence[int], banks: int) -> List[Dict[str, float]]:
    return [{"k": k, "banks": banks, "probability": bank_collision_probability(k, banks)} for k in ks]
