"""
Discrete-event attack simulation for HammerLab.

Packets arrive at the configured rate; every trace operation passes the
cache, then the memory controller, then the activation ledger. Windows
close on schedule, TRR applies and flips are evaluated.

Periodic steady states are replayed arithmetically: when the per-packet
state repeats inside a window the remaining packets of that window are
added as multiples of the cycle delta, and when consecutive windows start
in the same state the remaining full windows are copied. Both shortcuts
produce exactly what the explicit replay would.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from error_handling import ConfigurationError, InvalidInputError

from .attack import Arrival, AttackConfig, BackgroundMode, PacketProfile, TraceOp, build_trace
from .cache import CacheConfig, CacheState, UncachedRegions, cache_access, flush
from .dram import (
    DEFAULT_WINDOW_NS,
    ActivationLedger,
    AddressMapping,
    BankKey,
    DramGeometry,
    DramLocation,
    Flip,
    FlipModel,
    RowKey,
    TrrConfig,
    WindowSnapshot,
    effective_window_ns,
    evaluate_flips,
    map_address,
)
from .memctrl import AccessClass, BankState, PagePolicy, TimingConfig, access

logger = logging.getLogger("HAMMERLAB.Simulation")

NS_PER_HOUR = 3_600_000_000_000
_HISTORY_LIMIT = 4096


@dataclass(frozen=True)
class Platform:
    """DRAM, memory-controller and cache configuration of the target."""
    geometry: DramGeometry = field(default_factory=DramGeometry)
    mapping: Optional[AddressMapping] = None
    timing: TimingConfig = field(default_factory=TimingConfig)
    policy: PagePolicy = field(default_factory=PagePolicy.closed)
    cache: CacheConfig = field(default_factory=CacheConfig)
    uncached: UncachedRegions = field(default_factory=UncachedRegions)
    flip_model: FlipModel = field(default_factory=FlipModel)
    trr: TrrConfig = field(default_factory=TrrConfig)
    window_ns: float = DEFAULT_WINDOW_NS

    def resolved_mapping(self) -> AddressMapping:
        return self.mapping or AddressMapping.default_ddr4(self.geometry)

    @property
    def effective_window_ns(self) -> float:
        return effective_window_ns(self.window_ns, self.trr)


@dataclass
class SimReport:
    window_maxima: List[Tuple[int, int]]
    flips: List[Flip]
    flips_per_hour: float
    access_histogram: Dict[str, int]
    dram_accesses: int
    dram_access_rate: float
    cache_hits: int
    packets: int
    accesses_issued: int
    background_accesses: int
    activations: int
    duration_s: float
    window_ns: float
    seed: int
    fast_forwarded_packets: int = 0
    replicated_windows: int = 0
    victims_per_window: int = 0
    flip_effects: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def max_window_count(self) -> int:
        return max((count for _, count in self.window_maxima), default=0)

    def flip_rows(self) -> List[Dict[str, int]]:
        return [flip.as_row() for flip in self.flips]

    def to_dict(self, include_flips: bool = True) -> Dict[str, Any]:
        payload = {
            "packets": self.packets,
            "accesses_issued": self.accesses_issued,
            "background_accesses": self.background_accesses,
            "cache_hits": self.cache_hits,
            "dram_accesses": self.dram_accesses,
            "dram_access_rate": self.dram_access_rate,
            "activations": self.activations,
            "access_histogram": dict(self.access_histogram),
            "window_ns": self.window_ns,
            "windows": len(self.window_maxima),
            "max_window_count": self.max_window_count,
            "window_maxima": [[window, count] for window, count in self.window_maxima],
            "flip_count": len(self.flips),
            "flips_per_hour": self.flips_per_hour,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "fast_forwarded_packets": self.fast_forwarded_packets,
            "replicated_windows": self.replicated_windows,
        }
        if include_flips:
            payload["flips"] = [{**flip.as_row(), "time_ns": flip.time_ns} for flip in self.flips]
        if self.flip_effects:
            payload["flip_effects"] = list(self.flip_effects)
        return payload


@dataclass
class _Totals:
    histogram: Counter = field(default_factory=Counter)
    cache_hits: int = 0
    dram_accesses: int = 0
    accesses_issued: int = 0
    background: int = 0
    activations: int = 0
    packets: int = 0

    def freeze(self, counts: Dict) -> Tuple:
        return (dict(self.histogram), self.cache_hits, self.dram_accesses, self.accesses_issued,
                self.background, self.activations, self.packets, dict(counts))


class _Engine:
    def __init__(self, cfg: AttackConfig, profile: PacketProfile, platform: Platform, seed: int):
        self.cfg = cfg
        self.profile = profile
        self.platform = platform
        self.seed = seed
        self.mapping = platform.resolved_mapping()
        self.window_ns = platform.effective_window_ns
        self.duration_ns = cfg.duration_s * 1e9
        self.rng = np.random.default_rng(seed)

        self.cache = CacheState(platform.cache, platform.uncached)
        self.banks: Dict[BankKey, BankState] = {}
        self.ledger = ActivationLedger(self.window_ns)
        self.ledger.on_close(self._on_window_close)
        self.totals = _Totals()
        self.flips: List[Flip] = []
        self.window_maxima: List[Tuple[int, int]] = []
        self.fast_forwarded = 0
        self.replicated = 0

        self.trace: List[TraceOp] = build_trace(profile, cfg)
        self.locations: Dict[int, DramLocation] = {}
        try:
            for addr in profile.addresses:
                self.locate(addr)
        except InvalidInputError as e:
            raise ConfigurationError(f"profile address outside the mapped range: {e.message}",
                                     key="attack.profile", context=e.context) from e

        self.interval_ns = cfg.packet_interval_ns
        self.spacing_ns = self.interval_ns / max(len(self.trace), 1)
        self.periodic = (
            cfg.arrival is Arrival.UNIFORM and cfg.background_load == 0 and cfg.duty_cycle is None
        )
        hammered = profile.function(cfg.hammered_function).addresses
        self.hammered_bank = self.locate(hammered[0]).bank_key
        self.victims = victim_rows((self.locate(addr).row_key for addr in hammered),
                                   platform.geometry.rows_per_bank)

    def locate(self, addr: int) -> DramLocation:
        location = self.locations.get(addr)
        if location is None:
            location = map_address(addr, self.mapping, self.platform.geometry)
            self.locations[addr] = location
        return location

    def _on_window_close(self, snapshot: WindowSnapshot) -> None:
        close_ns = min(snapshot.window_start_ns + snapshot.window_length_ns, self.duration_ns)
        self.window_maxima.append((snapshot.window_id, snapshot.max_count))
        self.flips.extend(
            evaluate_flips(snapshot, self.platform.flip_model, self.platform.trr,
                           self.platform.geometry.rows_per_bank, snapshot.window_id, close_ns)
        )

    def dram_access(self, location: DramLocation, time_ns: float) -> None:
        bank = self.banks.get(location.bank_key)
        if bank is None:
            bank = self.banks[location.bank_key] = BankState.for_policy(self.platform.policy)
        outcome, _ = access(bank, location.row, time_ns, self.platform.policy, self.platform.timing)
        self.totals.histogram[outcome.cls.value] += 1
        self.totals.dram_accesses += 1
        if outcome.activated:
            self.totals.activations += 1
            self.ledger.record(location.row_key, time_ns)

    def run_op(self, op: TraceOp, time_ns: float) -> None:
        if not op.is_access:
            flush(self.cache, op.addr)
            return
        self.totals.accesses_issued += 1
        if op.cached and cache_access(self.cache, op.addr).hit:
            self.totals.cache_hits += 1
            return
        self.dram_access(self.locate(op.addr), time_ns)

    def background_location(self) -> DramLocation:
        geometry = self.platform.geometry
        row = int(self.rng.integers(geometry.rows_per_bank))
        if self.cfg.background_mode is BackgroundMode.HAMMERED_BANK:
            channel, dimm, rank, bank_group, bank = self.hammered_bank
        else:
            channel = int(self.rng.integers(geometry.channels))
            dimm = int(self.rng.integers(geometry.dimms_per_channel))
            rank = int(self.rng.integers(geometry.ranks_per_dimm))
            bank_group = int(self.rng.integers(geometry.bank_groups))
            bank = int(self.rng.integers(geometry.banks_per_group))
        return DramLocation(channel, dimm, rank, bank_group, bank, row, 0)

    def state_key(self, reference_ns: float) -> Tuple:
        banks = tuple(sorted((key, state.state_key(reference_ns)) for key, state in self.banks.items()))
        return (self.cache.snapshot(), banks)

    def shift(self, delta_ns: float) -> None:
        for state in self.banks.values():
            state.shift(delta_ns)
        self.ledger.shift_time(delta_ns)

    def run(self) -> SimReport:
        if self.periodic:
            self.run_periodic()
        else:
            self.run_general()
        self.ledger.close_window()
        hours = self.duration_ns / NS_PER_HOUR
        duration_s = self.cfg.duration_s
        logger.info(
            f"Simulated {self.totals.packets} packets over {duration_s} s: "
            f"{self.totals.dram_accesses} DRAM accesses, {len(self.flips)} flips"
        )
        return SimReport(
            window_maxima=sorted(self.window_maxima),
            flips=sorted(self.flips, key=lambda f: (f.window_id, f.bank, f.row, f.cell)),
            flips_per_hour=len(self.flips) / hours,
            access_histogram={cls.value: self.totals.histogram.get(cls.value, 0) for cls in AccessClass},
            dram_accesses=self.totals.dram_accesses,
            dram_access_rate=self.totals.dram_accesses / duration_s,
            cache_hits=self.totals.cache_hits,
            packets=self.totals.packets,
            accesses_issued=self.totals.accesses_issued,
            background_accesses=self.totals.background,
            activations=self.totals.activations,
            duration_s=duration_s,
            window_ns=self.window_ns,
            seed=self.seed,
            fast_forwarded_packets=self.fast_forwarded,
            replicated_windows=self.replicated,
            victims_per_window=len(self.victims),
        )

    def run_packet(self, start_ns: float) -> float:
        """Run one packet's trace starting at ``start_ns``; returns the time of its last op."""
        self.ledger.advance_to(max(start_ns, self.ledger.last_time))
        time_ns = start_ns
        for index, op in enumerate(self.trace):
            time_ns = max(start_ns + index * self.spacing_ns, self.ledger.last_time)
            self.run_op(op, time_ns)
        self.totals.packets += 1
        return time_ns

    def run_general(self) -> None:
        """Event loop for Poisson arrivals, background load or burst mode."""
        packet_times = self.packet_times()
        background_times = self.background_times()
        next_background = 0
        last_ns = 0.0
        for start_ns in packet_times:
            while next_background < len(background_times) and background_times[next_background] <= start_ns:
                last_ns = max(background_times[next_background], last_ns)
                self.run_background(last_ns)
                next_background += 1
            start_ns = max(start_ns, last_ns)
            last_ns = self.run_packet(start_ns)
        while next_background < len(background_times):
            last_ns = max(background_times[next_background], last_ns)
            self.run_background(last_ns)
            next_background += 1

    def run_background(self, time_ns: float) -> None:
        self.ledger.advance_to(time_ns)
        self.totals.background += 1
        self.dram_access(self.background_location(), time_ns)

    def packet_times(self) -> List[float]:
        if self.cfg.arrival is Arrival.POISSON:
            times = []
            now = float(self.rng.exponential(self.interval_ns))
            while now < self.duration_ns:
                times.append(now)
                now += float(self.rng.exponential(self.interval_ns))
        else:
            count = math.ceil(self.duration_ns / self.interval_ns)
            times = [k * self.interval_ns for k in range(count) if k * self.interval_ns < self.duration_ns]
        if self.cfg.duty_cycle is not None:
            times = [t for t in times if self.cfg.duty_cycle.active(t)]
        return times

    def background_times(self) -> List[float]:
        if self.cfg.background_load <= 0:
            return []
        mean_gap_ns = 1e9 / self.cfg.background_load
        times = []
        now = float(self.rng.exponential(mean_gap_ns))
        while now < self.duration_ns:
            times.append(now)
            now += float(self.rng.exponential(mean_gap_ns))
        return times

    def run_periodic(self) -> None:
        """Uniform arrivals only: explicit replay with steady-state fast-forward."""
        interval = self.interval_ns
        total = math.ceil(self.duration_ns / interval)
        if (total - 1) * interval >= self.duration_ns:
            total -= 1
        window = self.window_ns
        packet = 0
        window_start_key: Optional[Tuple] = None
        window_start_totals: Optional[Tuple] = None
        window_start_flips = 0
        window_start_maxima = 0
        current_window = -1
        history: Dict[Tuple, Tuple[int, Tuple]] = {}

        while packet < total:
            start_ns = packet * interval
            window_id = int(start_ns // window)
            if window_id != current_window:
                self.ledger.advance_to(start_ns)
                history.clear()
                key = (round(start_ns - window_id * window, 3), self.state_key(start_ns))
                if window_start_key is not None and key == window_start_key and window_id == current_window + 1:
                    skipped = self.replicate_windows(
                        current_window, window_id, packet, total, window_start_totals,
                        window_start_flips, window_start_maxima,
                    )
                    if skipped:
                        packet += skipped
                        window_start_key = None
                        current_window = self.ledger.window_id - 1
                        continue
                window_start_key = key
                window_start_totals = self.totals.freeze(self.ledger.counts)
                window_start_flips = len(self.flips)
                window_start_maxima = len(self.window_maxima)
                current_window = window_id

            self.run_packet(start_ns)
            packet += 1

            if packet >= total:
                break
            next_ns = packet * interval
            if int(next_ns // window) != window_id:
                continue
            key = self.state_key(next_ns)
            seen = history.get(key)
            if seen is None:
                if len(history) >= _HISTORY_LIMIT:
                    history.clear()
                history[key] = (packet, self.totals.freeze(self.ledger.counts))
                continue
            first_packet, first_totals = seen
            period = packet - first_packet
            window_end = (window_id + 1) * window
            last_fitting = min(total - 1, math.floor((window_end - interval) / interval))
            while last_fitting >= packet and last_fitting * interval + interval > window_end:
                last_fitting -= 1
            cycles = (last_fitting - packet + 1) // period
            if cycles < 1:
                continue
            self.apply_delta(first_totals, self.totals.freeze(self.ledger.counts), cycles)
            skipped = cycles * period
            self.shift(skipped * interval)
            self.fast_forwarded += skipped
            logger.debug(f"Fast-forwarded {skipped} packets in window {window_id} (period {period})")
            packet += skipped
            history.clear()

    def apply_delta(self, before: Tuple, after: Tuple, times: int) -> None:
        hist_b, hits_b, dram_b, issued_b, bg_b, act_b, packets_b, counts_b = before
        hist_a, hits_a, dram_a, issued_a, bg_a, act_a, packets_a, counts_a = after
        for cls, value in hist_a.items():
            self.totals.histogram[cls] += (value - hist_b.get(cls, 0)) * times
        self.totals.cache_hits += (hits_a - hits_b) * times
        self.totals.dram_accesses += (dram_a - dram_b) * times
        self.totals.accesses_issued += (issued_a - issued_b) * times
        self.totals.background += (bg_a - bg_b) * times
        self.totals.activations += (act_a - act_b) * times
        self.totals.packets += (packets_a - packets_b) * times
        for row_key, value in counts_a.items():
            delta = value - counts_b.get(row_key, 0)
            if delta:
                self.ledger.counts[row_key] = self.ledger.counts.get(row_key, 0) + delta * times
                self.ledger.issued += delta * times

    def replicate_windows(self, previous_window: int, window_id: int, first_packet: int, total: int, start_totals: Tuple,
                          start_flips: int, start_maxima: int) -> int:
        """Copy the previous window onto every remaining full window; returns packets skipped."""
        window = self.window_ns
        packets_per_window = self.totals.packets - start_totals[6]
        if packets_per_window <= 0:
            return 0
        last_full = int(self.duration_ns // window) - 1
        repeats = min(last_full - window_id + 1, (total - first_packet) // packets_per_window)
        if repeats < 1:
            return 0
        window_flips = self.flips[start_flips:]
        window_maxima = self.window_maxima[start_maxima:]
        for offset in range(1, repeats + 1):
            for flip in window_flips:
                self.flips.append(replace(flip, window_id=flip.window_id + offset,
                                          time_ns=flip.time_ns + offset * window))
            for wid, count in window_maxima:
                self.window_maxima.append((wid + offset, count))
        self.apply_delta(start_totals, self.totals.freeze(start_totals[7]), repeats)
        self.shift(repeats * window)
        self.ledger.window_id = window_id + repeats
        self.replicated += repeats
        logger.debug(f"Replicated window {previous_window} onto {repeats} following windows")
        return repeats * packets_per_window


def simulate(cfg: AttackConfig, profile: PacketProfile, platform: Optional[Platform] = None,
             seed: int = 0) -> SimReport:
    """Run the attack against the platform; deterministic per seed."""
    return _Engine(cfg, profile, platform or Platform(), seed).run()


def victim_rows(aggressors: Iterable[RowKey], rows_per_bank: int) -> List[RowKey]:
    """Rows next to an aggressor that are not aggressors themselves."""
    hammered = set(aggressors)
    neighbours = {(bank, row + offset) for bank, row in hammered for offset in (-1, 1)
                  if 0 <= row + offset < rows_per_bank}
    return sorted(neighbours - hammered)


def expected_flips_per_hour(report: SimReport, model: FlipModel, victims_per_window: Optional[int] = None) -> float:
    """
    Analytic flips per hour for a simulated run.

    Every window whose busiest row reaches the distance-1 threshold
    counts once per victim row, and each victim contributes its flipping
    cells. Victims default to the report's ``victims_per_window``, the
    rows adjacent to the hammered function's aggressor rows: two for a
    single aggressor row, three for a double-sided pair.
    """
    if victims_per_window is None:
        victims_per_window = report.victims_per_window
    threshold = model.threshold_by_distance[min(model.threshold_by_distance)]
    exceeding = sum(1 for _, count in report.window_maxima if count >= threshold)
    cells = 1.0 if model.deterministic_mode else model.susceptibility * model.cells_per_row
    if model.susceptibility <= 0:
        cells = 0.0
    hours = report.duration_s / 3600
    return exceeding * victims_per_window * cells / hours
