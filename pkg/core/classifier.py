"""
Page-policy classification for HammerLab.

Loads an address an increasing number of times, compares the access time
against a same-bank row conflict and decides between closed, open and
adaptive page policies. Works against any TimingSource; the simulated
source drives the memory-controller model directly.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tenacity import retry, retry_if_exception_type, stop_after_attempt

from error_handling import ConfigurationError, InvalidInputError, MalformedRecordError, TimingSourceError

from .dram import AddressMapping, DramGeometry, DramLocation, map_address
from .memctrl import BankState, PagePolicy, TimingConfig, access

logger = logging.getLogger("HAMMERLAB.Classifier")

VERDICTS = ("closed", "open", "adaptive", "unclassifiable")


def geometric_schedule(n_max: int = 10_000, points: int = 40) -> Tuple[int, ...]:
    """Strictly increasing repetition counts from 1 to ``n_max``, geometrically spaced."""
    if n_max < 1 or points < 1:
        raise InvalidInputError("schedule needs n_max >= 1 and points >= 1")
    values = np.unique(np.round(np.geomspace(1, n_max, points)).astype(int))
    return tuple(int(v) for v in values)


@dataclass(frozen=True)
class ClassifierConfig:
    n_schedule: Tuple[int, ...] = field(default_factory=geometric_schedule)
    repeats_per_point: int = 9
    equality_tolerance: float = 3.0
    jump_detection_min_step: float = 20.0

    def __post_init__(self):
        schedule = tuple(self.n_schedule)
        if not schedule or schedule[0] < 1 or any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise InvalidInputError("classifier.n_schedule must be strictly increasing and start at >= 1")
        if self.repeats_per_point < 1:
            raise InvalidInputError("classifier.repeats_per_point must be >= 1")
        if not 0 <= self.equality_tolerance < self.jump_detection_min_step:
            raise InvalidInputError("classifier tolerance must lie in [0, min_step)")
        object.__setattr__(self, "n_schedule", schedule)


class TimingSource(ABC):
    """Anything that can time single-address and row-conflict accesses."""

    address_a: int = 0
    address_b: int = 0

    def probe_pair(self) -> Tuple[int, int]:
        """Default addresses A and B used by the classifier."""
        return self.address_a, self.address_b

    @abstractmethod
    def measure_single(self, a: int, n: int) -> float:
        """Latency of an access to A after loading A ``n`` times."""

    @abstractmethod
    def measure_conflict(self, a: int, b: int) -> float:
        """Latency of B right after A, both in one bank but different rows."""


def same_bank_pair(mapping: AddressMapping, geom: DramGeometry, bank: Sequence[int] = (0, 0, 0, 0, 0),
                   row_a: int = 0, row_b: int = 1) -> Tuple[int, int]:
    """Addresses A and B in the same bank and different rows."""
    if row_a == row_b:
        raise ConfigurationError("conflict probe rows must differ", key="classifier.rows")
    channel, dimm, rank, bank_group, bank_index = bank
    try:
        a = mapping.encode(DramLocation(channel, dimm, rank, bank_group, bank_index, row_a, 0))
        b = mapping.encode(DramLocation(channel, dimm, rank, bank_group, bank_index, row_b, 0))
        loc_a, loc_b = map_address(a, mapping, geom), map_address(b, mapping, geom)
    except InvalidInputError as e:
        raise ConfigurationError(f"cannot construct a same-bank address pair: {e.message}",
                                 key="mapping", context=e.context) from e
    if loc_a.bank_key != loc_b.bank_key or loc_a.row == loc_b.row:
        raise ConfigurationError("mapping cannot place two rows in one bank", key="mapping")
    return a, b


class SimulatedTimingSource(TimingSource):
    """
    Timing source backed by the memory-controller model.

    Every measurement starts from a fresh bank; probes are uncached and
    spaced ``probe_gap_ns`` apart. ``jitter_cycles`` adds seeded uniform
    integer noise to each measurement.
    """

    def __init__(self, policy: PagePolicy, timing: TimingConfig, mapping: Optional[AddressMapping] = None,
                 geometry: Optional[DramGeometry] = None, probe_gap_ns: float = 60.0,
                 jitter_cycles: int = 0, seed: int = 0, bank: Sequence[int] = (0, 0, 0, 0, 0),
                 rows: Tuple[int, int] = (0, 1)):
        self.policy = policy
        self.timing = timing
        self.geometry = geometry or DramGeometry()
        self.mapping = mapping or AddressMapping.default_ddr4(self.geometry)
        self.probe_gap_ns = probe_gap_ns
        self.jitter_cycles = jitter_cycles
        self.rng = np.random.default_rng(seed)
        self.address_a, self.address_b = same_bank_pair(self.mapping, self.geometry, bank, *rows)
        # Fresh-bank latency trajectories per row: a run of n+1 loads is a prefix of any longer run.
        self._trajectories: Dict[int, Tuple[BankState, List[int]]] = {}

    def _jitter(self) -> int:
        if self.jitter_cycles <= 0:
            return 0
        return int(self.rng.integers(-self.jitter_cycles, self.jitter_cycles + 1))

    def _trajectory(self, row: int, length: int) -> List[int]:
        state, latencies = self._trajectories.setdefault(row, (BankState.for_policy(self.policy), []))
        while len(latencies) < length:
            time = len(latencies) * self.probe_gap_ns
            outcome, _ = access(state, row, time, self.policy, self.timing)
            latencies.append(outcome.latency)
        return latencies

    def measure_single(self, a: int, n: int) -> float:
        if n < 1:
            raise InvalidInputError("measure_single needs n >= 1", context={"n": n})
        row = map_address(a, self.mapping, self.geometry).row
        return float(self._trajectory(row, n + 1)[n] + self._jitter())

    def measure_conflict(self, a: int, b: int) -> float:
        loc_a = map_address(a, self.mapping, self.geometry)
        loc_b = map_address(b, self.mapping, self.geometry)
        if loc_a.bank_key != loc_b.bank_key or loc_a.row == loc_b.row:
            raise ConfigurationError("conflict probes must share a bank and differ in row", key="classifier")
        state = BankState.for_policy(self.policy)
        access(state, loc_a.row, 0.0, self.policy, self.timing)
        outcome, _ = access(state, loc_b.row, self.probe_gap_ns, self.policy, self.timing)
        return float(outcome.latency + self._jitter())


class ReplayTimingSource(TimingSource):
    """Replays a recorded single curve (columns n, latency) and a conflict latency."""

    def __init__(self, curve: Dict[int, float], conflict_latency: float):
        if not curve:
            raise InvalidInputError("replayed curve is empty")
        self.curve = dict(curve)
        self.conflict_latency = float(conflict_latency)

    @classmethod
    def from_csv(cls, path: str, conflict_latency: Optional[float] = None) -> "ReplayTimingSource":
        """
        Load a curve CSV. Without ``conflict_latency`` the CSV must contain a
        row whose n column reads ``conflict``.
        """
        try:
            frame = pd.read_csv(path, dtype={"n": str})
        except (OSError, pd.errors.ParserError) as e:
            raise TimingSourceError(f"cannot read timing curve {path}: {e}") from e
        if not {"n", "latency"} <= set(frame.columns):
            raise MalformedRecordError(f"{path} needs the columns n and latency", line=1)
        curve: Dict[int, float] = {}
        for index, (n, latency) in enumerate(zip(frame["n"], frame["latency"]), start=2):
            if str(n).strip() == "conflict":
                conflict_latency = float(latency) if conflict_latency is None else conflict_latency
                continue
            try:
                curve[int(n)] = float(latency)
            except ValueError as e:
                raise MalformedRecordError(f"{path}: bad curve row", line=index) from e
        if conflict_latency is None:
            raise MalformedRecordError(f"{path} has no conflict row and none was given")
        return cls(curve, conflict_latency)

    def measure_single(self, a: int, n: int) -> float:
        if n not in self.curve:
            raise TimingSourceError(f"no recorded latency for n={n}", context={"n": n})
        return self.curve[n]

    def measure_conflict(self, a: int, b: int) -> float:
        return self.conflict_latency


_measurement_retry = retry(
    retry=retry_if_exception_type(TimingSourceError),
    stop=stop_after_attempt(3),
    reraise=True,
)


@_measurement_retry
def _measure_single(src: TimingSource, a: int, n: int) -> float:
    return src.measure_single(a, n)


@_measurement_retry
def _measure_conflict(src: TimingSource, a: int, b: int) -> float:
    return src.measure_conflict(a, b)


def run_single_curve(src: TimingSource, cfg: ClassifierConfig, a: Optional[int] = None) -> List[Tuple[int, float]]:
    """Median latency per n of the schedule."""
    a = src.probe_pair()[0] if a is None else a
    curve = []
    for n in cfg.n_schedule:
        samples = [_measure_single(src, a, n) for _ in range(cfg.repeats_per_point)]
        curve.append((n, float(np.median(samples))))
    return curve


def run_conflict(src: TimingSource, cfg: ClassifierConfig, a: Optional[int] = None,
                 b: Optional[int] = None) -> float:
    """Median row-conflict latency."""
    default_a, default_b = src.probe_pair()
    a = default_a if a is None else a
    b = default_b if b is None else b
    return float(np.median([_measure_conflict(src, a, b) for _ in range(cfg.repeats_per_point)]))


def detect_jump(series: Sequence[Tuple[int, float]], min_step: float, start: int = 0) -> Optional[int]:
    """
    Index of the first sustained level change of at least ``min_step``.

    Both plateaus must hold at least three points; the plateau medians are
    compared, and the change point itself must already sit on the new level.
    """
    if not series:
        raise InvalidInputError("detect_jump needs a non-empty series")
    latencies = [latency for _, latency in series]
    for index in range(max(start, 3), len(latencies) - 2):
        left = float(np.median(latencies[index - 3:index]))
        right = float(np.median(latencies[index:index + 3]))
        if abs(right - left) >= min_step and abs(latencies[index] - left) >= min_step / 2:
            return index
    return None


def detect_jumps(series: Sequence[Tuple[int, float]], min_step: float) -> List[int]:
    """All change points, scanning on after each detected plateau edge."""
    jumps: List[int] = []
    index = detect_jump(series, min_step)
    while index is not None:
        jumps.append(index)
        index = detect_jump(series, min_step, start=index + 3)
    return jumps


@dataclass(frozen=True)
class PolicyVerdict:
    kind: str
    single_curve: Tuple[Tuple[int, float], ...]
    conflict_latency: float
    jump_index: Optional[int] = None
    jumps: Tuple[int, ...] = ()
    reason: str = ""

    @property
    def jump_n(self) -> Optional[int]:
        return None if self.jump_index is None else self.single_curve[self.jump_index][0]

    def to_dict(self) -> Dict:
        return {
            "verdict": self.kind,
            "reason": self.reason,
            "conflict_latency": self.conflict_latency,
            "jump_index": self.jump_index,
            "jump_n": self.jump_n,
            "jumps": list(self.jumps),
            "single_curve": [[n, latency] for n, latency in self.single_curve],
        }

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.single_curve), columns=["n", "latency"])


def decide(curve: Sequence[Tuple[int, float]], conflict: float, cfg: ClassifierConfig) -> PolicyVerdict:
    """Verdict as a pure function of the evidence."""
    curve = tuple((int(n), float(latency)) for n, latency in curve)
    tolerance = cfg.equality_tolerance
    latencies = [latency for _, latency in curve]
    jumps = tuple(detect_jumps(curve, cfg.jump_detection_min_step))
    first_jump = jumps[0] if jumps else None

    if abs(latencies[-1] - conflict) <= tolerance:
        return PolicyVerdict("closed", curve, conflict, first_jump, jumps,
                             "single and conflict latencies agree")
    if max(latencies) - min(latencies) <= tolerance:
        return PolicyVerdict("open", curve, conflict, None, jumps,
                             "flat single curve distinct from conflict")
    if first_jump is not None:
        return PolicyVerdict("adaptive", curve, conflict, first_jump, jumps,
                             f"single curve jumps at n={curve[first_jump][0]}")
    return PolicyVerdict("unclassifiable", curve, conflict, None, jumps,
                         "single curve is neither flat nor a clean step")


def classify(src: TimingSource, cfg: Optional[ClassifierConfig] = None) -> PolicyVerdict:
    """Measure both scenarios and decide the page policy."""
    cfg = cfg or ClassifierConfig()
    curve = run_single_curve(src, cfg)
    conflict = run_conflict(src, cfg)
    verdict = decide(curve, conflict, cfg)
    logger.info(f"Page policy verdict: {verdict.kind} ({verdict.reason})")
    return verdict
