"""
Memory controller model for HammerLab.

Row-buffer state per bank, the closed / fixed-open / adaptive page policies
and the DRAM-cycle to CPU-cycle latency model.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import pandas as pd

from error_handling import InvalidInputError, OrderingError, PolicyMisuseError

logger = logging.getLogger("HAMMERLAB.MemCtrl")


class AccessClass(str, Enum):
    ROW_HIT = "row_hit"
    PAGE_EMPTY = "page_empty"
    ROW_CONFLICT = "row_conflict"


class AdaptiveEvent(str, Enum):
    CONFLICT = "conflict"
    EMPTY_COULD_HAVE_HIT = "empty_could_have_hit"
    NONE = "none"


class PolicyKind(str, Enum):
    CLOSED = "closed"
    FIXED_OPEN = "fixed_open"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class TimingConfig:
    """DRAM timings in DRAM cycles, the base hit latency in CPU cycles."""
    t_rp: int = 14
    t_rcd: int = 14
    base_hit_latency: int = 200
    dram_transfer_rate: float = 2133.0
    double_clocked: bool = True
    cpu_freq: float = 4.0e9

    def __post_init__(self):
        if self.t_rp < 0 or self.t_rcd < 0:
            raise InvalidInputError("timing.t_rp and timing.t_rcd must be >= 0",
                                    context={"t_rp": self.t_rp, "t_rcd": self.t_rcd})
        for name in ("base_hit_latency", "dram_transfer_rate", "cpu_freq"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"timing.{name} must be positive", context={"value": getattr(self, name)})

    @property
    def dram_clock_hz(self) -> Fraction:
        """Effective DRAM clock; double-clocked parts run at half the transfer rate."""
        clock = Fraction(str(self.dram_transfer_rate)) * 1_000_000
        return clock / 2 if self.double_clocked else clock


def converted_cycles(dram_cycles: int, timing: TimingConfig) -> int:
    """DRAM cycles to CPU cycles, rounded up."""
    if dram_cycles == 0:
        return 0
    seconds = Fraction(dram_cycles) / timing.dram_clock_hz
    return math.ceil(seconds * Fraction(str(timing.cpu_freq)))


@lru_cache(maxsize=256)
def latency_cycles(cls: AccessClass, timing: TimingConfig) -> int:
    """Latency in CPU cycles of an access class under ``timing``."""
    cls = AccessClass(cls)
    if cls is AccessClass.ROW_HIT:
        extra = 0
    elif cls is AccessClass.PAGE_EMPTY:
        extra = timing.t_rp
    else:
        extra = timing.t_rp + timing.t_rcd
    return timing.base_hit_latency + converted_cycles(extra, timing)


@dataclass(frozen=True)
class AdaptiveParams:
    initial_timeout_ns: float = 0.0
    timeout_min_ns: float = 0.0
    timeout_max_ns: float = 10_000.0
    step_ns: float = 25.0
    inc_threshold: int = 8
    dec_threshold: int = -8
    check_period: int = 64
    saturation: int = 64

    def __post_init__(self):
        if not self.timeout_min_ns <= self.initial_timeout_ns <= self.timeout_max_ns:
            raise InvalidInputError("adaptive timeouts need min <= initial <= max")
        if self.step_ns <= 0 or self.check_period < 1 or self.saturation < 1:
            raise InvalidInputError("adaptive step, check_period and saturation must be positive")
        if self.dec_threshold > self.inc_threshold:
            raise InvalidInputError("adaptive dec_threshold must not exceed inc_threshold")


@dataclass(frozen=True)
class PagePolicy:
    """Page policy; ``timeout_ns`` applies to fixed_open only."""
    kind: PolicyKind = PolicyKind.CLOSED
    timeout_ns: float = math.inf
    adaptive: AdaptiveParams = field(default_factory=AdaptiveParams)

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.timeout_ns < 0:
            raise InvalidInputError("policy timeout must be >= 0", context={"timeout_ns": self.timeout_ns})

    @classmethod
    def closed(cls) -> "PagePolicy":
        return cls(PolicyKind.CLOSED)

    @classmethod
    def fixed_open(cls, timeout_ns: float = math.inf) -> "PagePolicy":
        return cls(PolicyKind.FIXED_OPEN, timeout_ns=timeout_ns)

    @classmethod
    def adaptive_policy(cls, **params) -> "PagePolicy":
        return cls(PolicyKind.ADAPTIVE, adaptive=AdaptiveParams(**params))


@dataclass
class BankState:
    """
    Row-buffer state of one bank.

    ``open_row`` of None means the bank is pre-charged. The timeout counter
    is derived from ``last_access`` and saturates at the timeout register.
    """
    open_row: Optional[int] = None
    opened_at: float = 0.0
    last_access: float = -math.inf
    last_closed_row: Optional[int] = None
    timeout_register: float = 0.0
    mistake_counter: int = 0
    accesses_since_check: int = 0

    @classmethod
    def for_policy(cls, policy: PagePolicy) -> "BankState":
        if policy.kind is PolicyKind.ADAPTIVE:
            return cls(timeout_register=policy.adaptive.initial_timeout_ns)
        if policy.kind is PolicyKind.FIXED_OPEN:
            return cls(timeout_register=policy.timeout_ns)
        return cls()

    def timeout_counter(self, now: float) -> float:
        if self.open_row is None:
            return 0.0
        return min(now - self.last_access, self.timeout_register)

    def copy(self) -> "BankState":
        return replace(self)

    def shift(self, delta_ns: float) -> None:
        self.opened_at += delta_ns
        self.last_access += delta_ns

    def state_key(self, reference_ns: float, precision: int = 3) -> Tuple:
        """Hashable state with times relative to ``reference_ns``."""
        return (
            self.open_row,
            round(self.opened_at - reference_ns, precision) if self.open_row is not None else None,
            round(self.last_access - reference_ns, precision) if math.isfinite(self.last_access) else None,
            self.last_closed_row,
            self.timeout_register,
            self.mistake_counter,
            self.accesses_since_check,
        )


@dataclass(frozen=True)
class AccessOutcome:
    cls: AccessClass
    latency: int
    activated: bool = False
    event: AdaptiveEvent = AdaptiveEvent.NONE


def _timeout_for(state: BankState, policy: PagePolicy) -> float:
    if policy.kind is PolicyKind.FIXED_OPEN:
        return policy.timeout_ns
    return state.timeout_register


def _expire(state: BankState, time: float, policy: PagePolicy) -> None:
    """Apply a policy-driven close that happened before ``time``."""
    if state.open_row is None or policy.kind is PolicyKind.CLOSED:
        return
    if time - state.last_access >= _timeout_for(state, policy):
        state.last_closed_row = state.open_row
        state.open_row = None


def adaptive_update(bank_state: BankState, event: AdaptiveEvent, policy: PagePolicy) -> BankState:
    """Adjust the mistake counter and, every check period, the timeout register."""
    if policy.kind is not PolicyKind.ADAPTIVE:
        raise PolicyMisuseError(
            f"adaptive_update needs an adaptive policy, got {policy.kind.value}",
            context={"policy": policy.kind.value},
        )
    params = policy.adaptive
    event = AdaptiveEvent(event)
    if event is AdaptiveEvent.CONFLICT:
        bank_state.mistake_counter = max(bank_state.mistake_counter - 1, -params.saturation)
    elif event is AdaptiveEvent.EMPTY_COULD_HAVE_HIT:
        bank_state.mistake_counter = min(bank_state.mistake_counter + 1, params.saturation)

    bank_state.accesses_since_check += 1
    if bank_state.accesses_since_check >= params.check_period:
        if bank_state.mistake_counter > params.inc_threshold:
            bank_state.timeout_register = min(bank_state.timeout_register + params.step_ns, params.timeout_max_ns)
        elif bank_state.mistake_counter < params.dec_threshold:
            bank_state.timeout_register = max(bank_state.timeout_register - params.step_ns, params.timeout_min_ns)
        bank_state.mistake_counter = 0
        bank_state.accesses_since_check = 0
    return bank_state


def access(bank_state: BankState, row: int, time: float, policy: PagePolicy,
           timing: TimingConfig) -> Tuple[AccessOutcome, BankState]:
    """Serve one access to ``row`` at ``time`` (ns); mutates and returns the bank state."""
    if time < bank_state.last_access:
        raise OrderingError(
            f"access at {time} ns precedes the previous bank access at {bank_state.last_access} ns",
            context={"time_ns": time, "last_access_ns": bank_state.last_access},
        )
    _expire(bank_state, time, policy)

    if bank_state.open_row is None:
        cls = AccessClass.PAGE_EMPTY
        event = AdaptiveEvent.EMPTY_COULD_HAVE_HIT if row == bank_state.last_closed_row else AdaptiveEvent.NONE
    elif bank_state.open_row == row:
        cls = AccessClass.ROW_HIT
        event = AdaptiveEvent.NONE
    else:
        cls = AccessClass.ROW_CONFLICT
        event = AdaptiveEvent.CONFLICT
        bank_state.last_closed_row = bank_state.open_row

    activated = cls is not AccessClass.ROW_HIT
    if activated:
        bank_state.open_row = row
        bank_state.opened_at = time
    bank_state.last_access = time

    if policy.kind is PolicyKind.CLOSED:
        bank_state.last_closed_row = row
        bank_state.open_row = None
    elif policy.kind is PolicyKind.ADAPTIVE:
        adaptive_update(bank_state, event, policy)

    return AccessOutcome(cls, latency_cycles(cls, timing), activated, event), bank_state


@dataclass(frozen=True)
class AccessRecord:
    time_ns: float
    bank: int
    row: int
    cls: AccessClass
    latency: int


def access_trace_frame(records: List[AccessRecord]) -> pd.DataFrame:
    """Access-class trace as a frame with columns time, bank, row, class, latency."""
    return pd.DataFrame(
        {
            "time": [r.time_ns for r in records],
            "bank": [r.bank for r in records],
            "row": [r.row for r in records],
            "class": [r.cls.value for r in records],
            "latency": [r.latency for r in records],
        },
        columns=["time", "bank", "row", "class", "latency"],
    )


def class_histogram(records: List[AccessRecord]) -> Dict[str, int]:
    histogram = {cls.value: 0 for cls in AccessClass}
    for record in records:
        histogram[record.cls.value] += 1
    return histogram
