"""
Attack model for HammerLab.

Turns network-attack parameters into per-packet memory-access traces and
answers the feasibility arithmetic: packets per second, hammering accesses
per second and per refresh interval, compared against published flip
thresholds.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from error_handling import InvalidInputError, UnknownFunctionError

from .dram import AddressMapping, DramGeometry, DramLocation, map_address

logger = logging.getLogger("HAMMERLAB.Attack")

Number = Union[int, float]

DEFAULT_THRESHOLDS = (43_000, 110_000, 139_000)
MIN_FRAME_BYTES = 64
# Preamble, start-of-frame delimiter and inter-frame gap.
ETHERNET_WIRE_OVERHEAD = 20

# Receive-path call counts per UDP packet.
UDP_FUNCCOUNT = (
    ("__udp4_lib_lookup", 2),
    ("__udp4_lib_rcv", 1),
    ("udp4_gro_receive", 1),
    ("udp4_lib_lookup_skb", 1),
    ("udp_error", 1),
    ("udp_get_timeouts", 1),
    ("udp_gro_receive", 1),
    ("udp_packet", 1),
    ("udp_pkt_to_tuple", 1),
    ("udp_rcv", 1),
    ("udp_v4_early_demux", 1),
)
NF_HOOK_SLOW = (("nf_hook_slow", 6),)


class PrefixConvention(str, Enum):
    BINARY = "binary"
    DECIMAL = "decimal"


class BypassMode(str, Enum):
    FLUSH_DRIVER = "flush_driver"
    UNCACHED = "uncached"
    CAT_EVICTION = "cat_eviction"


class Annotation(str, Enum):
    FLUSHED = "flushed"
    UNCACHED = "uncached"
    CACHEABLE = "cacheable"


class PatternKind(str, Enum):
    ONE_LOCATION = "one_location"
    SINGLE_SIDED = "single_sided"
    DOUBLE_SIDED = "double_sided"


class Arrival(str, Enum):
    UNIFORM = "uniform"
    POISSON = "poisson"


class BackgroundMode(str, Enum):
    RANDOM = "random"
    HAMMERED_BANK = "hammered_bank"


_PREFIXES = {"": 0, "k": 1, "m": 2, "g": 3, "t": 4}
_BANDWIDTH_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*([kKmMgGtT]?)(?:bit|bps|b)?(?:/s)?\s*$")


def parse_bandwidth(value: Union[str, Number], prefix_convention: str = "binary") -> Fraction:
    """
    Bandwidth in bits per second.

    Strings like ``"500Mbit"``, ``"1 Gbit/s"`` or ``"100Mbps"`` use the
    prefix convention: binary reads M as 2**20, decimal as 10**6.
    """
    convention = PrefixConvention(prefix_convention)
    if isinstance(value, (int, float)):
        if value < 0:
            raise InvalidInputError("bandwidth must be >= 0", context={"bandwidth": value})
        return Fraction(str(value))
    match = _BANDWIDTH_RE.match(str(value))
    if not match:
        raise InvalidInputError(f"cannot parse bandwidth '{value}'", context={"bandwidth": value})
    magnitude, prefix = match.groups()
    base = 1024 if convention is PrefixConvention.BINARY else 1000
    return Fraction(magnitude) * base ** _PREFIXES[prefix.lower()]


def _exact(value: Fraction) -> Number:
    return int(value) if value.denominator == 1 else float(value)


def packet_rate(bandwidth: Union[str, Number, Fraction], frame_bytes: int = 64,
                prefix_convention: str = "binary", wire_overhead: int = 0) -> Number:
    """Packets per second; exact integer when the division is."""
    if frame_bytes < MIN_FRAME_BYTES:
        raise InvalidInputError(f"frame_bytes must be >= {MIN_FRAME_BYTES}", context={"frame_bytes": frame_bytes})
    bits = bandwidth if isinstance(bandwidth, Fraction) else parse_bandwidth(bandwidth, prefix_convention)
    return _exact(bits / ((frame_bytes + wire_overhead) * 8))


@dataclass(frozen=True)
class ProfileFunction:
    label: str
    addresses: Tuple[int, ...]
    calls_per_packet: int = 1
    annotation: Annotation = Annotation.CACHEABLE

    def __post_init__(self):
        if self.calls_per_packet < 1:
            raise InvalidInputError(f"{self.label}: calls_per_packet must be >= 1")
        if not self.addresses:
            raise InvalidInputError(f"{self.label}: address set must not be empty")
        object.__setattr__(self, "annotation", Annotation(self.annotation))


@dataclass(frozen=True)
class PacketProfile:
    """Per-packet memory accesses: function label, addresses and call count."""
    functions: Tuple[ProfileFunction, ...]
    name: str = "custom"

    def function(self, label: str) -> ProfileFunction:
        for entry in self.functions:
            if entry.label == label:
                return entry
        raise UnknownFunctionError(
            f"function '{label}' is not part of profile '{self.name}'",
            context={"function": label, "known": [f.label for f in self.functions]},
        )

    def calls_per_packet(self, label: str) -> int:
        return self.function(label).calls_per_packet

    @property
    def accesses_per_packet(self) -> int:
        return sum(f.calls_per_packet * len(f.addresses) for f in self.functions)

    @property
    def addresses(self) -> List[int]:
        return sorted({addr for f in self.functions for addr in f.addresses})

    def with_addresses(self, label: str, addresses: Sequence[int],
                       annotation: Optional[Annotation] = None) -> "PacketProfile":
        """Copy with ``label``'s address set (and optionally annotation) replaced."""
        target = self.function(label)
        updated = replace(target, addresses=tuple(addresses), annotation=annotation or target.annotation)
        return replace(self, functions=tuple(updated if f is target else f for f in self.functions))


@dataclass(frozen=True)
class KernelLayout:
    """Synthetic placement of kernel functions in physical memory."""
    base: int = 0x2_4000_0000
    stride: int = 0x1040

    def address_of(self, index: int) -> int:
        return self.base + index * self.stride


def annotation_for(mode: Union[BypassMode, str]) -> Annotation:
    return {
        BypassMode.FLUSH_DRIVER: Annotation.FLUSHED,
        BypassMode.UNCACHED: Annotation.UNCACHED,
        BypassMode.CAT_EVICTION: Annotation.CACHEABLE,
    }[BypassMode(mode)]


def _profile_from_counts(name: str, counts: Sequence[Tuple[str, int]], layout: KernelLayout,
                         hammered: Optional[str], annotation: Annotation) -> PacketProfile:
    functions = tuple(
        ProfileFunction(
            label=label,
            addresses=(layout.address_of(index),),
            calls_per_packet=calls,
            annotation=annotation if label == hammered else Annotation.CACHEABLE,
        )
        for index, (label, calls) in enumerate(counts)
    )
    return PacketProfile(functions, name)


def udp_funccount_profile(layout: Optional[KernelLayout] = None, hammered: Optional[str] = "__udp4_lib_lookup",
                          annotation: Annotation = Annotation.FLUSHED) -> PacketProfile:
    """UDP receive path: eleven functions, the socket lookup called twice."""
    return _profile_from_counts("udp_funccount", UDP_FUNCCOUNT, layout or KernelLayout(), hammered, annotation)


def nf_hook_slow_profile(layout: Optional[KernelLayout] = None,
                         annotation: Annotation = Annotation.FLUSHED) -> PacketProfile:
    """Netfilter hook dispatch, called six times per packet."""
    return _profile_from_counts("nf_hook_slow", NF_HOOK_SLOW, layout or KernelLayout(), "nf_hook_slow", annotation)


BUILTIN_PROFILES = {
    "udp_funccount": udp_funccount_profile,
    "nf_hook_slow": nf_hook_slow_profile,
}


@dataclass(frozen=True)
class AccessRate:
    per_second: Number
    per_interval: Number


def access_rate(pkt_rate: Number, profile: PacketProfile, hammered_function: str,
                window_ns: float = 64_000_000.0) -> AccessRate:
    """Hammering accesses per second and per refresh interval."""
    calls = profile.calls_per_packet(hammered_function)
    per_second = Fraction(str(pkt_rate)) * calls
    per_interval = per_second * Fraction(str(window_ns)) / 1_000_000_000
    return AccessRate(_exact(per_second), _exact(per_interval))


@dataclass(frozen=True)
class FeasibilityVerdict:
    accesses_per_refresh_interval: Number
    thresholds: Tuple[int, ...]
    verdicts: Dict[int, bool]
    packets_per_s: Optional[Number] = None
    accesses_per_s: Optional[Number] = None

    @property
    def feasible_everywhere(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> Dict:
        return {
            "packets_per_s": self.packets_per_s,
            "accesses_per_s": self.accesses_per_s,
            "accesses_per_refresh_interval": self.accesses_per_refresh_interval,
            "thresholds": {str(t): {"threshold": t, "feasible": self.verdicts[t]} for t in self.thresholds},
        }


def feasibility(per_interval: Number, thresholds: Iterable[int] = DEFAULT_THRESHOLDS) -> FeasibilityVerdict:
    thresholds = tuple(thresholds)
    for threshold in thresholds:
        if threshold <= 0:
            raise InvalidInputError("thresholds must be positive", context={"threshold": threshold})
    return FeasibilityVerdict(per_interval, thresholds, {t: per_interval >= t for t in thresholds})


def assess_rates(bandwidth: Union[str, Number], frame_bytes: int, calls_per_packet: int,
                 prefix_convention: str = "binary", window_ns: float = 64_000_000.0,
                 thresholds: Iterable[int] = DEFAULT_THRESHOLDS, wire_overhead: int = 0) -> FeasibilityVerdict:
    """Packet rate, access rate and feasibility in one step."""
    pkt_rate = packet_rate(bandwidth, frame_bytes, prefix_convention, wire_overhead)
    profile = PacketProfile((ProfileFunction("hammered", (0,), calls_per_packet),), "rates")
    rates = access_rate(pkt_rate, profile, "hammered", window_ns)
    verdict = feasibility(rates.per_interval, thresholds)
    return replace(verdict, packets_per_s=pkt_rate, accesses_per_s=rates.per_second)


@dataclass(frozen=True)
class DutyCycle:
    """Burst mode: hammer for ``on_ms`` out of every ``period_ms``."""
    on_ms: float
    period_ms: float

    def __post_init__(self):
        if not 0 < self.on_ms <= self.period_ms:
            raise InvalidInputError("duty cycle needs 0 < on_ms <= period_ms")

    def active(self, time_ns: float) -> bool:
        return (time_ns % (self.period_ms * 1e6)) < self.on_ms * 1e6


@dataclass(frozen=True)
class AttackConfig:
    bandwidth_bps: Fraction = field(default_factory=lambda: parse_bandwidth("500Mbit"))
    frame_bytes: int = 64
    duration_s: float = 0.064
    bypass_mode: BypassMode = BypassMode.FLUSH_DRIVER
    background_load: float = 0.0
    background_mode: BackgroundMode = BackgroundMode.RANDOM
    arrival: Arrival = Arrival.UNIFORM
    duty_cycle: Optional[DutyCycle] = None
    wire_overhead: int = 0
    hammered_function: str = "nf_hook_slow"
    thresholds: Tuple[int, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if self.frame_bytes < MIN_FRAME_BYTES:
            raise InvalidInputError(f"attack.frame_bytes must be >= {MIN_FRAME_BYTES}")
        if self.bandwidth_bps <= 0:
            raise InvalidInputError("attack.bandwidth must be > 0")
        if self.duration_s <= 0 or self.background_load < 0:
            raise InvalidInputError("attack.duration_s must be > 0 and background_load >= 0")
        for name, kind in (("bypass_mode", BypassMode), ("background_mode", BackgroundMode), ("arrival", Arrival)):
            object.__setattr__(self, name, kind(getattr(self, name)))

    @property
    def packet_rate(self) -> Number:
        return packet_rate(self.bandwidth_bps, self.frame_bytes, wire_overhead=self.wire_overhead)

    @property
    def packet_interval_ns(self) -> float:
        return float(Fraction(1_000_000_000) / Fraction(str(self.packet_rate)))


@dataclass(frozen=True)
class TraceOp:
    kind: str
    addr: int
    cached: bool = True

    @property
    def is_access(self) -> bool:
        return self.kind == "access"


def build_trace(profile: PacketProfile, cfg: AttackConfig, packet_index: int = 0) -> List[TraceOp]:
    """
    Memory operations of one packet, in profile order.

    The sequence does not depend on ``packet_index``. Bypass applies to
    addresses annotated flushed or uncached; cacheable ones stay plain.
    """
    if packet_index < 0:
        raise InvalidInputError("packet_index must be >= 0")
    trace: List[TraceOp] = []
    for entry in profile.functions:
        bypass = entry.annotation is not Annotation.CACHEABLE
        for _ in range(entry.calls_per_packet):
            for addr in entry.addresses:
                if bypass and cfg.bypass_mode is BypassMode.FLUSH_DRIVER:
                    trace.append(TraceOp("invalidate", addr))
                    trace.append(TraceOp("access", addr))
                elif bypass and cfg.bypass_mode is BypassMode.UNCACHED:
                    trace.append(TraceOp("access", addr, cached=False))
                else:
                    trace.append(TraceOp("access", addr))
    return trace


def build_traces(profile: PacketProfile, cfg: AttackConfig, packets: int) -> List[TraceOp]:
    trace: List[TraceOp] = []
    for index in range(packets):
        trace.extend(build_trace(profile, cfg, index))
    return trace


def one_location(addr: int) -> List[int]:
    """A single hammered address."""
    return [addr]


def single_sided(k: int, mapping: AddressMapping, geom: DramGeometry, seed: int = 0,
                 line_size: int = 64) -> List[int]:
    """``k`` seeded random line-aligned addresses inside the mapped range."""
    if k < 1:
        raise InvalidInputError("single_sided needs k >= 1", context={"k": k})
    rng = np.random.default_rng(seed)
    lines = 1 << (mapping.address_bits - (line_size.bit_length() - 1))
    if k > lines:
        raise InvalidInputError("single_sided asks for more addresses than cache lines exist", context={"k": k})
    chosen = rng.choice(lines, size=k, replace=False)
    addresses = [int(line) * line_size for line in chosen]
    for addr in addresses:
        map_address(addr, mapping, geom)
    return addresses


def double_sided(bank: Sequence[int], victim_row: int, mapping: AddressMapping,
                 geom: DramGeometry) -> List[int]:
    """Aggressor addresses in the rows sandwiching ``victim_row``."""
    if not 1 <= victim_row < geom.rows_per_bank - 1:
        raise InvalidInputError("double_sided victim needs a row above and below",
                                context={"victim_row": victim_row})
    channel, dimm, rank, bank_group, bank_index = bank
    return [
        mapping.encode(DramLocation(channel, dimm, rank, bank_group, bank_index, row, 0))
        for row in (victim_row - 1, victim_row + 1)
    ]
