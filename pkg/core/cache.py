"""
Last-level cache model for HammerLab.

Sliced set-associative cache with true LRU replacement, way restriction
(cache allocation), line invalidation and uncached address ranges.
"""

import bisect
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from error_handling import InvalidInputError

logger = logging.getLogger("HAMMERLAB.Cache")

# Parity sets above the set-index bits of the default 2048-set, 64 B-line layout.
DEFAULT_SLICE_BITS = (
    (17, 20, 23, 26, 29, 32),
    (18, 21, 24, 27, 30, 33),
    (19, 22, 25, 28, 31),
)


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and not value & (value - 1)


@dataclass(frozen=True)
class CacheConfig:
    slices: int = 8
    sets_per_slice: int = 2048
    ways: int = 16
    cat_ways: int = 16
    line_size: int = 64
    slice_bits: Tuple[Tuple[int, ...], ...] = DEFAULT_SLICE_BITS
    replacement: str = "lru"

    def __post_init__(self):
        if self.ways < 1 or not 1 <= self.cat_ways <= self.ways:
            raise InvalidInputError("cache.cat_ways must lie in [1, ways]",
                                    context={"cat_ways": self.cat_ways, "ways": self.ways})
        for name in ("slices", "sets_per_slice", "line_size"):
            if not _is_power_of_two(getattr(self, name)):
                raise InvalidInputError(f"cache.{name} must be a power of two", context={"value": getattr(self, name)})
        if (1 << len(self.slice_bits)) != self.slices:
            raise InvalidInputError("cache.slice_bits needs one bit set per slice-index bit",
                                    context={"slices": self.slices, "slice_bits": len(self.slice_bits)})
        if self.replacement != "lru":
            raise InvalidInputError("only LRU replacement is modelled", context={"replacement": self.replacement})

    @property
    def offset_bits(self) -> int:
        return self.line_size.bit_length() - 1


@dataclass(frozen=True)
class UncachedRegions:
    """Disjoint half-open address ranges that bypass the cache."""
    ranges: Tuple[Tuple[int, int], ...] = ()
    _starts: Tuple[int, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        ordered = tuple(sorted((int(start), int(end)) for start, end in self.ranges))
        for start, end in ordered:
            if start < 0 or end <= start:
                raise InvalidInputError("uncached range needs 0 <= start < end", context={"range": [start, end]})
        for (_, prev_end), (start, _) in zip(ordered, ordered[1:]):
            if start < prev_end:
                raise InvalidInputError("uncached ranges must be disjoint", context={"start": start})
        object.__setattr__(self, "ranges", ordered)
        object.__setattr__(self, "_starts", tuple(start for start, _ in ordered))

    def contains(self, addr: int) -> bool:
        index = bisect.bisect_right(self._starts, addr) - 1
        return index >= 0 and addr < self.ranges[index][1]


@dataclass(frozen=True)
class CacheResult:
    hit: bool
    evicted: Optional[int] = None

    @property
    def outcome(self) -> str:
        return "hit" if self.hit else "miss"


@dataclass(frozen=True)
class CacheTraceRecord:
    addr: int
    slice: int
    set: int
    outcome: str


class CacheState:
    """Per-(slice, set) residency lists, most recently used first."""

    def __init__(self, config: Optional[CacheConfig] = None, uncached: Optional[UncachedRegions] = None):
        self.config = config or CacheConfig()
        self.uncached = uncached or UncachedRegions()
        self.sets: Dict[Tuple[int, int], List[int]] = {}
        self._slice_masks = tuple(sum(1 << bit for bit in bits) for bits in self.config.slice_bits)

    def line_of(self, addr: int) -> int:
        return addr >> self.config.offset_bits

    def slice_of(self, addr: int) -> int:
        index = 0
        for position, mask in enumerate(self._slice_masks):
            index |= (bin(addr & mask).count("1") & 1) << position
        return index

    def set_of(self, addr: int) -> int:
        return self.line_of(addr) & (self.config.sets_per_slice - 1)

    def locate(self, addr: int) -> Tuple[int, int, int]:
        """(line tag, slice, set) of an address."""
        return self.line_of(addr), self.slice_of(addr), self.set_of(addr)

    def resident(self, addr: int) -> bool:
        tag, slice_index, set_index = self.locate(addr)
        return tag in self.sets.get((slice_index, set_index), ())

    def snapshot(self) -> Tuple:
        return tuple(sorted((key, tuple(lines)) for key, lines in self.sets.items() if lines))

    def copy(self) -> "CacheState":
        clone = CacheState(self.config, self.uncached)
        clone.sets = {key: list(lines) for key, lines in self.sets.items()}
        return clone


def cache_access(state: CacheState, addr: int) -> CacheResult:
    """Look up ``addr``; a miss inserts at MRU and evicts LRU when the set is full."""
    if state.uncached.contains(addr):
        return CacheResult(hit=False)
    tag, slice_index, set_index = state.locate(addr)
    lines = state.sets.setdefault((slice_index, set_index), [])
    if tag in lines:
        lines.remove(tag)
        lines.insert(0, tag)
        return CacheResult(hit=True)
    evicted = lines.pop() if len(lines) >= state.config.cat_ways else None
    lines.insert(0, tag)
    return CacheResult(hit=False, evicted=evicted)


def flush(state: CacheState, addr: int) -> CacheState:
    """Invalidate the line holding ``addr``; no-op when it is not resident."""
    tag, slice_index, set_index = state.locate(addr)
    lines = state.sets.get((slice_index, set_index))
    if lines and tag in lines:
        lines.remove(tag)
    return state


def trace_accesses(state: CacheState, addresses: Sequence[int]) -> List[CacheTraceRecord]:
    """Run ``addresses`` through the cache and record every outcome."""
    records = []
    for addr in addresses:
        _, slice_index, set_index = state.locate(addr)
        records.append(CacheTraceRecord(addr, slice_index, set_index, cache_access(state, addr).outcome))
    return records


def cache_trace_frame(records: Sequence[CacheTraceRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.addr, r.slice, r.set, r.outcome) for r in records],
        columns=["addr", "slice", "set", "outcome"],
    )
