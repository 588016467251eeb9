"""
Flip-effect taxonomy for HammerLab.

Maps a flipped physical bit onto the memory region that holds it and
classifies the outcome: where it lands (user or kernel), what it does
(denial of service or silent integrity loss) and whether it survives a
reboot (the region is written back to storage).
"""

import bisect
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence

from core.dram import BANK_COORDINATES, AddressMapping, DramLocation, Flip
from error_handling import InvalidInputError

logger = logging.getLogger("HAMMERLAB.Exploit.Effects")


class Space(str, Enum):
    USER = "user"
    KERNEL = "kernel"


class RegionKind(str, Enum):
    CODE = "code"
    PAGE_TABLE = "page_table"
    STACK = "stack"
    HEAP = "heap"
    DATA = "data"
    PAGE_CACHE = "page_cache"


class Effect(str, Enum):
    DENIAL_OF_SERVICE = "denial_of_service"
    INTEGRITY = "integrity"
    NONE = "none"


# control data: a flip there crashes the owner
CRASHING_KINDS = frozenset({RegionKind.CODE, RegionKind.PAGE_TABLE, RegionKind.STACK})


@dataclass(frozen=True)
class MemoryRegion:
    """Physical range [start, end) with its owner and content."""
    name: str
    start: int
    end: int
    space: Space = Space.USER
    kind: RegionKind = RegionKind.DATA
    persistent: bool = False

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise InvalidInputError(f"region '{self.name}' needs 0 <= start < end")


class RegionMap:
    """Sorted, non-overlapping regions with address lookup."""

    def __init__(self, regions: Iterable[MemoryRegion]):
        self.regions = sorted(regions, key=lambda r: r.start)
        for a, b in zip(self.regions, self.regions[1:]):
            if b.start < a.end:
                raise InvalidInputError(f"regions '{a.name}' and '{b.name}' overlap")
        self._starts = [r.start for r in self.regions]

    def find(self, address: int) -> Optional[MemoryRegion]:
        i = bisect.bisect_right(self._starts, address) - 1
        if i >= 0 and address < self.regions[i].end:
            return self.regions[i]
        return None


def classify_flip_effect(address: int, regions: Sequence[MemoryRegion]) -> Dict[str, Any]:
    """
    Classify a flip at a physical address.

    Flips in code, page tables or stacks crash their owner; flips in
    data silently corrupt it. A kernel crash takes the whole host down.
    Persistence follows the region: page-cache pages written back to disk
    keep the flip after a reboot.
    """
    region_map = regions if isinstance(regions, RegionMap) else RegionMap(regions)
    region = region_map.find(address)
    if region is None:
        return {"address": address, "region": None, "location": "unmapped",
                "effect": Effect.NONE.value, "scope": None, "persistence": None}
    effect = Effect.DENIAL_OF_SERVICE if region.kind in CRASHING_KINDS else Effect.INTEGRITY
    if effect is Effect.DENIAL_OF_SERVICE:
        scope = "system" if region.space is Space.KERNEL else "process"
    else:
        scope = region.name
    return {
        "address": address,
        "region": region.name,
        "location": region.space.value,
        "effect": effect.value,
        "scope": scope,
        "persistence": "persistent" if region.persistent else "temporary",
    }


def flip_address(flip: Flip, mapping: AddressMapping) -> int:
    """Physical address of the byte holding a flipped cell."""
    bank = dict(zip(BANK_COORDINATES, flip.bank))
    location = DramLocation(row=flip.row, column=flip.cell // 8, **bank)
    return mapping.encode(location)


def flip_effects(flips: Iterable[Flip], mapping: AddressMapping,
                 regions: Sequence[MemoryRegion]) -> List[Dict[str, Any]]:
    region_map = RegionMap(regions)
    effects = []
    for flip in flips:
        address = flip_address(flip, mapping)
        effects.append({**classify_flip_effect(address, region_map), "bit": flip.cell % 8,
                        "window_id": flip.window_id})
    logger.debug(f"classified {len(effects)} flip effects")
    return effects
