"""
Tests for the flip-effect taxonomy
"""

import pytest

from core.dram import AddressMapping, DramGeometry, Flip
from error_handling import InvalidInputError
from ..flip_effects import (
    MemoryRegion,
    RegionKind,
    Space,
    classify_flip_effect,
    flip_address,
    flip_effects,
)

REGIONS = [
    MemoryRegion("kernel_text", 0x0100_0000, 0x0200_0000, Space.KERNEL, RegionKind.CODE),
    MemoryRegion("page_tables", 0x0200_0000, 0x0210_0000, Space.KERNEL, RegionKind.PAGE_TABLE),
    MemoryRegion("zone_cache", 0x1000_0000, 0x1100_0000, Space.USER, RegionKind.PAGE_CACHE, persistent=True),
    MemoryRegion("heap", 0x2000_0000, 0x3000_0000, Space.USER, RegionKind.HEAP),
    MemoryRegion("libc", 0x3000_0000, 0x3010_0000, Space.USER, RegionKind.CODE),
]


@pytest.mark.parametrize("address,location,effect,scope,persistence", [
    (0x0150_0000, "kernel", "denial_of_service", "system", "temporary"),
    (0x0200_0040, "kernel", "denial_of_service", "system", "temporary"),
    (0x1000_1000, "user", "integrity", "zone_cache", "persistent"),
    (0x2abc_0000, "user", "integrity", "heap", "temporary"),
    (0x3000_0010, "user", "denial_of_service", "process", "temporary"),
])
def test_classification(address, location, effect, scope, persistence):
    result = classify_flip_effect(address, REGIONS)
    assert result["location"] == location
    assert result["effect"] == effect
    assert result["scope"] == scope
    assert result["persistence"] == persistence


def test_unmapped_address():
    result = classify_flip_effect(0x0500_0000, REGIONS)
    assert result["location"] == "unmapped"
    assert result["effect"] == "none"


def test_region_end_is_exclusive():
    assert classify_flip_effect(0x0200_0000, REGIONS)["region"] == "page_tables"


def test_overlapping_regions_rejected():
    with pytest.raises(InvalidInputError):
        classify_flip_effect(0, [MemoryRegion("a", 0, 100), MemoryRegion("b", 50, 150)])


def test_flip_address_decodes_back():
    geometry = DramGeometry()
    mapping = AddressMapping.default_ddr4(geometry)
    flip = Flip(window_id=0, bank=(0, 0, 1, 2, 3), row=1000, cell=8 * 77 + 3, distance=1)
    location = mapping.decode(flip_address(flip, mapping))
    assert location.bank_key == flip.bank
    assert location.row == 1000
    assert location.column == 77


def test_flip_effects_annotates_each_flip():
    mapping = AddressMapping.default_ddr4(DramGeometry())
    flips = [Flip(0, (0, 0, 0, 0, 0), row, 5, 1) for row in (10, 11)]
    effects = flip_effects(flips, mapping, REGIONS)
    assert len(effects) == 2
    assert all(e["bit"] == 5 for e in effects)
    assert {e["window_id"] for e in effects} == {0}
