"""
HammerLab - Exploit Module
Exploitability of single-bit flips in DNS names, OCSP indexes and RSA key stores.
"""

from .candidate import FlipCandidate, bit_distance
from .dns_bitsquat import ZoneEntry, enumerate_dns_bitsquats, parse_zone, scan_zone
from .flip_effects import MemoryRegion, RegionKind, Space, classify_flip_effect, flip_effects
from .key_store import KeyEntry, analyze_changed_keys, diff_key_store, parse_listing, serialize_listing
from .ocsp import CertStatus, OcspRecord, OcspScan, parse_index, scan_ocsp, serialize_index, synthetic_index
from .rsa_keys import (
    KeyFlipResult,
    RecordLayout,
    RsaPublicKey,
    analyze_key_flip,
    analyze_modulus,
    factorize,
    generate_toy_key,
    rsa_modulus_hit_probability,
)

__all__ = [
    'CertStatus',
    'FlipCandidate',
    'KeyEntry',
    'KeyFlipResult',
    'MemoryRegion',
    'OcspRecord',
    'OcspScan',
    'RecordLayout',
    'RegionKind',
    'RsaPublicKey',
    'Space',
    'ZoneEntry',
    'analyze_changed_keys',
    'analyze_key_flip',
    'analyze_modulus',
    'bit_distance',
    'classify_flip_effect',
    'diff_key_store',
    'enumerate_dns_bitsquats',
    'factorize',
    'flip_effects',
    'generate_toy_key',
    'parse_index',
    'parse_listing',
    'parse_zone',
    'rsa_modulus_hit_probability',
    'scan_ocsp',
    'scan_zone',
    'serialize_index',
    'serialize_listing',
    'synthetic_index',
]
