"""
OCSP index scanning for HammerLab.

The responder keeps certificate status in a line-oriented index, one
record per line, tab-separated, status character first::

    R<TAB>expiry<TAB>revocation<TAB>serial<TAB>filename<TAB>subject\\n

'R' (0x52) and 'V' (0x56) differ in bit 2 only, so one flip turns a
revoked certificate back into a valid one. The reverse flip revokes a
valid certificate (denial of service). Flips inside a serial that make
the lookup miss turn the answer into "unknown".
"""

import logging
import string
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from error_handling import InvalidInputError, MalformedRecordError

from .candidate import FlipCandidate

logger = logging.getLogger("HAMMERLAB.Exploit.Ocsp")

FIELD_COUNT = 6
STATUS_FLIP_BIT = 2
HEX_DIGITS = frozenset(string.hexdigits)
VCHAR = frozenset(chr(c) for c in range(0x21, 0x7F))
SUBJECT_CHARS = VCHAR | {" "}


class CertStatus(str, Enum):
    VALID = "V"
    REVOKED = "R"
    EXPIRED = "E"


@dataclass(frozen=True)
class OcspRecord:
    """One index line."""
    status: CertStatus
    expiry: str
    revocation: str
    serial: str
    filename: str
    subject: str

    def serialize(self) -> str:
        return "\t".join([self.status.value, self.expiry, self.revocation,
                          self.serial, self.filename, self.subject]) + "\n"

    @property
    def serial_offset(self) -> int:
        """Offset of the serial inside the serialized line."""
        return len(self.status.value) + len(self.expiry) + len(self.revocation) + 3


def _check_chars(value: str, allowed: frozenset, name: str, lineno: int) -> None:
    bad = next((ch for ch in value if ch not in allowed), None)
    if bad is not None:
        raise MalformedRecordError(
            f"index line {lineno} has byte 0x{ord(bad):02X} in the {name} field", line=lineno)


def parse_record(line: str, lineno: int = 1) -> OcspRecord:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != FIELD_COUNT:
        raise MalformedRecordError(
            f"index line {lineno} has {len(fields)} fields, expected {FIELD_COUNT}", line=lineno)
    status, expiry, revocation, serial, filename, subject = fields
    try:
        cert_status = CertStatus(status)
    except ValueError:
        raise MalformedRecordError(f"index line {lineno} has unknown status '{status}'", line=lineno) from None
    if not serial or any(ch not in HEX_DIGITS for ch in serial):
        raise MalformedRecordError(f"index line {lineno} has a non-hex serial '{serial}'", line=lineno)
    for name, value in (("expiry", expiry), ("revocation", revocation), ("filename", filename)):
        _check_chars(value, VCHAR, name, lineno)
    _check_chars(subject, SUBJECT_CHARS, "subject", lineno)
    return OcspRecord(cert_status, expiry, revocation, serial, filename, subject)


def parse_index(text: Union[str, bytes]) -> List[OcspRecord]:
    """
    Parse an index; empty lines are malformed.

    Bytes are taken one character per byte, so offsets of the parsed
    records are byte offsets into the file. Anything outside printable
    ASCII is a malformed record.
    """
    if isinstance(text, bytes):
        text = text.decode("latin-1")
    if not text:
        return []
    body = text[:-1] if text.endswith("\n") else text
    return [parse_record(line, lineno) for lineno, line in enumerate(body.split("\n"), start=1)]


def serialize_index(records: Iterable[OcspRecord]) -> str:
    return "".join(record.serialize() for record in records)


@dataclass(frozen=True)
class FlipPosition:
    offset: int
    bit: int
    record: int

    def to_dict(self) -> Dict[str, int]:
        return {"offset": self.offset, "bit": self.bit, "record": self.record}


def _fraction_dict(value: Fraction) -> Dict[str, Any]:
    return {"fraction": f"{value.numerator}/{value.denominator}", "value": float(value)}


@dataclass
class OcspScan:
    """Flippable positions of an index and the per-flip probabilities."""
    total_bytes: int
    exploitable: List[FlipPosition] = field(default_factory=list)
    denial_of_service: List[FlipPosition] = field(default_factory=list)
    unknown_status: List[FlipPosition] = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return 8 * self.total_bytes

    def _probability(self, positions: Sequence[FlipPosition]) -> Fraction:
        return Fraction(len(positions), self.total_bits) if self.total_bits else Fraction(0)

    @property
    def probability(self) -> Fraction:
        return self._probability(self.exploitable)

    @property
    def dos_probability(self) -> Fraction:
        return self._probability(self.denial_of_service)

    @property
    def unknown_probability(self) -> Fraction:
        return self._probability(self.unknown_status)

    def candidates(self, text: str) -> List[FlipCandidate]:
        """Exploitable positions as candidates over the serialized index."""
        data = text.encode("latin-1")
        result = []
        for position in self.exploitable:
            flipped = bytearray(data)
            flipped[position.offset] ^= 1 << position.bit
            result.append(FlipCandidate(position.offset, position.bit, text,
                                        flipped.decode("latin-1"), "revoked_to_valid"))
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_bytes": self.total_bytes,
            "total_bits": self.total_bits,
            "exploitable": [p.to_dict() for p in self.exploitable],
            "denial_of_service": [p.to_dict() for p in self.denial_of_service],
            "unknown_status": [p.to_dict() for p in self.unknown_status],
            "probability": _fraction_dict(self.probability),
            "dos_probability": _fraction_dict(self.dos_probability),
            "unknown_probability": _fraction_dict(self.unknown_probability),
        }


def _unknown_serial_flips(record: OcspRecord, base: int, index: int, known: set) -> List[FlipPosition]:
    positions = []
    start = base + record.serial_offset
    for i, ch in enumerate(record.serial):
        for bit in range(8):
            flipped_char = chr(ord(ch) ^ (1 << bit))
            if flipped_char not in HEX_DIGITS:
                continue
            flipped = record.serial[:i] + flipped_char + record.serial[i + 1:]
            if flipped.upper() not in known:
                positions.append(FlipPosition(start + i, bit, index))
    return positions


def scan_ocsp(db: Sequence[OcspRecord], unknown_mode: bool = True) -> OcspScan:
    """
    Find every (offset, bit) of the serialized index whose flip changes an answer.

    Args:
        db: Index records in file order
        unknown_mode: Also scan revoked serials for flips that make the lookup miss

    Returns:
        OcspScan; ``probability`` is exploitable bits over all bits of the index
    """
    known = {record.serial.upper() for record in db}
    scan = OcspScan(total_bytes=0)
    offset = 0
    for index, record in enumerate(db):
        line = record.serialize()
        if record.status is CertStatus.REVOKED:
            scan.exploitable.append(FlipPosition(offset, STATUS_FLIP_BIT, index))
            if unknown_mode:
                scan.unknown_status.extend(_unknown_serial_flips(record, offset, index, known))
        elif record.status is CertStatus.VALID:
            scan.denial_of_service.append(FlipPosition(offset, STATUS_FLIP_BIT, index))
        offset += len(line.encode("latin-1"))
    scan.total_bytes = offset
    logger.info(f"OCSP scan: {len(db)} records, {len(scan.exploitable)} exploitable bits "
                f"of {scan.total_bits} (p={float(scan.probability):.6f})")
    return scan


def synthetic_index(count: int, record_bytes: int = 100, revoked_fraction: float = 1.0,
                    seed: int = 0) -> List[OcspRecord]:
    """
    Records of exactly ``record_bytes`` bytes each, newline included.

    Revoked records are chosen with a seeded generator; serials are unique.
    """
    if not 0.0 <= revoked_fraction <= 1.0:
        raise InvalidInputError("revoked_fraction must lie in [0, 1]")
    expiry = "301231235959Z"
    revocation = "240101000000Z"
    skeleton = OcspRecord(CertStatus.REVOKED, expiry, revocation, "0" * 16, "unknown", "/CN=")
    minimum = len(skeleton.serialize()) + 8
    if record_bytes < minimum:
        raise InvalidInputError(f"record_bytes must be at least {minimum}")

    rng = np.random.default_rng(seed)
    revoked = rng.random(count) < revoked_fraction
    records = []
    for i in range(count):
        status = CertStatus.REVOKED if revoked[i] else CertStatus.VALID
        revoked_at = revocation if revoked[i] else ""
        serial = f"{i + 1:016X}"
        head = OcspRecord(status, expiry, revoked_at, serial, "unknown", "").serialize()
        padding = record_bytes - len(head)
        subject = f"/CN=host{i}.example"
        subject = (subject + "x" * padding)[:padding]
        records.append(OcspRecord(status, expiry, revoked_at, serial, "unknown", subject))
    return records


def status_changes(before: Sequence[OcspRecord], after: Sequence[OcspRecord]) -> List[Tuple[int, str, str]]:
    """(record, old status, new status) for every record whose status differs."""
    return [(i, a.status.value, b.status.value)
            for i, (a, b) in enumerate(zip(before, after)) if a.status != b.status]


def lookup(db: Sequence[OcspRecord], serial: str) -> Optional[CertStatus]:
    wanted = serial.upper()
    for record in db:
        if record.serial.upper() == wanted:
            return record.status
    return None
