"""
Tests for OCSP index parsing and flip scanning
"""

from fractions import Fraction

import pytest

from error_handling import MalformedRecordError
from ..ocsp import (
    CertStatus,
    OcspRecord,
    parse_index,
    scan_ocsp,
    serialize_index,
    synthetic_index,
)


def _record(status, serial, revocation="240101000000Z"):
    return OcspRecord(CertStatus(status), "301231235959Z", revocation if status == "R" else "",
                      serial, "unknown", f"/CN={serial}.example")


def _reparse_oracle(records):
    """Flip every bit of every line, re-parse, keep flips that turn R into V."""
    found = set()
    base = 0
    for record in records:
        line = record.serialize().encode("latin-1")
        for i in range(len(line)):
            for bit in range(8):
                flipped = bytearray(line)
                flipped[i] ^= 1 << bit
                try:
                    reparsed = parse_index(flipped.decode("latin-1"))
                except MalformedRecordError:
                    continue
                if len(reparsed) == 1 and record.status is CertStatus.REVOKED \
                        and reparsed[0].status is CertStatus.VALID:
                    found.add((base + i, bit))
        base += len(line)
    return found


@pytest.fixture
def small_db():
    return [_record("R", "01"), _record("V", "03"), _record("E", "0A")]


def test_revoked_records_of_100_bytes():
    records = synthetic_index(500, record_bytes=100)
    assert all(len(r.serialize()) == 100 for r in records)
    scan = scan_ocsp(records)
    assert scan.total_bytes == 50_000
    assert scan.probability == Fraction(1, 800)
    assert float(scan.probability) == pytest.approx(0.00125)


def test_no_revoked_records():
    scan = scan_ocsp(synthetic_index(200, revoked_fraction=0.0))
    assert scan.probability == 0
    assert scan.exploitable == []
    assert len(scan.denial_of_service) == 200


def test_probability_is_exact_ratio(small_db):
    scan = scan_ocsp(small_db)
    text = serialize_index(small_db)
    assert scan.total_bytes == len(text)
    assert scan.probability == Fraction(len(scan.exploitable), 8 * len(text))


def test_exploitable_set_matches_reparse_oracle():
    """Thousand-record index against exhaustive flip-and-reparse"""
    records = synthetic_index(1000, revoked_fraction=0.5, seed=7)
    scan = scan_ocsp(records, unknown_mode=False)
    assert {(p.offset, p.bit) for p in scan.exploitable} == _reparse_oracle(records)


def test_status_flip_bit(small_db):
    text = serialize_index(small_db)
    scan = scan_ocsp(small_db)
    (position,) = scan.exploitable
    assert position.bit == 2
    flipped = bytearray(text.encode("latin-1"))
    flipped[position.offset] ^= 1 << position.bit
    assert parse_index(flipped.decode("latin-1"))[0].status is CertStatus.VALID
    (dos,) = scan.denial_of_service
    assert text[dos.offset] == "V"


def test_candidates_differ_in_one_bit(small_db):
    scan = scan_ocsp(small_db)
    (candidate,) = scan.candidates(serialize_index(small_db))
    assert candidate.flipped.startswith("V\t")
    assert candidate.classification == "revoked_to_valid"


def test_unknown_serial_mode(small_db):
    """Serial flips that stay hex and miss every known serial"""
    scan = scan_ocsp(small_db)
    # '0' -> 1,2,4,8 and '1' -> 0,5,9; '1' -> 3 hits the known serial 03
    assert len(scan.unknown_status) == 7
    text = serialize_index(small_db)
    for position in scan.unknown_status:
        assert text[position.offset] in "01"
    assert scan.unknown_probability == Fraction(7, 8 * len(text))


def test_round_trip(small_db):
    text = serialize_index(small_db)
    assert parse_index(text) == small_db
    assert serialize_index(parse_index(text)) == text


class TestMalformed:
    """Malformed index lines"""

    def test_missing_field(self):
        with pytest.raises(MalformedRecordError) as exc:
            parse_index("V\t301231235959Z\t\t01\tunknown\t/CN=a\nV\t301231235959Z\t01\n")
        assert exc.value.line == 2

    def test_unknown_status(self):
        with pytest.raises(MalformedRecordError):
            parse_index("X\t301231235959Z\t\t01\tunknown\t/CN=a\n")

    def test_non_hex_serial(self):
        with pytest.raises(MalformedRecordError):
            parse_index("V\t301231235959Z\t\tZZ\tunknown\t/CN=a\n")

    def test_empty_index(self):
        assert parse_index("") == []

    def test_non_ascii_subject(self):
        data = ("V\t301231235959Z\t\t01\tunknown\t/CN=a\n"
                "R\t301231235959Z\t240101000000Z\t02\tunknown\t/CN=Jürgen\n").encode("utf-8")
        with pytest.raises(MalformedRecordError) as exc:
            parse_index(data)
        assert exc.value.line == 2

    def test_cjk_subject_text(self):
        with pytest.raises(MalformedRecordError) as exc:
            parse_index("R\t301231235959Z\t240101000000Z\t01\tunknown\t/CN=日本\n")
        assert exc.value.line == 1

    def test_invalid_utf8(self):
        with pytest.raises(MalformedRecordError):
            parse_index(b"R\t301231235959Z\t240101000000Z\t01\tunknown\t/CN=\xff\xfe\n")

    def test_control_character_in_filename(self):
        with pytest.raises(MalformedRecordError):
            parse_index("V\t301231235959Z\t\t01\tunk\x01nown\t/CN=a\n")


class TestByteOffsets:
    """Offsets and totals count bytes of the file"""

    def test_subject_with_spaces(self):
        (record,) = parse_index(b"V\t301231235959Z\t\t01\tunknown\t/CN=Jane Doe/O=Example Org\n")
        assert record.subject == "/CN=Jane Doe/O=Example Org"

    def test_positions_point_at_status_bytes(self):
        data = serialize_index([_record("V", "0A"), _record("R", "0B"), _record("R", "0C")]).encode("ascii")
        scan = scan_ocsp(parse_index(data))
        assert scan.total_bytes == len(data)
        assert [data[p.offset:p.offset + 1] for p in scan.exploitable] == [b"R", b"R"]
        assert [data[p.offset:p.offset + 1] for p in scan.denial_of_service] == [b"V"]
        for position in scan.exploitable:
            flipped = bytearray(data)
            flipped[position.offset] ^= 1 << position.bit
            assert parse_index(bytes(flipped))[position.record].status is CertStatus.VALID
