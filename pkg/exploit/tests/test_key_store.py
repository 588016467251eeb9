"""
Tests for key listings, store diffs and changed-key analysis
"""

import numpy as np
import pytest

from error_handling import MalformedRecordError
from ..key_store import (
    KeyEntry,
    analyze_changed_keys,
    decode_rsa_blob,
    diff_key_store,
    encode_rsa_blob,
    modulus_bit_at,
    modulus_span,
    parse_listing,
    serialize_listing,
)
from ..rsa_keys import analyze_key_flip, generate_toy_key


def _flip(entry, offset, bit):
    blob = bytearray(entry.blob)
    blob[offset] ^= 1 << bit
    return KeyEntry(entry.user, bytes(blob))


@pytest.fixture
def store():
    return {f"user{i}": KeyEntry.from_key(f"user{i}", generate_toy_key(64, seed=i).public) for i in range(20)}


def test_blob_round_trip():
    key = generate_toy_key(64, seed=2).public
    assert decode_rsa_blob(encode_rsa_blob(key.n, key.e)) == (key.n, key.e)


def test_listing_round_trip(store):
    text = serialize_listing(store)
    assert parse_listing(text) == store
    assert serialize_listing(parse_listing(text)) == text


def test_identical_stores(store):
    assert diff_key_store(store, dict(store)) == []


def test_one_flipped_modulus_bit(store):
    start, end = modulus_span(store["user3"].blob)
    offset = end - 2
    after = dict(store)
    after["user3"] = _flip(store["user3"], offset, 4)
    (change,) = diff_key_store(store, after)
    assert change.user == "user3"
    assert change.kind == "modified"
    assert change.positions == [(offset, 4)]
    assert modulus_bit_at(store["user3"].blob, offset, 4) == 12
    n_before, _ = store["user3"].public_key()
    n_after, _ = after["user3"].public_key()
    assert n_before ^ n_after == 1 << 12


def test_random_multi_flip_store_matches_naive_oracle(store):
    rng = np.random.default_rng(42)
    after = dict(store)
    for user in rng.choice(sorted(store), size=7, replace=False):
        entry = after[user]
        for _ in range(int(rng.integers(1, 4))):
            entry = _flip(entry, int(rng.integers(len(entry.blob))), int(rng.integers(8)))
        after[user] = entry

    expected = {}
    for user in store:
        a, b = store[user].blob, after[user].blob
        if a != b:
            diff = int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
            expected[user] = sorted((len(a) - 1 - i // 8, i % 8) for i in range(diff.bit_length()) if diff >> i & 1)
    changes = diff_key_store(store, after)
    assert {c.user: sorted(c.positions) for c in changes} == expected


def test_added_and_removed_users(store):
    after = dict(store)
    removed = after.pop("user0")
    after["newcomer"] = KeyEntry("newcomer", removed.blob)
    kinds = {c.user: c.kind for c in diff_key_store(store, after)}
    assert kinds == {"newcomer": "added", "user0": "removed"}


def test_changed_keys_are_attacked(store):
    before = store["user5"]
    start, end = modulus_span(before.blob)
    after = dict(store)
    after["user5"] = _flip(before, end - 1, 1)
    (finding,) = analyze_changed_keys(diff_key_store(store, after), budget=5_000_000)
    assert finding["modulus_bits"] == [1]
    key = generate_toy_key(64, seed=5).public
    expected = analyze_key_flip(key, 1, budget=5_000_000)
    assert finding["result"]["status"] == expected.status
    assert finding["result"]["modulus"] == hex(expected.modulus)


def test_flip_outside_modulus_is_not_attacked(store):
    after = dict(store)
    after["user1"] = _flip(store["user1"], 5, 0)
    (finding,) = analyze_changed_keys(diff_key_store(store, after))
    assert finding["modulus_bits"] == []
    assert finding["result"] is None


class TestMalformedListing:
    """Malformed listing lines"""

    def test_missing_user(self):
        with pytest.raises(MalformedRecordError) as exc:
            parse_listing("ssh-rsa AAAA\n")
        assert exc.value.line == 1

    def test_bad_base64(self):
        with pytest.raises(MalformedRecordError):
            parse_listing("ssh-rsa !!!notbase64 alice\n")

    def test_duplicate_user(self, store):
        line = store["user1"].serialize()
        with pytest.raises(MalformedRecordError):
            parse_listing(f"{line}\n{line}\n")
