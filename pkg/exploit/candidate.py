"""Single-bit flip candidates shared by the exploit scanners."""

from dataclasses import dataclass
from typing import Any, Dict, Union

from error_handling import InvalidInputError

Serialized = Union[str, bytes]


def _as_bytes(value: Serialized) -> bytes:
    return value.encode("latin-1") if isinstance(value, str) else bytes(value)


def bit_distance(a: Serialized, b: Serialized) -> int:
    """Hamming distance of two equal-length serialized values."""
    return sum(bin(x ^ y).count("1") for x, y in zip(_as_bytes(a), _as_bytes(b)))


@dataclass(frozen=True)
class FlipCandidate:
    """A serialized value and its neighbour with exactly one bit changed."""
    offset: int
    bit: int
    original: str
    flipped: str
    classification: str

    def __post_init__(self):
        if len(self.original) != len(self.flipped) or bit_distance(self.original, self.flipped) != 1:
            raise InvalidInputError(
                f"'{self.flipped}' is not a single-bit neighbour of '{self.original}'",
                context={"offset": self.offset, "bit": self.bit},
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "offset": self.offset,
            "bit": self.bit,
            "original": self.original,
            "flipped": self.flipped,
            "classification": self.classification,
        }
