"""
DNS bitsquatting for HammerLab.

A single bit flip in a cached or stored domain name turns ``domain.com``
into ``dnmain.com``. This module enumerates every such neighbour that is
still a valid, registrable name, and scans simplified zone files for them.
Only the registrable label changes; the public suffix stays fixed.
"""

import logging
import string
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Tuple

import tldextract

from error_handling import InvalidDomainError, MalformedRecordError

from .candidate import FlipCandidate

logger = logging.getLogger("HAMMERLAB.Exploit.Dns")

LDH_CHARS = frozenset(string.ascii_lowercase + string.digits + "-")
MAX_DOMAIN_LENGTH = 253
MAX_LABEL_LENGTH = 63
RECORD_TYPES = ("A", "MX", "CNAME")


@lru_cache(maxsize=1)
def _extractor() -> tldextract.TLDExtract:
    # bundled suffix snapshot only, no network fetch and no disk cache
    return tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


def canonicalize(domain: str) -> str:
    return domain.strip().rstrip(".").lower()


def is_valid_domain(domain: str) -> bool:
    """Letters-digits-hyphen check on an already canonical name."""
    if not domain or len(domain) > MAX_DOMAIN_LENGTH:
        return False
    labels = domain.split(".")
    if len(labels) < 2:
        return False
    for label in labels:
        if not 1 <= len(label) <= MAX_LABEL_LENGTH:
            return False
        if label[0] == "-" or label[-1] == "-":
            return False
        if any(ch not in LDH_CHARS for ch in label):
            return False
    return True


def split_registrable(domain: str) -> Tuple[str, str, str]:
    """(subdomain, registrable label, public suffix) of a canonical name."""
    extracted = _extractor()(domain)
    if extracted.suffix and extracted.domain:
        return extracted.subdomain, extracted.domain, extracted.suffix
    # unknown suffix: treat the last label as the suffix
    head, _, tail = domain.rpartition(".")
    subdomain, _, label = head.rpartition(".")
    return subdomain, label, tail


def check_domain(domain: str) -> str:
    canonical = canonicalize(domain)
    if not is_valid_domain(canonical):
        raise InvalidDomainError(f"'{domain}' is not a valid letters-digits-hyphen domain",
                                 context={"domain": domain})
    return canonical


def enumerate_dns_bitsquats(domain: str) -> List[FlipCandidate]:
    """
    All single-bit neighbours of ``domain`` that are valid and registrable.

    Flips inside the public suffix and inside subdomain labels are skipped,
    as are flips that only change letter case.

    Args:
        domain: Domain name, any case, optional trailing dot

    Returns:
        Candidates ordered by (offset, bit)
    """
    canonical = check_domain(domain)
    subdomain, label, _ = split_registrable(canonical)
    start = len(subdomain) + 1 if subdomain else 0

    candidates: List[FlipCandidate] = []
    for offset in range(start, start + len(label)):
        code = ord(canonical[offset])
        for bit in range(8):
            flipped_char = chr(code ^ (1 << bit))
            flipped = canonical[:offset] + flipped_char + canonical[offset + 1:]
            if flipped.lower() == canonical:
                continue
            if flipped_char not in LDH_CHARS or not is_valid_domain(flipped):
                continue
            candidates.append(FlipCandidate(offset, bit, canonical, flipped, "bitsquat"))
    logger.debug(f"{canonical}: {len(candidates)} bitsquat candidates")
    return candidates


@dataclass(frozen=True)
class ZoneEntry:
    """One line of a simplified zone file."""
    name: str
    record_type: str
    value: str

    def __post_init__(self):
        if self.record_type not in RECORD_TYPES:
            raise MalformedRecordError(f"unsupported record type '{self.record_type}'")
        object.__setattr__(self, "name", check_domain(self.name))

    @property
    def target(self) -> str:
        """Domain the record points to; MX values may carry a preference first."""
        return canonicalize(self.value.split()[-1])


def parse_zone(text: str) -> List[ZoneEntry]:
    """
    Parse ``name type value`` lines; ``#`` and ``;`` start comments.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise MalformedRecordError(f"zone line {lineno} needs name, type and value", line=lineno)
        name, record_type, value = parts[0], parts[1].upper(), " ".join(parts[2:])
        try:
            entries.append(ZoneEntry(name, record_type, value))
        except (InvalidDomainError, MalformedRecordError) as e:
            raise MalformedRecordError(f"zone line {lineno}: {e.message}", line=lineno) from e
    return entries


def scan_zone(entries: Iterable[ZoneEntry]) -> List[Dict[str, Any]]:
    """
    Bitsquat candidates for every name and every MX/CNAME target in a zone.

    A records point at addresses and contribute only their name.
    """
    findings: List[Dict[str, Any]] = []
    seen = set()
    for entry in entries:
        fields = [("name", entry.name)]
        if entry.record_type in ("MX", "CNAME"):
            fields.append(("target", entry.target))
        for field_name, domain in fields:
            try:
                candidates = enumerate_dns_bitsquats(domain)
            except InvalidDomainError:
                logger.warning(f"skipping {entry.record_type} {field_name} '{domain}': not a valid domain")
                continue
            for candidate in candidates:
                key = (field_name, entry.name, entry.record_type, candidate.flipped)
                if key in seen:
                    continue
                seen.add(key)
                findings.append({
                    "record_name": entry.name,
                    "record_type": entry.record_type,
                    "field": field_name,
                    **candidate.to_dict(),
                })
    logger.info(f"Zone scan: {len(findings)} candidates")
    return findings
