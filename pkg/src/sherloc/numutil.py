"""Big-integer helpers: modular arithmetic, probable primes, hex codec.

gmpy2 is used when available (large speedup for modular exponentiation at
cryptographic sizes); a pure-Python fallback keeps the package importable
without it.
"""

from __future__ import annotations

import math
import random

try:
    import gmpy2

    HAVE_GMPY2 = True
except ImportError:  # pragma: no cover - exercised only without gmpy2
    HAVE_GMPY2 = False


_SYSRAND = random.SystemRandom()

# Trial-division sieve for the pure-Python primality test.
_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71]


if HAVE_GMPY2:

    def powmod(base: int, exp: int, mod: int) -> int:
        return int(gmpy2.powmod(base, exp, mod))

    def invert(a: int, mod: int) -> int:
        """Modular inverse of a mod `mod`; raises ValueError if none exists."""
        try:
            return int(gmpy2.invert(a, mod))
        except ZeroDivisionError:
            raise ValueError(f"no inverse of {a} modulo {mod}") from None

    def is_probable_prime(n: int, rounds: int = 40) -> bool:
        if n < 2:
            return False
        return bool(gmpy2.is_prime(n, rounds))

else:  # pragma: no cover - exercised only without gmpy2

    def powmod(base: int, exp: int, mod: int) -> int:
        return pow(base, exp, mod)

    def invert(a: int, mod: int) -> int:
        try:
            return pow(a, -1, mod)
        except ValueError:
            raise ValueError(f"no inverse of {a} modulo {mod}") from None

    def is_probable_prime(n: int, rounds: int = 40) -> bool:
        if n < 2:
            return False
        for p in _SMALL_PRIMES:
            if n % p == 0:
                return n == p
        # Miller-Rabin with random bases.
        d = n - 1
        r = 0
        while d % 2 == 0:
            d //= 2
            r += 1
        rng = random.Random(n)
        for _ in range(rounds):
            a = rng.randrange(2, n - 1)
            x = pow(a, d, n)
            if x in (1, n - 1):
                continue
            for _ in range(r - 1):
                x = x * x % n
                if x == n - 1:
                    break
            else:
                return False
        return True


def default_rng() -> random.Random:
    """Non-deterministic generator used when a caller supplies no RNG."""
    return _SYSRAND


def rand_unit(n: int, rng: random.Random | None = None) -> int:
    """Uniform element of the multiplicative group mod n."""
    rng = rng or _SYSRAND
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def rand_odd_bits(bits: int, rng: random.Random | None = None) -> int:
    """Uniform odd integer of exactly `bits` bits (top and bottom bit set)."""
    if bits < 2:
        raise ValueError("need at least 2 bits for an odd integer with its top bit set")
    rng = rng or _SYSRAND
    return rng.getrandbits(bits) | (1 << (bits - 1)) | 1


def random_prime(bits: int, rng: random.Random | None = None, max_tries: int = 100_000) -> int:
    """Random probable prime of exactly `bits` bits (>= 40 Miller-Rabin rounds)."""
    rng = rng or _SYSRAND
    for _ in range(max_tries):
        candidate = rand_odd_bits(bits, rng)
        if is_probable_prime(candidate, 40):
            return candidate
    raise ValueError(f"no {bits}-bit prime found in {max_tries} tries")


def int_to_hex(v: int) -> str:
    """Canonical wire form: lowercase hex, no leading zeros, "0" for zero."""
    v = int(v)
    if v < 0:
        raise ValueError("negative integers have no wire encoding")
    return format(v, "x")


def hex_to_int(s: str) -> int:
    """Strict inverse of int_to_hex; rejects non-canonical encodings."""
    if not isinstance(s, str) or not s:
        raise ValueError(f"not a hex integer: {s!r}")
    if s != "0" and (s[0] == "0" or any(c not in "0123456789abcdef" for c in s)):
        raise ValueError(f"not canonical lowercase hex: {s!r}")
    return int(s, 16)
