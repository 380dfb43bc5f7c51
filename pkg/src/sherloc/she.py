"""Additive and multiplicative homomorphic schemes over a shared modulus.

Two textbook cryptosystems configured so that ciphertexts can later be
switched between them:

* Paillier (additive): ``E+(m) = (1+N)^m * r^N mod N^2``. The product of two
  ciphertexts decrypts to the sum of the plaintexts; raising a ciphertext to
  a scalar multiplies the plaintext.
* ElGamal over the composite modulus N (multiplicative):
  ``E*(m) = <m*h^r mod N, g^r mod N>`` with a fixed square generator g = 16
  and ``h = g^(x0*x1) mod N``. Componentwise products decrypt to plaintext
  products.

Both schemes share ``N = p*q``, which is what makes switching possible. The
multiplicative secret exponent is kept in factored form ``(x0, x1)``; the two
factors are the key shares handed to the proxy and the server. The additive
scheme has no usable share - its shares are the distinguished "absent" value,
so neither server can strip a Paillier layer on its own.

All key and ciphertext objects are immutable; every operation is a pure
function, safe for concurrent use. Randomness comes from a caller-supplied
generator (seeded in tests for reproducible transcripts) or the system RNG.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass

from .errors import (
    CiphertextError,
    DomainError,
    KeyGenError,
    KeyIntegrityError,
    ZeroPlaintextError,
)
from .numutil import (
    default_rng,
    hex_to_int,
    int_to_hex,
    invert,
    powmod,
    rand_odd_bits,
    rand_unit,
    random_prime,
)

GENERATOR = 16

MIN_SECURITY_BITS = 16  # exhaustive-test floor; real keys use the default below
DEFAULT_SECURITY_BITS = 512  # per-prime bits, giving |N| of 1023..1024

_KEYGEN_TRIES = 1000


@dataclass(frozen=True)
class KeyGenParams:
    """Key generation inputs: per-prime bit length and an optional seed."""

    security_bits: int = DEFAULT_SECURITY_BITS
    rng_seed: int | None = None


@dataclass(frozen=True)
class AddSecretKey:
    n: int
    phi: int
    p: int
    q: int


@dataclass(frozen=True)
class AddKeypair:
    """Additive keypair; the public key is the bare modulus."""

    pk_add: int
    sk_add: AddSecretKey


@dataclass(frozen=True)
class MulPublicKey:
    n: int
    g: int
    h: int


@dataclass(frozen=True)
class MulSecretKey:
    n: int
    g: int
    x0: int
    x1: int

    @property
    def x(self) -> int:
        return self.x0 * self.x1


@dataclass(frozen=True)
class MulKeypair:
    pk_mul: MulPublicKey
    sk_mul: MulSecretKey


@dataclass(frozen=True)
class KeyShare:
    """One server's share: nothing for the additive scheme, one factor of x."""

    k_add: None
    k_mul: int


@dataclass(frozen=True)
class KeyShares:
    proxy: KeyShare  # x0
    server: KeyShare  # x1


@dataclass(frozen=True)
class AddCiphertext:
    """Paillier ciphertext: a unit of Z*_{N^2}, tagged with its modulus."""

    value: int
    n: int


@dataclass(frozen=True)
class MulCiphertext:
    """ElGamal ciphertext pair <m*h^r, g^r>, tagged with its modulus."""

    c1: int
    c2: int
    n: int


def keygen(params: KeyGenParams) -> tuple[AddKeypair, MulKeypair, KeyShares]:
    """Generate both keypairs over a fresh shared modulus, plus the key shares.

    p and q are random probable primes of ``security_bits`` bits each, rejected
    when p == q, when gcd(N, phi(N)) != 1, or when g = 16 is not a unit mod N.
    x0 and x1 are odd, each of bit length floor(|N|/2) - 1, so their product x
    stays below N.
    """
    if params.security_bits < MIN_SECURITY_BITS:
        raise DomainError(f"security_bits must be >= {MIN_SECURITY_BITS}")
    rng: random.Random
    if params.rng_seed is not None:
        rng = random.Random(params.rng_seed)
    else:
        rng = default_rng()

    for _ in range(_KEYGEN_TRIES):
        try:
            p = random_prime(params.security_bits, rng)
            q = random_prime(params.security_bits, rng)
        except ValueError as exc:
            raise KeyGenError(str(exc)) from exc
        if p == q:
            continue
        n = p * q
        phi = (p - 1) * (q - 1)
        if math.gcd(n, phi) != 1:
            continue
        if math.gcd(GENERATOR, n) != 1:
            continue
        break
    else:
        raise KeyGenError("no acceptable prime pair found")

    half = n.bit_length() // 2 - 1
    x0 = rand_odd_bits(half, rng)
    x1 = rand_odd_bits(half, rng)
    h = powmod(GENERATOR, x0 * x1, n)

    add_kp = AddKeypair(pk_add=n, sk_add=AddSecretKey(n=n, phi=phi, p=p, q=q))
    mul_kp = MulKeypair(
        pk_mul=MulPublicKey(n=n, g=GENERATOR, h=h),
        sk_mul=MulSecretKey(n=n, g=GENERATOR, x0=x0, x1=x1),
    )
    shares = KeyShares(proxy=KeyShare(None, x0), server=KeyShare(None, x1))
    return add_kp, mul_kp, shares


def enc_add(pk_add: int, m: int, rng: random.Random | None = None, r: int | None = None) -> AddCiphertext:
    """Encrypt m under the additive scheme; r may be pinned for tests."""
    n = pk_add
    if not 0 <= m < n:
        raise DomainError(f"plaintext {m} outside [0, {n})")
    if r is None:
        r = rand_unit(n, rng)
    elif not (1 <= r < n and math.gcd(r, n) == 1):
        raise DomainError("randomness must be a unit mod N")
    n2 = n * n
    # (1+N)^m = 1 + m*N (mod N^2)
    c = (1 + m * n) % n2 * powmod(r, n, n2) % n2
    return AddCiphertext(value=c, n=n)


def dec_add(sk_add: AddSecretKey, c: AddCiphertext, crt: bool = False) -> int:
    """Invert enc_add: ((c^phi mod N^2) - 1)/N * phi^-1 mod N.

    With crt=True the power c^phi mod N^2 is evaluated via the factors p, q:
    a pure speed path, bit-equivalent to the reference formula.
    """
    n = sk_add.n
    if c.n != n:
        raise DomainError("ciphertext was produced under a different modulus")
    n2 = n * n
    try:
        phi_inv = invert(sk_add.phi, n)
    except ValueError as exc:
        raise KeyIntegrityError("phi(N) is not invertible mod N") from exc
    if crt:
        u = _powmod_n2_crt(c.value, sk_add.phi, sk_add.p, sk_add.q)
    else:
        u = powmod(c.value, sk_add.phi, n2)
    if (u - 1) % n != 0:
        raise CiphertextError("degenerate ciphertext: decryption residue out of subgroup")
    return (u - 1) // n * phi_inv % n


def _powmod_n2_crt(base: int, exp: int, p: int, q: int) -> int:
    """base^exp mod (p*q)^2 via CRT over p^2 and q^2 with reduced exponents."""
    p2 = p * p
    q2 = q * q
    up = powmod(base % p2, exp % (p2 - p), p2)
    uq = powmod(base % q2, exp % (q2 - q), q2)
    return (up + p2 * ((uq - up) * invert(p2, q2) % q2)) % (p2 * q2)


def add_homomorphic(c1: AddCiphertext, c2: AddCiphertext) -> AddCiphertext:
    """Ciphertext product: decrypts to (m1 + m2) mod N."""
    _same_modulus(c1.n, c2.n)
    return AddCiphertext(c1.value * c2.value % (c1.n * c1.n), c1.n)


def scalar_mul_add(c: AddCiphertext, k: int) -> AddCiphertext:
    """Ciphertext power: decrypts to (k * m) mod N."""
    if not 0 <= k < c.n:
        raise DomainError(f"scalar {k} outside [0, {c.n})")
    return AddCiphertext(powmod(c.value, k, c.n * c.n), c.n)


def sub_homomorphic(c1: AddCiphertext, c2: AddCiphertext) -> AddCiphertext:
    """Product with the inverse of c2: decrypts to (m1 - m2) mod N."""
    _same_modulus(c1.n, c2.n)
    n2 = c1.n * c1.n
    try:
        inv = invert(c2.value, n2)
    except ValueError as exc:
        raise CiphertextError("subtrahend ciphertext not invertible mod N^2") from exc
    return AddCiphertext(c1.value * inv % n2, c1.n)


def enc_mul(pk_mul: MulPublicKey, m: int, rng: random.Random | None = None, r: int | None = None) -> MulCiphertext:
    """Encrypt m != 0 under the multiplicative scheme.

    Zero is rejected: m = 0 would put a literal 0 on the wire, announcing the
    plaintext. The blinded pair encoding is the sanctioned way to carry zero.
    """
    n = pk_mul.n
    if m == 0:
        raise ZeroPlaintextError("multiplicative scheme cannot encrypt 0")
    if not 1 <= m < n:
        raise DomainError(f"plaintext {m} outside [1, {n})")
    if r is None:
        r = rand_unit(n, rng)
    elif not (1 <= r < n and math.gcd(r, n) == 1):
        raise DomainError("randomness must be a unit mod N")
    return MulCiphertext(
        c1=m * powmod(pk_mul.h, r, n) % n,
        c2=powmod(pk_mul.g, r, n),
        n=n,
    )


def dec_mul(sk_mul: MulSecretKey, c: MulCiphertext) -> int:
    """Invert enc_mul: c1 / c2^x mod N with x = x0*x1."""
    n = sk_mul.n
    if c.n != n:
        raise DomainError("ciphertext was produced under a different modulus")
    try:
        denom_inv = invert(powmod(c.c2, sk_mul.x, n), n)
    except ValueError as exc:
        raise CiphertextError("ciphertext randomness component not invertible mod N") from exc
    return c.c1 * denom_inv % n


def mul_homomorphic(c1: MulCiphertext, c2: MulCiphertext) -> MulCiphertext:
    """Componentwise product: decrypts to (m1 * m2) mod N."""
    _same_modulus(c1.n, c2.n)
    return MulCiphertext(c1.c1 * c2.c1 % c1.n, c1.c2 * c2.c2 % c1.n, c1.n)


def scalar_mul_mul(c: MulCiphertext, k: int) -> MulCiphertext:
    """Scale the message component: decrypts to (k * m) mod N."""
    if not 1 <= k < c.n:
        raise DomainError(f"scalar {k} outside [1, {c.n})")
    return MulCiphertext(c.c1 * k % c.n, c.c2, c.n)


def _same_modulus(n1: int, n2: int) -> None:
    if n1 != n2:
        raise DomainError("ciphertexts were produced under different moduli")


# --- key file serialization ---------------------------------------------
#
# Big integers are lowercase hex, no leading zeros, "0" for zero. The public
# file carries {"n", "g", "h"}; secret material adds "phi"/"p"/"q"/"x0"/"x1".
# Key files should be readable only by their owner; save_key_files sets 0600
# on the secret ones (see README).

PUBLIC_FILE = "public.json"
SECRET_FILE = "secret.json"
PROXY_SHARE_FILE = "share_proxy.json"
SERVER_SHARE_FILE = "share_server.json"


def public_to_json(pk_mul: MulPublicKey) -> dict:
    return {"n": int_to_hex(pk_mul.n), "g": int_to_hex(pk_mul.g), "h": int_to_hex(pk_mul.h)}


def public_from_json(d: dict) -> MulPublicKey:
    return MulPublicKey(n=hex_to_int(d["n"]), g=hex_to_int(d["g"]), h=hex_to_int(d["h"]))


def secret_to_json(add_kp: AddKeypair, mul_kp: MulKeypair) -> dict:
    sk = add_kp.sk_add
    msk = mul_kp.sk_mul
    d = public_to_json(mul_kp.pk_mul)
    d.update(
        phi=int_to_hex(sk.phi),
        p=int_to_hex(sk.p),
        q=int_to_hex(sk.q),
        x0=int_to_hex(msk.x0),
        x1=int_to_hex(msk.x1),
    )
    return d


def secret_from_json(d: dict) -> tuple[AddKeypair, MulKeypair, KeyShares]:
    pk = public_from_json(d)
    p, q = hex_to_int(d["p"]), hex_to_int(d["q"])
    phi = hex_to_int(d["phi"])
    x0, x1 = hex_to_int(d["x0"]), hex_to_int(d["x1"])
    if p * q != pk.n or (p - 1) * (q - 1) != phi:
        raise KeyIntegrityError("secret key file inconsistent with its modulus")
    if powmod(pk.g, x0 * x1, pk.n) != pk.h:
        raise KeyIntegrityError("key shares inconsistent with public h")
    add_kp = AddKeypair(pk_add=pk.n, sk_add=AddSecretKey(n=pk.n, phi=phi, p=p, q=q))
    mul_kp = MulKeypair(pk_mul=pk, sk_mul=MulSecretKey(n=pk.n, g=pk.g, x0=x0, x1=x1))
    return add_kp, mul_kp, KeyShares(proxy=KeyShare(None, x0), server=KeyShare(None, x1))


def save_key_files(out_dir: str, add_kp: AddKeypair, mul_kp: MulKeypair, shares: KeyShares) -> None:
    os.makedirs(out_dir, exist_ok=True)
    pub = public_to_json(mul_kp.pk_mul)
    files = {
        PUBLIC_FILE: pub,
        SECRET_FILE: secret_to_json(add_kp, mul_kp),
        PROXY_SHARE_FILE: dict(pub, x0=int_to_hex(shares.proxy.k_mul)),
        SERVER_SHARE_FILE: dict(pub, x1=int_to_hex(shares.server.k_mul)),
    }
    for name, payload in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if name != PUBLIC_FILE:
            os.chmod(path, 0o600)


def load_key_files(key_dir: str) -> tuple[AddKeypair, MulKeypair, KeyShares]:
    with open(os.path.join(key_dir, SECRET_FILE), encoding="utf-8") as fh:
        return secret_from_json(json.load(fh))


def load_share_file(key_dir: str, filename: str) -> tuple[MulPublicKey, int]:
    """Load one server's share file; returns the public key and the share."""
    with open(os.path.join(key_dir, filename), encoding="utf-8") as fh:
        d = json.load(fh)
    pk = public_from_json(d)
    key = "x0" if filename == PROXY_SHARE_FILE else "x1"
    return pk, hex_to_int(d[key])
