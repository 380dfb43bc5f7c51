"""Ciphertext switching between the additive and multiplicative schemes.

AddToMul is local: raising an additive ciphertext to the power h^r turns its
plaintext slot into m*h^r while a fresh g^r rides along, i.e. a multiplicative
ciphertext wrapped in the original Paillier layer (a "nested" ciphertext).

MulToAdd is a two-party protocol. The server (holding x1) masks the companion
with a fresh g^s and sends c' = (g^(r+s))^x1 plus R = g^s; the proxy (holding
x0) computes (c')^x0 = h^(r+s), inverts it mod N, raises the nested outer
component to that inverse (leaving E+(m*h^-s)) and returns R' = R^x0; the
server finishes by scaling with (R')^x1 = h^s. Neither party ever sees both
key shares, and the plaintext is blinded by h^-s while in the proxy's hands.

Zero handling: the multiplicative scheme rejects plaintext 0, so values that
may be zero travel as a *pair* (E*(v+beta), E*(beta)) with beta a fresh unit;
subtracting the two legs in the additive domain recovers v. The encoding is
branch-free - zero and nonzero values are indistinguishable on the wire - at
the cost of four switch executions per product of two encoded values.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import CiphertextError, DomainError, ProtocolError, SwitchRetry
from .numutil import default_rng, invert, powmod, rand_unit
from .she import (
    AddCiphertext,
    MulCiphertext,
    MulPublicKey,
    MulSecretKey,
    add_homomorphic,
    dec_mul,
    enc_add,
    enc_mul,
    mul_homomorphic,
    scalar_mul_add,
    scalar_mul_mul,
    sub_homomorphic,
)

MAX_SWITCH_RETRIES = 8


@dataclass(frozen=True)
class NestedCiphertext:
    """Paillier layer over the message component of a MUL ciphertext.

    ``outer`` lives in Z*_{N^2} and decrypts (with the additive secret key) to
    m*h^r mod N; ``companion`` is the matching g^r.
    """

    outer: int
    companion: int
    n: int


@dataclass(frozen=True)
class MulToAddRound1:
    """Server -> proxy: the nested ciphertext plus the masked companion."""

    nested: NestedCiphertext
    c_prime: int  # (g^(r+s))^x1 mod N
    big_r: int  # g^s mod N
    exchange_id: int


@dataclass(frozen=True)
class MulToAddRound2:
    """Proxy -> server: E+(m*h^-s) and R^x0."""

    c_double_prime: AddCiphertext
    r_prime: int
    exchange_id: int


@dataclass(frozen=True)
class ServerSwitchState:
    """The server's secret s for one exchange; single use."""

    exchange_id: int
    s: int


@dataclass(frozen=True)
class PairEncodedValue:
    """Blinded pair (E*(v+beta), E*(beta)); decodes to v by subtraction."""

    hi: MulCiphertext
    lo: MulCiphertext


class ExchangeTable:
    """Pending server-side switch states, keyed by exchange id, single use."""

    def __init__(self):
        self._pending: dict[int, ServerSwitchState] = {}

    def put(self, state: ServerSwitchState) -> None:
        if state.exchange_id in self._pending:
            raise ProtocolError(f"duplicate exchange id {state.exchange_id}")
        self._pending[state.exchange_id] = state

    def pop(self, exchange_id: int) -> ServerSwitchState:
        try:
            return self._pending.pop(exchange_id)
        except KeyError:
            raise ProtocolError(f"no pending switch state for exchange {exchange_id}") from None

    def __len__(self):
        return len(self._pending)


def add_to_mul(c: AddCiphertext, pk_mul: MulPublicKey, rng: random.Random | None = None) -> NestedCiphertext:
    """Locally convert an additive ciphertext into a nested MUL ciphertext."""
    n = pk_mul.n
    if c.n != n:
        raise DomainError("ciphertext modulus does not match the MUL public key")
    r = rand_unit(n, rng)
    e = powmod(pk_mul.h, r, n)
    return NestedCiphertext(
        outer=powmod(c.value, e, n * n),
        companion=powmod(pk_mul.g, r, n),
        n=n,
    )


def nest_mul(c: MulCiphertext, pk_add: int, rng: random.Random | None = None) -> NestedCiphertext:
    """Wrap a MUL ciphertext for MulToAdd: fresh Paillier layer over c1."""
    if c.n != pk_add:
        raise DomainError("ciphertext modulus does not match the ADD public key")
    return NestedCiphertext(outer=enc_add(pk_add, c.c1, rng).value, companion=c.c2, n=c.n)


def mul_to_add_server_round1(
    nested: NestedCiphertext,
    k1_mul: int,
    pk_mul: MulPublicKey,
    rng: random.Random | None = None,
    exchange_id: int = 0,
) -> tuple[MulToAddRound1, ServerSwitchState]:
    """Server step: mask the companion with a fresh s and raise to x1."""
    n = pk_mul.n
    if nested.n != n:
        raise DomainError("nested ciphertext modulus does not match the MUL public key")
    if not 1 <= nested.companion < n:
        raise CiphertextError("nested companion out of range")
    s = rand_unit(n, rng)
    g_s = powmod(pk_mul.g, s, n)
    round1 = MulToAddRound1(
        nested=nested,
        c_prime=powmod(nested.companion * g_s % n, k1_mul, n),
        big_r=g_s,
        exchange_id=exchange_id,
    )
    return round1, ServerSwitchState(exchange_id=exchange_id, s=s)


def mul_to_add_proxy(round1: MulToAddRound1, k0_mul: int) -> MulToAddRound2:
    """Proxy step: strip the h^(r+s) factor out of the plaintext slot.

    (c')^x0 = h^(r+s); its inverse mod N, applied as an exponent on the outer
    Paillier component, acts mod N on the plaintext slot (because
    (1+N)^a = 1+aN mod N^2), leaving E+(m*h^-s).
    """
    n = round1.nested.n
    if round1.c_prime == 0:
        raise CiphertextError("degenerate exchange: c' is zero")
    h_rs = powmod(round1.c_prime, k0_mul, n)
    try:
        t = invert(h_rs, n)
    except ValueError as exc:
        raise SwitchRetry("h^(r+s) not invertible mod N; restart with fresh randomness") from exc
    return MulToAddRound2(
        c_double_prime=AddCiphertext(powmod(round1.nested.outer, t, n * n), n),
        r_prime=powmod(round1.big_r, k0_mul, n),
        exchange_id=round1.exchange_id,
    )


def mul_to_add_server_round2(
    round2: MulToAddRound2,
    state: ServerSwitchState,
    k1_mul: int,
) -> AddCiphertext:
    """Server step: unblind with (R')^x1 = h^s, recovering E+(m)."""
    if state is None or state.exchange_id != round2.exchange_id:
        raise ProtocolError("missing or mismatched server state for this exchange")
    n = round2.c_double_prime.n
    h_s = powmod(round2.r_prime, k1_mul, n)
    return scalar_mul_add(round2.c_double_prime, h_s)


class LocalSwitch:
    """Runs both MulToAdd roles in-process (unit tests, oracles).

    The wire protocol uses a remote proxy instead; this context exists so the
    switching algebra can be exercised without any transport.
    """

    def __init__(self, pk_add: int, pk_mul: MulPublicKey, k0_mul: int, k1_mul: int,
                 rng: random.Random | None = None):
        self.pk_add = pk_add
        self.pk_mul = pk_mul
        self.k0 = k0_mul
        self.k1 = k1_mul
        self.rng = rng or default_rng()
        self._next_exchange = 0

    def _proxy_step(self, round1: MulToAddRound1) -> MulToAddRound2:
        return mul_to_add_proxy(round1, self.k0)

    def mul_to_add(self, nested: NestedCiphertext) -> AddCiphertext:
        last: SwitchRetry | None = None
        for _ in range(MAX_SWITCH_RETRIES):
            eid = self._next_exchange
            self._next_exchange += 1
            round1, state = mul_to_add_server_round1(nested, self.k1, self.pk_mul, self.rng, eid)
            try:
                round2 = self._proxy_step(round1)
            except SwitchRetry as exc:
                last = exc
                continue
            return mul_to_add_server_round2(round2, state, self.k1)
        raise CiphertextError(f"switch retries exhausted: {last}")


def pair_encode(pk_mul: MulPublicKey, v: int, rng: random.Random | None = None) -> PairEncodedValue:
    """Encode v (zero allowed) as the blinded pair (E*(v+beta), E*(beta)).

    beta is resampled until both beta and v+beta are units mod N, so neither
    leg - nor any product of legs - can ever collapse to a zero component.
    """
    n = pk_mul.n
    if not 0 <= v < n:
        raise DomainError(f"value {v} outside [0, {n})")
    while True:
        beta = rand_unit(n, rng)
        if math.gcd((v + beta) % n, n) == 1:
            break
    return PairEncodedValue(
        hi=enc_mul(pk_mul, (v + beta) % n, rng),
        lo=enc_mul(pk_mul, beta, rng),
    )


def pair_decrypt(sk_mul: MulSecretKey, pv: PairEncodedValue) -> int:
    """Test-side decoder: decrypt both legs and subtract."""
    return (dec_mul(sk_mul, pv.hi) - dec_mul(sk_mul, pv.lo)) % sk_mul.n


def pair_scalar_mul(pv: PairEncodedValue, k: int) -> PairEncodedValue:
    """Scale an encoded value by a nonzero scalar: decodes to k*v mod N."""
    if k == 0:
        raise DomainError("scalar 0 not representable; emit a fresh E+(0) instead")
    return PairEncodedValue(hi=scalar_mul_mul(pv.hi, k), lo=scalar_mul_mul(pv.lo, k))


def pair_product_to_add(
    a: PairEncodedValue,
    b: PairEncodedValue,
    switch,
    pk_add: int,
    pk_mul: MulPublicKey,
    rng: random.Random | None = None,
) -> AddCiphertext:
    """Product of two encoded values, landing in the additive domain.

    (va+alpha)(vb+beta) - (va+alpha)beta - alpha(vb+beta) + alpha*beta
    telescopes to va*vb; each cross product is one MUL ciphertext taken
    through the switch, then the four results recombine additively.
    """
    hh = switch.mul_to_add(nest_mul(mul_homomorphic(a.hi, b.hi), pk_add, rng))
    hl = switch.mul_to_add(nest_mul(mul_homomorphic(a.hi, b.lo), pk_add, rng))
    lh = switch.mul_to_add(nest_mul(mul_homomorphic(a.lo, b.hi), pk_add, rng))
    ll = switch.mul_to_add(nest_mul(mul_homomorphic(a.lo, b.lo), pk_add, rng))
    return add_homomorphic(sub_homomorphic(hh, hl), sub_homomorphic(ll, lh))
