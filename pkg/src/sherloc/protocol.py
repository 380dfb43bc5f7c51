"""Three-party protocol: client, server Y, proxy X.

Server Y holds the encrypted co-occurrence database and runs the scoring
loop; proxy X holds the other multiplicative key share and answers switch
exchanges; the client generates all keys, contributes encrypted matrices,
uploads its encrypted preferences and location, and decrypts the filtered
result. Neither server ever holds both key shares or the additive secret.

A session walks the stages setup -> init -> recommend -> filter -> update ->
closed, forward only (skipping is allowed, e.g. straight to an update).
Messages within a session are totally ordered by "seq" per direction; any
violation aborts the session and destroys its state, leaving the shared
database untouched.

Because the additive key has no server-side share, converting the aggregated
matrix into multiplicative pairs round-trips through the client: Y blinds
each additive entry with a fresh beta, converts both E+(entry+beta) and
E+(beta) locally, and asks the client to strip the outer additive layer
(the client holds that key anyway, having generated it). An INIT_STRIP_REQ
with no entries signals that Y needs nothing further - initialization is
complete.

The same endpoints and byte encoding run over an in-process loopback (for
tests and benchmarks) or TCP sockets (the serve daemons).
"""

from __future__ import annotations

import logging
import math
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import wire
from .errors import (
    CiphertextError,
    DomainError,
    ProtocolError,
    RecommendationAborted,
    SessionAborted,
    SherlocError,
    StageError,
)
from .hilbert import GridCell, xy_to_index
from .numutil import default_rng, hex_to_int, int_to_hex, rand_unit
from .recommender import (
    CoMatrix,
    PreferenceVector,
    check_score_bound,
    cm_delta,
    filter_by_location,
    filter_scores,
    recommend_encrypted,
)
from .she import (
    AddCiphertext,
    AddKeypair,
    KeyShares,
    MulCiphertext,
    MulKeypair,
    MulPublicKey,
    add_homomorphic,
    dec_add,
    enc_add,
    public_from_json,
    public_to_json,
)
from .switching import (
    ExchangeTable,
    MulToAddRound1,
    MulToAddRound2,
    NestedCiphertext,
    PairEncodedValue,
    add_to_mul,
    mul_to_add_proxy,
    mul_to_add_server_round1,
    mul_to_add_server_round2,
    pair_encode,
)

log = logging.getLogger(__name__)

ROLE_CLIENT = "client"
ROLE_SERVER_Y = "server_y"
ROLE_PROXY_X = "proxy_x"

STAGES = ("setup", "init", "recommend", "filter", "update", "closed")

MAX_REFRESH_ATTEMPTS = 8

StateObserver = Callable[[str, str, object], None]


@dataclass
class EncryptedDatabase:
    """The matrix at rest: additive aggregate plus multiplicative pairs.

    Both representations decrypt to the same plain matrix; entries touched by
    updates go into `dirty` and get their pairs rebuilt before the next
    recommendation reads them.
    """

    size: int
    n: int
    cm_add: list[list[AddCiphertext]]
    cm_pairs: list[list[Optional[PairEncodedValue]]]
    dirty: set = field(default_factory=set)


@dataclass
class _RefreshCtx:
    """One outstanding strip round-trip with the client."""

    ed: EncryptedDatabase
    coords: list[tuple[int, int]]
    purpose: str  # "init" or "recommend"
    companions: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)


@dataclass
class _SessionY:
    sid: str
    stage: str = "setup"
    next_recv: int = 0
    next_send: int = 0
    n: int = 0
    pk_mul: Optional[MulPublicKey] = None
    k1: Optional[int] = None
    proxy_addr: str = ""
    contrib: Optional[list[list[AddCiphertext]]] = None
    pending_ed: Optional[EncryptedDatabase] = None
    refresh: Optional[_RefreshCtx] = None
    pv_pairs: Optional[list[PairEncodedValue]] = None
    loc_enc: Optional[AddCiphertext] = None
    radius: int = 0
    switch: Optional["RemoteSwitch"] = None


@dataclass
class _SessionX:
    sid: str
    stage: str = "setup"
    next_recv: int = 0
    next_send: int = 0
    n: int = 0
    registered_here: bool = False


def _check_seq(sess, msg) -> None:
    if msg["seq"] != sess.next_recv:
        raise ProtocolError(f"out-of-order message: seq {msg['seq']}, expected {sess.next_recv}")
    sess.next_recv += 1


def _require_stage(sess, *allowed: str) -> None:
    if sess.stage not in allowed:
        raise StageError(f"message not allowed in stage {sess.stage!r}")


def _parse_add_ct(hexval: str, n: int) -> AddCiphertext:
    v = hex_to_int(hexval)
    if not 0 <= v < n * n:
        raise CiphertextError("additive ciphertext out of range")
    if math.gcd(v, n) != 1:
        raise CiphertextError("additive ciphertext is not a unit")
    return AddCiphertext(v, n)


def _parse_pair(item: dict, n: int) -> PairEncodedValue:
    def leg(vals):
        c1, c2 = hex_to_int(vals[0]), hex_to_int(vals[1])
        if not (1 <= c1 < n and 1 <= c2 < n):
            raise CiphertextError("multiplicative ciphertext component out of range")
        return MulCiphertext(c1, c2, n)

    return PairEncodedValue(hi=leg(item["hi"]), lo=leg(item["lo"]))


class ServerY:
    """Holds the encrypted database; runs scoring with X as switch peer."""

    def __init__(
        self,
        rng: random.Random | None = None,
        preload: tuple[MulPublicKey, int] | None = None,
        proxy_dialer: Callable[[str], wire.Endpoint] | None = None,
        state_observer: StateObserver | None = None,
    ):
        self.rng = rng or default_rng()
        self.preload = preload  # (public key, x1) from a key file
        self.proxy_dialer = proxy_dialer or (lambda addr: wire.dial(addr, "y->x"))
        self.observer = state_observer
        self.ed: Optional[EncryptedDatabase] = None
        self._ed_lock = threading.RLock()
        self.sessions: dict[str, _SessionY] = {}
        self._by_ep: dict[int, set[str]] = {}

    # -- frame plumbing ----------------------------------------------------

    def handle_frame(self, ep: wire.Endpoint, payload: bytes) -> None:
        msg = wire.decode_payload(payload)
        sid = msg["session"]
        sess = self.sessions.get(sid)
        if msg["type"] == wire.MSG_ABORT:
            self._destroy(sid)
            return
        if sess is None:
            sess = _SessionY(sid=sid)
            self.sessions[sid] = sess
            self._by_ep.setdefault(id(ep), set()).add(sid)
        try:
            _check_seq(sess, msg)
            self._dispatch(sess, ep, msg)
        except SherlocError as exc:
            self._abort(ep, sess, exc)
        finally:
            if self.observer:
                current = self.sessions.get(sid)
                self.observer(ROLE_SERVER_Y, current.stage if current else "closed", self)

    def handle_disconnect(self, ep: wire.Endpoint) -> None:
        for sid in self._by_ep.pop(id(ep), set()):
            self._destroy(sid)

    def _dispatch(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        handlers = {
            wire.MSG_SETUP_KEYS: self._on_setup_keys,
            wire.MSG_CM_CONTRIB: self._on_cm_contrib,
            wire.MSG_INIT_STRIP_RESP: self._on_strip_resp,
            wire.MSG_PV_UPLOAD: self._on_pv_upload,
            wire.MSG_LOC_UPLOAD: self._on_loc_upload,
            wire.MSG_CM_DELTA: self._on_cm_delta,
        }
        handler = handlers.get(msg["type"])
        if handler is None:
            raise StageError(f"server Y does not accept {msg['type']}")
        handler(sess, ep, msg)

    def _send(self, sess: _SessionY, ep: wire.Endpoint, mtype: str, body: dict) -> None:
        ep.send_msg(mtype, sess.sid, sess.next_send, body)
        sess.next_send += 1

    def _abort(self, ep: wire.Endpoint, sess: _SessionY, exc: Exception) -> None:
        log.warning("session %s aborted in stage %s: %s", sess.sid, sess.stage, exc)
        try:
            self._send(sess, ep, wire.MSG_ABORT, {"stage": sess.stage, "reason": str(exc)})
        except EOFError:
            pass
        self._destroy(sess.sid)

    def _destroy(self, sid: str) -> None:
        sess = self.sessions.pop(sid, None)
        if sess and sess.switch:
            sess.switch.close()

    # -- handlers ------------------------------------------------------------

    def _on_setup_keys(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "setup")
        pk = public_from_json(msg)
        share = msg.get("share")
        if share is not None:
            if share.get("which") != "x1":
                raise ProtocolError("server Y only accepts the x1 share")
            sess.k1 = hex_to_int(share["value"])
        elif self.preload and self.preload[0].n == pk.n:
            sess.k1 = self.preload[1]
        else:
            raise ProtocolError("no x1 share supplied and none preloaded for this modulus")
        sess.pk_mul = pk
        sess.n = pk.n
        sess.proxy_addr = msg.get("proxy", "")
        sess.stage = "init"

    def _on_cm_contrib(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "init")
        n = sess.n
        size = msg["size"]
        if not isinstance(size, int) or size <= 0:
            raise DomainError("contribution size must be a positive integer")
        rows = [[_parse_add_ct(v, n) for v in row] for row in msg["rows"]]
        if rows and (len(rows) != size or any(len(r) != size for r in rows)):
            raise DomainError("contribution matrix shape does not match its size")
        if sess.contrib is None:
            if rows:
                sess.contrib = rows
            else:
                sess.contrib = [[enc_add(n, 0, self.rng) for _ in range(size)] for _ in range(size)]
        else:
            if len(sess.contrib) != size:
                raise DomainError("contribution size differs from earlier contributions")
            if rows:
                sess.contrib = [
                    [add_homomorphic(a, b) for a, b in zip(arow, brow)]
                    for arow, brow in zip(sess.contrib, rows)
                ]
        if msg.get("final"):
            ed = EncryptedDatabase(
                size=size,
                n=n,
                cm_add=sess.contrib,
                cm_pairs=[[None] * size for _ in range(size)],
            )
            sess.contrib = None
            sess.pending_ed = ed
            coords = [(i, j) for i in range(size) for j in range(size)]
            self._begin_refresh(sess, ep, ed, coords, "init")

    def _begin_refresh(
        self,
        sess: _SessionY,
        ep: wire.Endpoint,
        ed: EncryptedDatabase,
        coords: list[tuple[int, int]],
        purpose: str,
        attempts: dict | None = None,
    ) -> None:
        """Blind each entry with a fresh beta and ask the client to strip.

        Converting E+(entry+beta) and E+(beta) rather than the bare entry
        keeps the aggregate's zero pattern from ever surfacing as a zero
        multiplicative component.
        """
        n, pk_mul = sess.n, sess.pk_mul
        ctx = _RefreshCtx(ed=ed, coords=coords, purpose=purpose, attempts=attempts or {})
        entries = []
        for (i, j) in coords:
            beta = rand_unit(n, self.rng)
            lo_ct = enc_add(n, beta, self.rng)
            hi_ct = add_homomorphic(ed.cm_add[i][j], lo_ct)
            nested = {"hi": add_to_mul(hi_ct, pk_mul, self.rng), "lo": add_to_mul(lo_ct, pk_mul, self.rng)}
            ctx.companions[(i, j)] = {leg: nc.companion for leg, nc in nested.items()}
            for leg, nc in nested.items():
                entries.append(
                    {"i": i, "j": j, "leg": leg, "outer": int_to_hex(nc.outer), "comp": int_to_hex(nc.companion)}
                )
        sess.refresh = ctx
        self._send(sess, ep, wire.MSG_INIT_STRIP_REQ, {"entries": entries})

    def _on_strip_resp(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "init", "recommend")
        ctx = sess.refresh
        if ctx is None:
            raise StageError("no strip round-trip outstanding")
        n = sess.n
        got: dict[tuple[int, int], dict] = {}
        for entry in msg["entries"]:
            i, j, legname = entry["i"], entry["j"], entry["leg"]
            if (i, j) not in ctx.companions or legname not in ("hi", "lo"):
                raise ProtocolError("strip response names an entry that was not requested")
            c1, c2 = hex_to_int(entry["c1"]), hex_to_int(entry["c2"])
            if c2 != ctx.companions[(i, j)][legname]:
                raise ProtocolError("strip response altered a companion component")
            if not 0 <= c1 < n:
                raise CiphertextError("stripped component out of range")
            got.setdefault((i, j), {})[legname] = MulCiphertext(c1, c2, n)
        retry = []
        for (i, j) in ctx.coords:
            legs = got.get((i, j))
            if legs is None or set(legs) != {"hi", "lo"}:
                raise ProtocolError(f"strip response missing entry ({i}, {j})")
            if legs["hi"].c1 == 0 or legs["lo"].c1 == 0:
                count = ctx.attempts.get((i, j), 0) + 1
                if count >= MAX_REFRESH_ATTEMPTS:
                    raise CiphertextError(f"entry ({i}, {j}) kept collapsing to zero while blinding")
                ctx.attempts[(i, j)] = count
                retry.append((i, j))
                continue
            with self._ed_lock:
                ctx.ed.cm_pairs[i][j] = PairEncodedValue(hi=legs["hi"], lo=legs["lo"])
                ctx.ed.dirty.discard((i, j))
        sess.refresh = None
        if retry:
            self._begin_refresh(sess, ep, ctx.ed, retry, ctx.purpose, ctx.attempts)
            return
        if ctx.purpose == "init":
            with self._ed_lock:
                self.ed = ctx.ed
            sess.pending_ed = None
            self._send(sess, ep, wire.MSG_INIT_STRIP_REQ, {"entries": []})
        else:
            self._run_recommend(sess, ep)

    def _on_pv_upload(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "init", "recommend")
        ed = self._require_ed()
        if msg["size"] != ed.size:
            raise DomainError("preference vector size does not match the database")
        sess.pv_pairs = [_parse_pair(item, sess.n) for item in msg["items"]]
        if len(sess.pv_pairs) != ed.size:
            raise DomainError("preference vector item count does not match its size")
        sess.stage = "recommend"
        self._try_run(sess, ep)

    def _on_loc_upload(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "init", "recommend")
        self._require_ed()
        sess.loc_enc = _parse_add_ct(msg["loc"], sess.n)
        radius = msg.get("radius", 0)
        if not isinstance(radius, int) or radius < 0:
            raise DomainError("radius must be a nonnegative integer")
        sess.radius = radius
        sess.stage = "recommend"
        self._try_run(sess, ep)

    def _require_ed(self) -> EncryptedDatabase:
        with self._ed_lock:
            if self.ed is None:
                raise StageError("database not initialized; no recommendation before init completes")
            return self.ed

    def _try_run(self, sess: _SessionY, ep: wire.Endpoint) -> None:
        if sess.pv_pairs is None or sess.loc_enc is None:
            return
        ed = self._require_ed()
        with self._ed_lock:
            dirty = sorted(ed.dirty)
        if dirty:
            self._begin_refresh(sess, ep, ed, dirty, "recommend")
            return
        self._run_recommend(sess, ep)

    def _run_recommend(self, sess: _SessionY, ep: wire.Endpoint) -> None:
        ed = self._require_ed()
        with self._ed_lock:
            if ed.n != sess.n:
                raise ProtocolError("session keys do not match the database modulus")
            snapshot = [list(row) for row in ed.cm_pairs]
        if any(pair is None for row in snapshot for pair in row):
            raise ProtocolError("database pairs incomplete")
        switch = self._get_switch(sess)
        try:
            rl = recommend_encrypted(snapshot, sess.pv_pairs, switch, sess.n, sess.pk_mul, self.rng)
        except RecommendationAborted as exc:
            raise SessionAborted(str(exc), stage=sess.stage) from exc
        sess.stage = "filter"
        triples = filter_by_location(rl, sess.loc_enc, sess.radius, sess.n)
        entries = [
            {"item": i, "score": int_to_hex(score.value), "offset": int_to_hex(off.value)}
            for i, score, off in triples
        ]
        self._send(sess, ep, wire.MSG_RL_RESPONSE, {"entries": entries})
        sess.stage = "update"
        sess.pv_pairs = None
        sess.loc_enc = None

    def _get_switch(self, sess: _SessionY) -> "RemoteSwitch":
        if sess.switch is None:
            ep = self.proxy_dialer(sess.proxy_addr)
            sess.switch = RemoteSwitch(
                ep,
                session=f"{self.rng.getrandbits(64):016x}",
                k1=sess.k1,
                pk_mul=sess.pk_mul,
                rng=self.rng,
            )
            sess.switch.setup()
        return sess.switch

    def _on_cm_delta(self, sess: _SessionY, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "init", "update")
        ed = self._require_ed()
        if msg["size"] != ed.size:
            raise DomainError("delta size does not match the database")
        entries = msg["entries"]
        parsed = []
        for entry in entries:
            i, j = entry["i"], entry["j"]
            if not (0 <= i < ed.size and 0 <= j < ed.size):
                raise DomainError("delta entry out of range")
            parsed.append((i, j, _parse_add_ct(entry["value"], sess.n)))
        with self._ed_lock:
            for i, j, ct in parsed:
                ed.cm_add[i][j] = add_homomorphic(ed.cm_add[i][j], ct)
                ed.dirty.add((i, j))
        sess.stage = "update"


class RemoteSwitch:
    """Server Y's switch driver: one MulToAdd round trip per call, over X."""

    def __init__(self, ep: wire.Endpoint, session: str, k1: int, pk_mul: MulPublicKey, rng: random.Random):
        self.ep = ep
        self.session = session
        self.k1 = k1
        self.pk_mul = pk_mul
        self.rng = rng
        self.table = ExchangeTable()
        self.next_send = 0
        self.next_recv = 0
        self._next_exchange = 0

    def setup(self) -> None:
        self._send(wire.MSG_SETUP_KEYS, public_to_json(self.pk_mul))

    def _send(self, mtype: str, body: dict) -> None:
        self.ep.send_msg(mtype, self.session, self.next_send, body)
        self.next_send += 1

    def _recv(self) -> dict:
        msg = self.ep.recv_msg()
        if msg["session"] != self.session:
            raise ProtocolError("proxy answered with a foreign session id")
        if msg["type"] == wire.MSG_ABORT:
            raise SessionAborted(msg.get("reason", "proxy aborted"), stage=msg.get("stage", "?"))
        if msg["seq"] != self.next_recv:
            raise ProtocolError("proxy response out of order")
        self.next_recv += 1
        return msg

    def mul_to_add(self, nested: NestedCiphertext) -> AddCiphertext:
        eid = self._next_exchange
        self._next_exchange += 1
        round1, state = mul_to_add_server_round1(nested, self.k1, self.pk_mul, self.rng, eid)
        self.table.put(state)
        self._send(
            wire.MSG_M2A_ROUND1,
            {
                "nested_outer": int_to_hex(round1.nested.outer),
                "nested_comp": int_to_hex(round1.nested.companion),
                "c_prime": int_to_hex(round1.c_prime),
                "big_r": int_to_hex(round1.big_r),
                "exchange_id": eid,
            },
        )
        msg = self._recv()
        if msg["type"] != wire.MSG_M2A_ROUND2:
            raise ProtocolError(f"expected M2A_ROUND2, got {msg['type']}")
        n = self.pk_mul.n
        round2 = MulToAddRound2(
            c_double_prime=_parse_add_ct(msg["c_dprime"], n),
            r_prime=hex_to_int(msg["r_prime"]),
            exchange_id=msg["exchange_id"],
        )
        return mul_to_add_server_round2(round2, self.table.pop(msg["exchange_id"]), self.k1)

    def close(self) -> None:
        self.ep.close()


class ProxyX:
    """Answers switch exchanges with its key share; holds no database."""

    def __init__(
        self,
        rng: random.Random | None = None,
        preload: tuple[MulPublicKey, int] | None = None,
        state_observer: StateObserver | None = None,
    ):
        self.rng = rng or default_rng()
        self.observer = state_observer
        self.registry: dict[int, tuple[MulPublicKey, int]] = {}
        if preload:
            self.registry[preload[0].n] = preload
        self.sessions: dict[str, _SessionX] = {}
        self._by_ep: dict[int, set[str]] = {}

    def handle_frame(self, ep: wire.Endpoint, payload: bytes) -> None:
        msg = wire.decode_payload(payload)
        sid = msg["session"]
        sess = self.sessions.get(sid)
        if msg["type"] == wire.MSG_ABORT:
            self._destroy(sid, drop_keys=True)
            return
        if sess is None:
            sess = _SessionX(sid=sid)
            self.sessions[sid] = sess
            self._by_ep.setdefault(id(ep), set()).add(sid)
        try:
            _check_seq(sess, msg)
            if msg["type"] == wire.MSG_SETUP_KEYS:
                self._on_setup_keys(sess, msg)
            elif msg["type"] == wire.MSG_M2A_ROUND1:
                self._on_m2a_round1(sess, ep, msg)
            else:
                raise StageError(f"proxy X does not accept {msg['type']}")
        except SherlocError as exc:
            self._abort(ep, sess, exc)
        finally:
            if self.observer:
                current = self.sessions.get(sid)
                self.observer(ROLE_PROXY_X, current.stage if current else "closed", self)

    def handle_disconnect(self, ep: wire.Endpoint) -> None:
        for sid in self._by_ep.pop(id(ep), set()):
            self._destroy(sid, drop_keys=False)

    def _abort(self, ep: wire.Endpoint, sess: _SessionX, exc: Exception) -> None:
        log.warning("proxy session %s aborted in stage %s: %s", sess.sid, sess.stage, exc)
        try:
            ep.send_msg(wire.MSG_ABORT, sess.sid, sess.next_send, {"stage": sess.stage, "reason": str(exc)})
            sess.next_send += 1
        except EOFError:
            pass
        self._destroy(sess.sid, drop_keys=True)

    def _destroy(self, sid: str, drop_keys: bool) -> None:
        sess = self.sessions.pop(sid, None)
        # "no partial key material retained": an abort tears out whatever the
        # aborting session registered.
        if drop_keys and sess and sess.registered_here:
            self.registry.pop(sess.n, None)

    def _on_setup_keys(self, sess: _SessionX, msg: dict) -> None:
        _require_stage(sess, "setup")
        pk = public_from_json(msg)
        share = msg.get("share")
        if share is not None:
            if share.get("which") != "x0":
                raise ProtocolError("proxy X only accepts the x0 share")
            self.registry[pk.n] = (pk, hex_to_int(share["value"]))
            sess.registered_here = True
        elif pk.n not in self.registry:
            raise ProtocolError("no x0 share registered for this modulus")
        sess.n = pk.n
        sess.stage = "recommend"

    def _on_m2a_round1(self, sess: _SessionX, ep: wire.Endpoint, msg: dict) -> None:
        _require_stage(sess, "recommend")
        pk, k0 = self.registry[sess.n]
        n = pk.n
        outer = hex_to_int(msg["nested_outer"])
        comp = hex_to_int(msg["nested_comp"])
        if not (0 <= outer < n * n and 0 <= comp < n):
            raise CiphertextError("nested ciphertext components out of range")
        round1 = MulToAddRound1(
            nested=NestedCiphertext(outer=outer, companion=comp, n=n),
            c_prime=hex_to_int(msg["c_prime"]),
            big_r=hex_to_int(msg["big_r"]),
            exchange_id=msg["exchange_id"],
        )
        round2 = mul_to_add_proxy(round1, k0)
        ep.send_msg(
            wire.MSG_M2A_ROUND2,
            sess.sid,
            sess.next_send,
            {
                "c_dprime": int_to_hex(round2.c_double_prime.value),
                "r_prime": int_to_hex(round2.r_prime),
                "exchange_id": round2.exchange_id,
            },
        )
        sess.next_send += 1


class ClientSession:
    """Drives the protocol from the key-owning client's side."""

    def __init__(
        self,
        ep_y: wire.Endpoint,
        ep_x: wire.Endpoint,
        add_kp: AddKeypair,
        mul_kp: MulKeypair,
        shares: KeyShares,
        rng: random.Random | None = None,
        proxy_addr: str = "",
    ):
        self.ep_y = ep_y
        self.ep_x = ep_x
        self.add_kp = add_kp
        self.mul_kp = mul_kp
        self.shares = shares
        self.rng = rng or default_rng()
        self.proxy_addr = proxy_addr
        self.sid_y = f"{self.rng.getrandbits(64):016x}"
        self.sid_x = f"{self.rng.getrandbits(64):016x}"
        self._send_seq = {id(ep_y): 0, id(ep_x): 0}
        self._recv_seq = {id(ep_y): 0, id(ep_x): 0}

    # -- message plumbing --------------------------------------------------

    def _send(self, ep: wire.Endpoint, sid: str, mtype: str, body: dict) -> None:
        ep.send_msg(mtype, sid, self._send_seq[id(ep)], body)
        self._send_seq[id(ep)] += 1

    def _recv(self, ep: wire.Endpoint, sid: str) -> dict:
        msg = ep.recv_msg()
        if msg["session"] != sid:
            raise ProtocolError("response carries a foreign session id")
        if msg["type"] == wire.MSG_ABORT:
            raise SessionAborted(msg.get("reason", "peer aborted"), stage=msg.get("stage", "?"))
        if msg["seq"] != self._recv_seq[id(ep)]:
            raise ProtocolError("peer response out of order")
        self._recv_seq[id(ep)] += 1
        return msg

    # -- stages --------------------------------------------------------------

    def setup(self) -> None:
        """Distribute public keys to both servers and one share to each."""
        pub = public_to_json(self.mul_kp.pk_mul)
        try:
            self._send(
                self.ep_x,
                self.sid_x,
                wire.MSG_SETUP_KEYS,
                dict(pub, share={"which": "x0", "value": int_to_hex(self.shares.proxy.k_mul)}),
            )
        except EOFError as exc:
            raise SessionAborted(f"proxy unreachable during setup: {exc}", stage="setup") from exc
        try:
            self._send(
                self.ep_y,
                self.sid_y,
                wire.MSG_SETUP_KEYS,
                dict(
                    pub,
                    share={"which": "x1", "value": int_to_hex(self.shares.server.k_mul)},
                    proxy=self.proxy_addr,
                ),
            )
        except EOFError as exc:
            # No partial key material: tell X to forget what we just registered.
            try:
                self._send(self.ep_x, self.sid_x, wire.MSG_ABORT, {"stage": "setup", "reason": "setup failed"})
            except EOFError:
                pass
            raise SessionAborted(f"server unreachable during setup: {exc}", stage="setup") from exc

    def contribute(self, matrices: list[CoMatrix], size: int, r_max: int = 15) -> None:
        """Initialization: upload encrypted matrices, then serve strip requests."""
        n = self.add_kp.pk_add
        agg = CoMatrix(size)
        for cm in matrices:
            if cm.size != size:
                raise DomainError("contribution size mismatch")
            for i in range(size):
                for j in range(size):
                    agg.rows[i][j] += cm.rows[i][j]
        check_score_bound(size, r_max, agg.max_entry(), n)
        if not matrices:
            self._send(self.ep_y, self.sid_y, wire.MSG_CM_CONTRIB, {"size": size, "rows": [], "final": True})
        for idx, cm in enumerate(matrices):
            rows = [
                [int_to_hex(enc_add(n, v, self.rng).value) for v in row]
                for row in cm.rows
            ]
            self._send(
                self.ep_y,
                self.sid_y,
                wire.MSG_CM_CONTRIB,
                {"size": size, "rows": rows, "final": idx == len(matrices) - 1},
            )
        while True:
            msg = self._recv(self.ep_y, self.sid_y)
            if msg["type"] != wire.MSG_INIT_STRIP_REQ:
                raise ProtocolError(f"unexpected {msg['type']} during initialization")
            if not msg["entries"]:
                return  # empty request: nothing left to strip, init complete
            self._answer_strip(msg)

    def _answer_strip(self, msg: dict) -> None:
        """Strip the outer additive layer off each nested entry."""
        n = self.add_kp.pk_add
        out = []
        for entry in msg["entries"]:
            outer = _parse_add_ct(entry["outer"], n)
            c1 = dec_add(self.add_kp.sk_add, outer, crt=True)
            out.append(
                {"i": entry["i"], "j": entry["j"], "leg": entry["leg"], "c1": int_to_hex(c1), "c2": entry["comp"]}
            )
        self._send(self.ep_y, self.sid_y, wire.MSG_INIT_STRIP_RESP, {"entries": out})

    def recommend(
        self,
        pv: PreferenceVector,
        loc: GridCell,
        order: int,
        radius: int = 1,
        timings: dict | None = None,
    ) -> list[tuple[int, int]]:
        """Full recommendation round: returns (item, score) pairs near loc."""
        d = xy_to_index(loc, order).d  # out-of-grid locations fail before any message
        n = self.add_kp.pk_add
        t0 = time.perf_counter()
        items = []
        for v in pv.values:
            pair = pair_encode(self.mul_kp.pk_mul, v, self.rng)
            items.append(
                {
                    "hi": [int_to_hex(pair.hi.c1), int_to_hex(pair.hi.c2)],
                    "lo": [int_to_hex(pair.lo.c1), int_to_hex(pair.lo.c2)],
                }
            )
        loc_ct = enc_add(n, d, self.rng)
        # Upload through response is the recommendation phase; on the loopback
        # transport the server computes synchronously inside the send call.
        t1 = time.perf_counter()
        self._send(self.ep_y, self.sid_y, wire.MSG_PV_UPLOAD, {"size": pv.size, "items": items})
        self._send(
            self.ep_y, self.sid_y, wire.MSG_LOC_UPLOAD, {"loc": int_to_hex(loc_ct.value), "radius": radius}
        )
        while True:
            msg = self._recv(self.ep_y, self.sid_y)
            if msg["type"] == wire.MSG_INIT_STRIP_REQ:
                self._answer_strip(msg)
                continue
            if msg["type"] == wire.MSG_RL_RESPONSE:
                break
            raise ProtocolError(f"unexpected {msg['type']} while awaiting scores")
        t2 = time.perf_counter()
        scores = []
        offsets = []
        for entry in msg["entries"]:
            scores.append(dec_add(self.add_kp.sk_add, _parse_add_ct(entry["score"], n), crt=True))
            offsets.append(dec_add(self.add_kp.sk_add, _parse_add_ct(entry["offset"], n), crt=True))
        result = filter_scores(scores, offsets, radius, n)
        t3 = time.perf_counter()
        if timings is not None:
            timings["enc"] = t1 - t0
            timings["rec"] = t2 - t1
            timings["dec"] = t3 - t2
        return result

    def update(self, old: CoMatrix, new: CoMatrix) -> None:
        """Send only the changed entries, encrypted, for lazy absorption."""
        n = self.add_kp.pk_add
        delta = cm_delta(old, new, n)
        entries = [
            {"i": i, "j": j, "value": int_to_hex(enc_add(n, v, self.rng).value)}
            for i, row in enumerate(delta)
            for j, v in enumerate(row)
            if v
        ]
        self._send(
            self.ep_y, self.sid_y, wire.MSG_CM_DELTA, {"size": old.size, "entries": entries}
        )

    def close(self) -> None:
        self.ep_y.close()
        self.ep_x.close()


# --- transports -----------------------------------------------------------


class LoopbackHub:
    """Wires all three roles in one process with identical wire semantics.

    Every frame is real encoded bytes; an optional recorder sees them all, in
    deterministic order (everything runs on the caller's thread).
    """

    def __init__(self, server_y: ServerY, proxy_x: ProxyX, recorder: wire.Recorder | None = None):
        self.server_y = server_y
        self.proxy_x = proxy_x
        self.recorder = recorder
        server_y.proxy_dialer = self._dial_proxy

    def _wire(self, a_label: str, b_label: str, role) -> tuple[wire.LoopbackEndpoint, wire.LoopbackEndpoint]:
        a, b = wire.loopback_pair(a_label, b_label)
        a.recorder = self.recorder
        b.recorder = self.recorder
        b.attach_reactor(role.handle_frame)
        return a, b

    def _dial_proxy(self, addr: str) -> wire.Endpoint:
        a, _ = self._wire("y->x", "x->y", self.proxy_x)
        return a

    def client_endpoints(self) -> tuple[wire.Endpoint, wire.Endpoint]:
        to_y, _ = self._wire("c->y", "y->c", self.server_y)
        to_x, _ = self._wire("c->x", "x->c", self.proxy_x)
        return to_y, to_x

    def client_session(self, add_kp, mul_kp, shares, rng=None) -> ClientSession:
        to_y, to_x = self.client_endpoints()
        return ClientSession(to_y, to_x, add_kp, mul_kp, shares, rng=rng, proxy_addr="loopback")


class Daemon:
    """Accept loop serving one role over TCP; one thread per connection."""

    def __init__(self, role, listen_addr: str):
        self.role = role
        host, port = wire.parse_addr(listen_addr)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self._listener.settimeout(0.2)
        self.addr = "%s:%d" % self._listener.getsockname()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._accept_thread: Optional[threading.Thread] = None

    def start(self) -> "Daemon":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(sock,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, sock: socket.socket) -> None:
        ep = wire.SocketEndpoint(sock, label="conn")
        try:
            while not self._stop.is_set():
                try:
                    payload = ep.recv_payload()
                except EOFError:
                    break
                self.role.handle_frame(ep, payload)
        finally:
            self.role.handle_disconnect(ep)
            ep.close()

    def run_forever(self) -> None:
        """Foreground mode for the CLI: blocks until interrupted."""
        try:
            while True:
                self._stop.wait(3600)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2)
