"""Command-line front end.

Subcommands: keygen, serve, client {init,recommend,update}, gen-data, bench.
Exit codes: 0 success, 2 usage error, 3 protocol abort, 4 oracle mismatch.
The key-file directory can also come from the SHERLOC_KEYS environment
variable when --keys is omitted.
"""

from __future__ import annotations

import argparse
import os
import random
import sys

from . import bench as bench_mod
from . import datagen, protocol, wire
from .errors import DomainError, OracleMismatch, ProtocolError, SessionAborted, SherlocError
from .hilbert import GridCell
from .recommender import build_cm, load_cm_csv, load_pv_csv
from .she import (
    PROXY_SHARE_FILE,
    SERVER_SHARE_FILE,
    KeyGenParams,
    keygen,
    load_key_files,
    load_share_file,
    save_key_files,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORT = 3
EXIT_ORACLE = 4


def _key_dir(args) -> str:
    key_dir = args.keys or os.environ.get("SHERLOC_KEYS")
    if not key_dir:
        raise DomainError("no key directory: pass --keys or set SHERLOC_KEYS")
    return key_dir


def _rng(args) -> random.Random | None:
    return random.Random(args.seed) if args.seed is not None else None


def cmd_keygen(args) -> int:
    add_kp, mul_kp, shares = keygen(KeyGenParams(security_bits=args.bits, rng_seed=args.seed))
    save_key_files(args.out_dir, add_kp, mul_kp, shares)
    print(f"wrote key files to {args.out_dir} (|N| = {add_kp.pk_add.bit_length()} bits)")
    return EXIT_OK


def cmd_serve(args) -> int:
    preload = None
    if args.keys:
        share_file = SERVER_SHARE_FILE if args.role == "y" else PROXY_SHARE_FILE
        preload = load_share_file(args.keys, share_file)
    if args.role == "y":
        role = protocol.ServerY(rng=_rng(args), preload=preload)
    else:
        role = protocol.ProxyX(rng=_rng(args), preload=preload)
    daemon = protocol.Daemon(role, args.listen)
    print(f"serving role {args.role} on {daemon.addr}", flush=True)
    daemon.start()
    daemon.run_forever()
    return EXIT_OK


def _client_session(args) -> protocol.ClientSession:
    add_kp, mul_kp, shares = load_key_files(_key_dir(args))
    ep_y = wire.dial(args.server, "c->y")
    ep_x = wire.dial(args.proxy, "c->x")
    session = protocol.ClientSession(
        ep_y, ep_x, add_kp, mul_kp, shares, rng=_rng(args), proxy_addr=args.proxy
    )
    session.setup()
    return session


def cmd_client_init(args) -> int:
    lists = datagen.load_users(args.data)
    meta = datagen.load_meta(args.data)
    size = meta["size"]
    matrices = [build_cm({u: items}, size) for u, items in sorted(lists.items())]
    session = _client_session(args)
    session.contribute(matrices, size, r_max=meta.get("r_max", 15))
    for ep in (session.ep_y, session.ep_x):
        if isinstance(ep, wire.SocketEndpoint):
            ep.finish_write()
    session.close()
    print(f"initialized encrypted database: size {size}, {len(matrices)} contribution(s)")
    return EXIT_OK


def cmd_client_recommend(args) -> int:
    pv = load_pv_csv(args.pv)
    try:
        x, y = (int(v) for v in args.loc.split(","))
    except ValueError:
        raise DomainError(f"--loc wants X,Y integers, got {args.loc!r}") from None
    session = _client_session(args)
    result = session.recommend(pv, GridCell(x, y), order=args.order, radius=args.radius)
    session.close()
    if not result:
        print("no items within radius")
    for item, score in result:
        print(f"item {item}: score {score}")
    return EXIT_OK


def cmd_client_update(args) -> int:
    old = load_cm_csv(args.old_cm)
    new = load_cm_csv(args.new_cm)
    session = _client_session(args)
    session.update(old, new)
    if isinstance(session.ep_y, wire.SocketEndpoint):
        session.ep_y.finish_write()
    session.close()
    changed = sum(
        1 for orow, nrow in zip(old.rows, new.rows) for ov, nv in zip(orow, nrow) if ov != nv
    )
    print(f"sent update: {changed} changed entr{'y' if changed == 1 else 'ies'}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    ds = datagen.generate(args.pois, args.users, args.seed)
    datagen.write_dataset(args.out, ds)
    print(f"wrote dataset to {args.out}: {args.pois} items on an order-{ds.order} curve, {args.users} users")
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(v) for v in args.sizes.split(",")] if args.sizes else None
    cfg = bench_mod.BenchConfig(
        sizes=sizes or list(bench_mod.DEFAULT_SIZES),
        security_bits=args.bits,
        repetitions=args.reps,
        fmt=args.format,
        seed=args.seed if args.seed is not None else 1,
        with_fhe_baseline=args.with_fhe_baseline,
    )
    rows = bench_mod.run_bench(cfg)
    text = bench_mod.format_rows(rows, cfg.fmt, cfg.with_fhe_baseline)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {cfg.fmt} results to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="sherloc", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate key files")
    p.add_argument("--bits", type=int, default=512, help="per-prime bits (default 512)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("serve", help="run a server role")
    p.add_argument("--role", choices=("y", "proxy"), required=True)
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--keys", default=None, help="preload this role's share file from DIR")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    pc = sub.add_parser("client", help="client operations")
    csub = pc.add_subparsers(dest="client_command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--server", required=True, metavar="HOST:PORT")
    common.add_argument("--proxy", required=True, metavar="HOST:PORT")
    common.add_argument("--keys", default=None, help="key directory (or SHERLOC_KEYS)")
    common.add_argument("--seed", type=int, default=None)

    p = csub.add_parser("init", parents=[common], help="build the encrypted database")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.set_defaults(func=cmd_client_init)

    p = csub.add_parser("recommend", parents=[common], help="fetch nearby recommendations")
    p.add_argument("--pv", required=True, help="preference vector CSV")
    p.add_argument("--loc", required=True, metavar="X,Y")
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--order", type=int, default=datagen.DEFAULT_ORDER, help="curve order")
    p.set_defaults(func=cmd_client_recommend)

    p = csub.add_parser("update", parents=[common], help="send a matrix delta")
    p.add_argument("--old-cm", required=True)
    p.add_argument("--new-cm", required=True)
    p.set_defaults(func=cmd_client_update)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--pois", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("bench", help="run the benchmark suite")
    p.add_argument("--sizes", default=None, metavar="CSV", help="item counts (default 10..100)")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--out", default=None)
    p.add_argument("--bits", type=int, default=512)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--with-fhe-baseline", action="store_true",
                   help="append externally published FHE totals for comparison")
    p.set_defaults(func=cmd_bench)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (SessionAborted, ProtocolError) as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SherlocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
