"""
Command-line front ends.

``lcaas`` works on a ledger directory offline (init, ingest, verify) or
serves it over HTTP. ``bench`` drives the load experiments.

Exit codes for ``lcaas verify``: 0 ok, 1 integrity failure, 2 digest not
found. Operational errors (locked ledger, bad directory) exit with 3.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .chain import compute_hash, is_hash
from .ledger import Ledger, LedgerError, audit_ledger, verify_digest
from .store import LedgerLocked, LedgerStore, StoreError

EXIT_OK, EXIT_INTEGRITY, EXIT_NOT_FOUND, EXIT_ERROR = 0, 1, 2, 3


def _emit(obj, as_json: bool, text: str) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True) if as_json else text)


def cmd_init(args) -> int:
    root = Path(args.root)
    if root.exists() and any(p.name != ".lock" for p in root.iterdir()):
        print(f"error: {root} is not empty", file=sys.stderr)
        return EXIT_ERROR
    try:
        with Ledger.create(root, args.n):
            pass
    except (StoreError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"initialized ledger at {root} with n={args.n}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    try:
        ledger = Ledger.open(args.root)
    except (StoreError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    results = []
    status = EXIT_OK
    with ledger:
        for name in args.files:
            try:
                body = Path(name).read_bytes()
            except OSError as exc:
                print(f"error: io_failure: {name}: {exc.strerror}", file=sys.stderr)
                status = EXIT_ERROR
                break
            resp = ledger.submit_digest(compute_hash(body))
            results.append({"file": name, **resp.to_dict()})
            if not args.json:
                extra = f" sealed -> SB {resp.sb_index}" if resp.chain_state == "sealed" else ""
                print(f"{resp.digest} {name} -> chain {resp.chain_id} block {resp.block_index}{extra}")
    if args.json:
        print(json.dumps(results, indent=2))
    return status


def _check_unlocked(root: Path) -> None:
    # a verify must not race a live writer; take the lock briefly to prove none exists
    LedgerStore(root).close()


def cmd_verify(args) -> int:
    root = Path(args.root)
    try:
        if not LedgerStore.is_ledger(root):
            raise StoreError("no_ledger", str(root))
        _check_unlocked(root)
        if args.digest is not None:
            if not is_hash(args.digest):
                print("error: --digest must be 64 lowercase hex characters", file=sys.stderr)
                return EXIT_ERROR
            result = verify_digest(root, args.digest)
            if result is None:
                _emit({"digest": args.digest, "found": False}, args.json,
                      f"not_found: {args.digest}")
                return EXIT_NOT_FOUND
            proof = result["proof"]
            _emit(result, args.json,
                  f"{'ok' if result['ok'] else 'FAILED'}: digest in chain {proof['chain_id']} "
                  f"block {proof['block_index']}, SB {proof['sb_index']}")
            return EXIT_OK if result["ok"] else EXIT_INTEGRITY
        report = audit_ledger(root)
    except LedgerLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.json:
        _emit(report, True, "")
    elif report["ok"]:
        print(f"ok: {len(report['chains'])} circled chains, "
              f"{report['super_chain']['hash_count'] - 1} super blocks, "
              f"{report['hash_count']} hash computations")
    else:
        print("FAILED")
        for p in report["parse_problems"]:
            print(f"  {p['file']} line {p['line']}: {p['reason']}")
        for f in report["failures"]:
            where = "superchain" if f["scope"] == "super" else f"chain {f['scope']}"
            print(f"  {where} block {f['index']}: {f['reason']}")
        for m in report["mismatches"]:
            print(f"  chain {m['chain_id']}: {m['reason']}")
    return EXIT_OK if report["ok"] else EXIT_INTEGRITY


def cmd_serve(args) -> int:
    from .api import serve
    from .config import ServiceConfig

    config = ServiceConfig.load(args.config).with_overrides(
        ledger_root=args.root, capacity_n=args.n, listen_address=args.listen,
        gas_price_gwei=args.gas, anchor_backend=args.anchor, rng_seed=args.seed,
    )
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    serve(config)
    return EXIT_OK


def lcaas_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcaas", description="Tamper-evident log ledger.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a new ledger directory")
    p.add_argument("--root", required=True)
    p.add_argument("--n", type=int, required=True, help="circled chain capacity")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("ingest", help="hash files and append their digests")
    p.add_argument("--root", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("verify", help="audit the ledger or prove one digest")
    p.add_argument("--root", required=True)
    p.add_argument("--digest")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--root")
    p.add_argument("--n", type=int)
    p.add_argument("--gas", type=int)
    p.add_argument("--anchor", choices=["simulated", "none"])
    p.add_argument("--listen")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = lcaas_parser().parse_args(argv)
    if args.command != "serve":
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    return args.func(args)


# -- bench --------------------------------------------------------------------


def cmd_bench_run(args) -> int:
    from . import bench

    if args.matrix:
        cells = bench.matrix(args.seed)
    else:
        missing = [f for f in ("tps", "n", "gas") if getattr(args, f) is None]
        if missing:
            print(f"error: without --matrix, --{', --'.join(missing)} required", file=sys.stderr)
            return EXIT_ERROR
        count = args.count or bench.default_file_count(args.tps)
        cells = [bench.ExperimentConfig(args.tps, args.n, args.gas, count, seed=args.seed)]

    kwargs = {}
    if args.clock == "wall":
        kwargs = {"url": args.url, "receipt_timeout_s": args.receipt_timeout}

    t0 = time.perf_counter()

    def progress(report):
        if "error" in report:
            print(f"{report['cell']}: FAILED {report['error']}", file=sys.stderr)
        else:
            print(f"{report['cell']}: {report['sb_count']} SBs, mean "
                  f"{(report['mean_ms'] or 0) / 1000:.1f}s, p95 {(report['p95_ms'] or 0) / 1000:.1f}s",
                  file=sys.stderr)

    reports = bench.run_matrix(args.seed, args.clock, cells, progress=progress, **kwargs)
    analysis = None
    try:
        analysis = bench.analyze(reports)
        analysis["elapsed_s"] = time.perf_counter() - t0
    except bench.BenchError as exc:
        print(f"note: analysis skipped ({exc})", file=sys.stderr)
    written = bench.write_outputs(args.out, reports, analysis)
    print(f"wrote {len(written)} files to {args.out} in {time.perf_counter() - t0:.1f}s")
    failed = [r for r in reports if "error" in r or r.get("rejected")]
    return EXIT_INTEGRITY if failed else EXIT_OK


def bench_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="LCaaS load experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run")
    p.add_argument("--matrix", action="store_true", help="run all 36 factor cells")
    p.add_argument("--tps", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--gas", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clock", choices=["sim", "wall"], default="sim")
    p.add_argument("--url", help="service URL for --clock wall (default: start one locally)")
    p.add_argument("--receipt-timeout", type=float, default=60.0,
                   help="seconds to wait for anchor receipts under --clock wall")
    p.add_argument("--out", default="bench-out")
    p.set_defaults(func=cmd_bench_run)
    return parser


def bench_main(argv=None) -> int:
    args = bench_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
