"""Command-line driver: gen-data, run, check, oracle."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from dcsync.engine import RunConfig, StragglerModel, run_parallel, trimmed_mean
from dcsync.history import (CHECKERS, EnumerationTooLarge, HistoryParseError, MalformedHistory,
                            read_history, theorem_report, write_history)
from dcsync.modeldb import ConfigError
from dcsync.sync import ProtocolConfig
from dcsync.workloads import (GdConfig, SparseFormatError, gen_synthetic, load_sparse,
                              save_sparse)

CSV_COLUMNS = ["protocol", "delta", "workers", "features", "examples", "algorithm",
               "batch_size", "run_index", "iterations", "wall_ms", "final_loss"]


class UsageError(Exception):
    pass


def parse_int_list(text: str) -> list[int]:
    """``8``, ``2,4,8``, ``6..40`` or ``6..40:2`` (inclusive ranges)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, _, rest = part.partition("..")
            hi, _, step = rest.partition(":")
            out.extend(range(int(lo), int(hi) + 1, int(step) if step else 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty list {text!r}")
    return out


def parse_algo(text: str) -> tuple[str, int | None]:
    if text in ("batch", "sgd"):
        return text, None
    if text.startswith("minibatch="):
        return "minibatch", int(text.split("=", 1)[1])
    raise ValueError(f"unknown algorithm {text!r}; use batch, sgd or minibatch=B")


def _delta_label(proto: ProtocolConfig) -> str:
    d = proto.effective_delta
    return "inf" if d is None else str(d)


def cmd_gen_data(args) -> int:
    d, _ = gen_synthetic(args.examples, args.features, args.noise, args.seed)
    try:
        save_sparse(d, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {d.num_examples} examples x {d.num_features} features to {args.out}")
    return 0


def _validate_run_args(args) -> list[str]:
    problems = []
    if args.repeats < 1:
        problems.append("--repeats must be >= 1")
    elif 1 < args.repeats < 5:
        problems.append("--repeats must be 1 or >= 5 (the summary drops 2 fastest and 2 slowest)")
    if args.max_iters < 1:
        problems.append("--max-iters must be >= 1")
    if args.tol < 0:
        problems.append("--tol must be >= 0")
    if args.eta is not None and args.eta <= 0:
        problems.append("--eta must be > 0")
    if args.lam < 0:
        problems.append("--lambda must be >= 0")
    return problems


def cmd_run(args) -> int:
    problems = _validate_run_args(args)
    try:
        protocols = [ProtocolConfig.parse(p) for p in args.protocol.split(",")]
        workers = parse_int_list(args.workers)
        algo, batch_size = parse_algo(args.algo)
        straggler = StragglerModel.parse(args.straggler)
    except ValueError as exc:
        problems.append(str(exc))
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 2
    try:
        data = load_sparse(args.data)
    except (OSError, SparseFormatError) as exc:
        print(f"error: {args.data}: {exc}", file=sys.stderr)
        return 2
    try:
        gd = GdConfig(algorithm=algo, batch_size=batch_size, eta=args.eta, lam=args.lam,
                      max_iters=args.max_iters, tol=args.tol, sample_seed=args.sample_seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    shown_batch = {"batch": data.num_examples, "sgd": 1}.get(algo, batch_size)

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(CSV_COLUMNS)
        for proto in protocols:
            for p in workers:
                cfg = RunConfig(dataset=data, gd=gd, workers=p, protocol=proto,
                                straggler=straggler, record_history=bool(args.record_history),
                                timing_seed=args.seed, watchdog_s=args.watchdog)
                try:
                    cfg.validate()
                except ConfigError as exc:
                    print(f"error: {exc}", file=sys.stderr)
                    return 2
                base = [str(proto.kind.value), _delta_label(proto), p, data.num_features,
                        data.num_examples, algo, shown_batch]
                rows = []
                for r in range(args.repeats):
                    cfg.timing_seed = args.seed + r
                    res = run_parallel(cfg)
                    rows.append((res.iterations, res.wall_ms, res.final_loss))
                    writer.writerow(base + [r, res.iterations, f"{res.wall_ms:.3f}",
                                            repr(res.final_loss)])
                    if args.record_history:
                        write_history(res.history, _history_path(args.record_history, proto, p, r,
                                                                  len(protocols) * len(workers) * args.repeats))
                if args.repeats >= 5:
                    its, walls, losses = zip(*rows)
                    writer.writerow(base + ["trimmed_mean", f"{trimmed_mean(its):g}",
                                            f"{trimmed_mean(walls):.3f}", repr(trimmed_mean(losses))])
                out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _history_path(base: str, proto: ProtocolConfig, p: int, r: int, total: int) -> Path:
    if total == 1:
        return Path(base)
    path = Path(base)
    tag = str(proto).replace("=", "")
    return path.with_name(f"{path.stem}.{tag}.p{p}.r{r}{path.suffix}")


def cmd_check(args) -> int:
    try:
        h = read_history(args.history, args.workers)
        verdict = CHECKERS[args.mode](h, args.delta)
    except (OSError, HistoryParseError, MalformedHistory) as exc:
        print(f"error: {args.history}: {exc}", file=sys.stderr)
        return 2
    print(verdict.describe())
    return 0 if verdict.valid else 1


def cmd_oracle(args) -> int:
    try:
        rep = theorem_report(args.workers, args.iters, relaxed=args.relaxed)
    except EnumerationTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    mode = "relaxed" if args.relaxed else "strict"
    print(f"workers={rep.workers} iters={rep.iters} program-order={mode}")
    print(f"histories           {rep.total}")
    print(f"bsp-valid           {rep.bsp_valid}")
    print(f"rcwc-valid          {rep.rcwc_valid}")
    print(f"sequential-valid    {rep.sequential_valid}")
    print(f"rcwc-valid, bsp-invalid   {rep.rcwc_not_bsp}")
    print(f"rcwc-invalid              {rep.outside_rcwc}")
    checks = [
        ("bsp-valid => sequential-valid", rep.bsp_not_sequential),
        ("rcwc-valid => sequential-valid", rep.rcwc_not_sequential),
        ("bsp-valid => rcwc-valid", rep.bsp_not_rcwc),
        ("rcwc(d)-valid => rcwc(d+1)-valid", rep.delta_not_monotone),
    ]
    for name, bad in checks:
        status = "holds" if not bad else f"FAILS ({len(bad)} counterexamples, e.g. {bad[0]})"
        print(f"{name}: {status}")
    if rep.rcwc_not_bsp_example is not None:
        print(f"separating witness (bsp-invalid, rcwc-valid): {rep.rcwc_not_bsp_example}")
    for name, found in rep.golden_found.items():
        print(f"{name} in enumeration: {'yes' if found else 'no'}")
    return 0 if rep.holds else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic linear-regression dataset")
    g.add_argument("--examples", type=int, required=True)
    g.add_argument("--features", type=int, required=True)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="train with p workers and report timings as CSV")
    r.add_argument("--data", required=True)
    r.add_argument("--protocol", default="rcwc", help="bsp | rcwc | delay=D | async (comma list ok)")
    r.add_argument("--workers", default="4", help="N, N,M,... or LO..HI[:STEP]")
    r.add_argument("--algo", default="batch", help="batch | sgd | minibatch=B")
    r.add_argument("--eta", type=float, default=None, help="learning rate (default 1e-3/n)")
    r.add_argument("--lambda", dest="lam", type=float, default=0.0)
    r.add_argument("--max-iters", type=int, default=100)
    r.add_argument("--tol", type=float, default=1e-8)
    r.add_argument("--repeats", type=int, default=1)
    r.add_argument("--straggler", default="none", help="none | uniform:LO:HI | slow:WORKER:MS")
    r.add_argument("--record-history", metavar="PATH", default=None)
    r.add_argument("--seed", type=int, default=0, help="timing seed of the first repeat")
    r.add_argument("--sample-seed", type=int, default=0)
    r.add_argument("--watchdog", type=float, default=30.0, help="seconds without progress before abort")
    r.add_argument("--out", default=None, help="CSV path (default stdout)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="check a history log")
    c.add_argument("--history", required=True)
    c.add_argument("--mode", choices=sorted(CHECKERS), required=True)
    c.add_argument("--delta", type=int, default=0)
    c.add_argument("--workers", type=int, default=None, help="worker count (default: inferred)")
    c.set_defaults(func=cmd_check)

    o = sub.add_parser("oracle", help="enumerate interleavings and verify the class inclusions")
    o.add_argument("--workers", type=int, required=True)
    o.add_argument("--iters", type=int, required=True)
    o.add_argument("--relaxed", action="store_true",
                   help="let a worker's next-iteration reads overtake its write")
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "delta", 0) < 0:
        print("error: --delta must be >= 0", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
