"""Shared plumbing for the experiment scripts: make a dataset, call ``dcsync run``."""
import argparse
from pathlib import Path

from dcsync.cli import main


def base_parser(description: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--max-iters", type=int, default=100)
    ap.add_argument("--straggler", default="none")
    ap.add_argument("--protocols", default="bsp,rcwc")
    ap.add_argument("--seed", type=int, default=0)
    return ap


def dataset(outdir: Path, examples: int, features: int, seed: int) -> Path:
    path = outdir / f"synthetic_n{examples}_m{features}_s{seed}.txt"
    if not path.exists():
        main(["gen-data", "--examples", str(examples), "--features", str(features),
              "--noise", "0.1", "--seed", str(seed), "--out", str(path)])
    return path


def run(data: Path, out: Path, args, workers: str, algo: str = "batch", extra=()) -> None:
    argv = ["run", "--data", str(data), "--protocol", args.protocols, "--workers", workers,
            "--algo", algo, "--max-iters", str(args.max_iters), "--tol", "0",
            "--repeats", str(args.repeats), "--straggler", args.straggler,
            "--seed", str(args.seed), "--out", str(out), *extra]
    rc = main(argv)
    if rc:
        raise SystemExit(rc)
    print(f"wrote {out}")
