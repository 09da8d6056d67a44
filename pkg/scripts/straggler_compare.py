"""Every protocol under one straggler model, then the per-protocol trimmed means."""
import csv
from pathlib import Path

from _common import base_parser, dataset, run


def main():
    ap = base_parser(__doc__)
    ap.set_defaults(protocols="bsp,rcwc,delay=1,delay=2,async", straggler="slow:0:20")
    ap.add_argument("--workers", default="8")
    ap.add_argument("--examples", type=int, default=200)
    ap.add_argument("--features", type=int, default=64)
    args = ap.parse_args()
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    data = dataset(outdir, args.examples, args.features, args.seed)
    out = outdir / "straggler_compare.csv"
    run(data, out, args, args.workers)
    with out.open() as f:
        rows = [r for r in csv.DictReader(f) if r["run_index"] == "trimmed_mean"]
    base = {r["workers"]: float(r["wall_ms"]) for r in rows if r["protocol"] == "bsp"}
    for r in rows:
        ref = base.get(r["workers"])
        rel = f"{float(r['wall_ms']) / ref:.3f} x bsp" if ref else ""
        print(f"{r['protocol']:>6} delta={r['delta']:<4} p={r['workers']:<3} "
              f"{float(r['wall_ms']):9.1f} ms  {rel}")


if __name__ == "__main__":
    main()
