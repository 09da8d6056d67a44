"""Wall time against worker count on a fixed synthetic dataset.

    python scripts/worker_scaling.py --workers 6..40:2 --examples 5000 --features 960
"""
from pathlib import Path

from _common import base_parser, dataset, run


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--workers", default="6..40:2")
    ap.add_argument("--examples", type=int, default=5000)
    ap.add_argument("--features", type=int, default=960)
    args = ap.parse_args()
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    data = dataset(outdir, args.examples, args.features, args.seed)
    run(data, outdir / "worker_scaling.csv", args, args.workers)


if __name__ == "__main__":
    main()
