"""Wall time against feature count at a fixed worker count."""
from pathlib import Path

from _common import base_parser, dataset, run


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--features", default="240,480,960,1920")
    ap.add_argument("--examples", type=int, default=5000)
    ap.add_argument("--workers", type=int, default=24)
    args = ap.parse_args()
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for m in map(int, args.features.split(",")):
        data = dataset(outdir, args.examples, m, args.seed)
        run(data, outdir / f"feature_scaling_m{m}.csv", args, str(args.workers))


if __name__ == "__main__":
    main()
