"""Worker sweep repeated for SGD and mini-batch descent (default batch of 100)."""
from pathlib import Path

from _common import base_parser, dataset, run


def main():
    ap = base_parser(__doc__)
    ap.add_argument("--workers", default="6..40:2")
    ap.add_argument("--examples", type=int, default=5000)
    ap.add_argument("--features", type=int, default=960)
    ap.add_argument("--batch-size", type=int, default=100)
    ap.add_argument("--eta", type=float, default=1e-4)
    args = ap.parse_args()
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    data = dataset(outdir, args.examples, args.features, args.seed)
    for algo in ("sgd", f"minibatch={args.batch_size}"):
        name = algo.split("=")[0]
        run(data, outdir / f"{name}_scaling.csv", args, args.workers, algo,
            extra=["--eta", str(args.eta)])


if __name__ == "__main__":
    main()
