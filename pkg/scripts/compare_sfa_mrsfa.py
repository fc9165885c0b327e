"""Accuracy of MR-SFA and plain SFA filters on the synthetic benchmark at
several pixel-noise levels, and over a sweep of lambda."""
import argparse
import json
from pathlib import Path

from slowtex.cli import main as cli_main

BENCH = ["--scales", "1,0.7071067811865476,0.5", "--n-cubes", "20000",
         "--transition-budget", "20000"]


def run(argv):
    if cli_main([str(a) for a in argv]) != 0:
        raise SystemExit(f"command failed: {' '.join(map(str, argv))}")


def accuracy(data, out, n_splits, *flags):
    run(["pipeline", "--data", data, "--out", out, "--n-splits", n_splits, *BENCH, *flags])
    return json.loads((out / "report.json").read_text())["mean"]


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path("compare_out"))
    p.add_argument("--sigmas", type=float, nargs="+", default=[20.0])
    p.add_argument("--lambdas", type=float, nargs="*", default=[],
                   help="extra MR-SFA lambda values to sweep")
    p.add_argument("--n-splits", type=int, default=5)
    return p.parse_args()


def main():
    args = parse_args()
    rows = []
    for sigma in args.sigmas:
        data_dir = args.out / f"data_sigma{sigma:g}"
        run(["synth-gen", "--out", data_dir, "--noise-sigma", sigma])
        data = data_dir / "manifest.csv"
        row = {"sigma": sigma,
               "mrsfa": accuracy(data, args.out / f"mrsfa_{sigma:g}", args.n_splits),
               "sfa": accuracy(data, args.out / f"sfa_{sigma:g}", args.n_splits,
                               "--method", "sfa")}
        for lam in args.lambdas:
            row[f"mrsfa_lam{lam:g}"] = accuracy(data, args.out / f"lam{lam:g}_{sigma:g}",
                                                args.n_splits, "--lam", lam)
        rows.append(row)
        print(json.dumps(row))
    (args.out / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
