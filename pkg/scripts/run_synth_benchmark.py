"""Synthetic benchmark: full pipeline on the default 6-class dataset plus
AF-only and VF-only ablations, timed. Writes summary.json in --out."""
import argparse
import json
import time
from pathlib import Path

from slowtex.cli import main as cli_main

BENCH = ["--scales", "1,0.7071067811865476,0.5", "--n-cubes", "20000",
         "--transition-budget", "20000"]


def run(argv):
    if cli_main([str(a) for a in argv]) != 0:
        raise SystemExit(f"command failed: {' '.join(map(str, argv))}")


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path("bench_out"))
    p.add_argument("--n-splits", type=int, default=5)
    p.add_argument("--noise-sigma", type=float, default=8.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--defaults", action="store_true",
                   help="use the default configuration instead of the benchmark one (slow)")
    return p.parse_args()


def main():
    args = parse_args()
    extra = [] if args.defaults else BENCH
    common = ["--n-splits", args.n_splits, "--threads", args.threads, *extra]
    t0 = time.perf_counter()
    run(["pipeline", "--synth", "--noise-sigma", args.noise_sigma, "--out", args.out, *common])
    summary = {"pipeline_seconds": time.perf_counter() - t0}
    summary["af+vf"] = json.loads((args.out / "report.json").read_text())["mean"]
    for ch in ("af", "vf"):
        rep = args.out / f"report_{ch}.json"
        run(["evaluate", "--manifest", args.out / "data" / "manifest.csv",
             "--filters", args.out / "filters.slf", "--ablate", ch, "--out", rep, *common])
        summary[ch] = json.loads(rep.read_text())["mean"]
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
