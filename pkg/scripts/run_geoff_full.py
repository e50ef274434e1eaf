"""Run the full GEOFF continual protocol (30 seeds, 8 optimizers) and print a drift summary.

Extra arguments are passed through to ``crossprop run-geoff``, e.g.
``python scripts/run_geoff_full.py --seeds 0,1,2 --parallel 4 --out results/geoff``.
"""
import json
import sys
from pathlib import Path

from crossprop.cli import main


def summarize(out: Path):
    meta = json.loads((out / "metadata.json").read_text())
    print(f"{'optimizer':26s} {'final U drift':>14s} {'final W drift':>14s}")
    for label, runs in meta["runs"].items():
        u = sum(r["final_u_drift"] for r in runs) / len(runs)
        w = sum(r["final_w_drift"] for r in runs) / len(runs)
        print(f"{label:26s} {u:14.3f} {w:14.3f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/geoff"]
    code = main(["run-geoff", "--config", "paper-geoff"] + args)
    if code == 0:
        summarize(Path(args[args.index("--out") + 1]))
    sys.exit(code)
