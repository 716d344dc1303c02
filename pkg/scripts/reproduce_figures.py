"""Run every recipe in recipes/ and write one output directory per recipe.

    python scripts/reproduce_figures.py [--out results] [--jobs 4] [--only fig6_capacity_vs_buffer]

The throughput-versus-load recipe simulates 28 grid points at 10 x 10^7 slots
and takes hours on one core; pass --horizon/--replications to shorten it.
"""

import argparse
import sys
from pathlib import Path

from manet_capacity.cli import main as cli_main

RECIPES = Path(__file__).resolve().parents[1] / "recipes"
FIGURE_RECIPES = ("fig4_mu_curves", "fig5_validation", "fig6_capacity_vs_buffer", "fig7_capacity_vs_nodes")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    p.add_argument("--out", default="results")
    p.add_argument("--jobs", default="1")
    p.add_argument("--only", action="append", choices=FIGURE_RECIPES)
    p.add_argument("--horizon")
    p.add_argument("--replications")
    args = p.parse_args(argv)

    status = 0
    for name in args.only or FIGURE_RECIPES:
        cmd = "validate" if name == "fig5_validation" else "sweep"
        flags = ["--spec", str(RECIPES / f"{name}.json"), "--out", str(Path(args.out) / name),
                 "--jobs", args.jobs]
        if args.horizon:
            flags += ["--horizon", args.horizon]
        if args.replications:
            flags += ["--replications", args.replications]
        print(f"== {name}", flush=True)
        status = max(status, cli_main([cmd, *flags]))
    return status


if __name__ == "__main__":
    sys.exit(main())
