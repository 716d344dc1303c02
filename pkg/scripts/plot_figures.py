"""Plot the CSVs written by reproduce_figures.py (needs the ``plots`` extra).

    python scripts/plot_figures.py [--results results]
"""

import argparse
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from manet_capacity.analytic import INFINITE_BUFFER_CAPACITY  # noqa: E402
from manet_capacity.experiments import read_csv  # noqa: E402


def _series(rows, key, x, y):
    out = defaultdict(list)
    for r in rows:
        if r[y] != "":
            out[key(r)].append((float(r[x]), float(r[y])))
    return {k: sorted(v) for k, v in out.items()}


def plot_mu_curves(rows, ax):
    for b, pts in _series(rows, lambda r: r["B"], "lambda", "mu_s_analytic").items():
        ax.plot(*zip(*pts), label=f"mu_S, B={b}")
    lim = max(float(r["lambda"]) for r in rows)
    ax.plot([0, lim], [0, lim], "k--", lw=0.8, label="mu_S = lambda")
    ax.set(xlabel="lambda (packets/slot)", ylabel="mu_S", title="Local-queue service rate")


def plot_validation(rows, ax):
    for mob, pts in _series(rows, lambda r: r["mobility"], "rho", "throughput_sim_mean").items():
        ax.plot(*zip(*pts), "o-", label=f"simulated, {mob}")
    tc = float(rows[0]["tc_analytic"])
    rhos = sorted({float(r["rho"]) for r in rows})
    ax.plot(rhos, [min(r, 1.0) * tc for r in rhos], "k--", label="min(rho, 1) T_c")
    ax.set(xlabel="rho = lambda / T_c", ylabel="throughput per node", title="Throughput versus load")


def plot_vs_buffer(rows, ax):
    for n, pts in _series(rows, lambda r: r["N"], "B", "tc_analytic").items():
        ax.plot(*zip(*pts), "o-", ms=3, label=f"N={n}")
    ax.set(xlabel="relay buffer B", ylabel="T_c", title="Capacity versus buffer size")


def plot_vs_nodes(rows, ax):
    for b, pts in _series(rows, lambda r: r["B"], "N", "tc_analytic").items():
        ax.plot(*zip(*pts), "o-", label=f"B={b}")
    ax.axhline(INFINITE_BUFFER_CAPACITY, color="k", ls=":", label="unbounded buffers")
    ax.set(xscale="log", xlabel="N (C = N/2)", ylabel="T_c", title="Capacity versus network size")


PLOTS = {
    "fig4_mu_curves": plot_mu_curves,
    "fig5_validation": plot_validation,
    "fig6_capacity_vs_buffer": plot_vs_buffer,
    "fig7_capacity_vs_nodes": plot_vs_nodes,
}


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--results", default="results")
    args = p.parse_args(argv)
    for name, fn in PLOTS.items():
        csv_path = Path(args.results) / name / "results.csv"
        if not csv_path.exists():
            print(f"skip {name}: {csv_path} missing")
            continue
        fig, ax = plt.subplots(figsize=(5, 3.6))
        fn(read_csv(csv_path), ax)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(csv_path.with_suffix(".png"), dpi=150)
        plt.close(fig)
        print(f"wrote {csv_path.with_suffix('.png')}")


if __name__ == "__main__":
    main()
