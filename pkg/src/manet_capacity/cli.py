"""Command-line front end: ``manet-capacity {analyze,simulate,sweep,validate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 validation failure,
3 internal or solver error. Output directories default to
``$MANET_CAPACITY_OUT`` (or ``./results``) when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analytic import (NetworkConfig, contact_probabilities, local_queue_delay, solve_fixed_point,
                       throughput_capacity)
from .errors import ConfigError, SolverError, SpecFileError, UnstableLoadError
from .simulator import SimConfig, run, write_trace

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2, 3
OUT_ENV = "MANET_CAPACITY_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _g(x):
    return f"{x:.6g}"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "results"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _network(args) -> NetworkConfig:
    return NetworkConfig(args.nodes, args.cells, args.buffer)


def _command(argv):
    return "manet-capacity " + " ".join(shlex.quote(a) for a in argv)


def _add_network_flags(p):
    p.add_argument("--nodes", type=int, required=True, help="number of nodes N (even, >= 4)")
    p.add_argument("--cells", type=int, required=True, help="number of cells C")
    p.add_argument("--buffer", type=int, required=True, help="relay buffer size B in packets")


# --------------------------------------------------------------------------
# subcommands

def cmd_analyze(args, argv):
    net = _network(args)
    cp = contact_probabilities(net)
    resolved = {"network": vars(net), "lambda": args.lam, "capacity": args.capacity}
    out = None
    if args.out:
        out = _out_dir(args)
        ex.write_manifest(out / "manifest.json", None, _command(argv), "running",
                          ["analysis.json"], {"resolved": resolved})

    report = {"N": net.n_nodes, "C": net.n_cells, "B": net.buffer_size,
              "p": cp.p, "q": cp.q, "p_sd": cp.p_sd, "p_sr": cp.p_sr, "p_rd": cp.p_rd}
    if args.capacity:
        res = throughput_capacity(net)
        sol = res.solution_at_capacity
        report.update(throughput_capacity=res.throughput_capacity, p_full=sol.p_full,
                      lambda_tilde=sol.lambda_tilde)
        lines = [f"N={net.n_nodes} C={net.n_cells} B={net.buffer_size}",
                 f"p_sd = {_g(cp.p_sd)}  p_sr = p_rd = {_g(cp.p_sr)}",
                 f"T_c = {_g(res.throughput_capacity)} packets/slot",
                 f"P_B at capacity = {_g(sol.p_full)}"]
    else:
        sol = solve_fixed_point(net, args.lam)
        delay = local_queue_delay(net, args.lam)
        report.update(**{"lambda": sol.lam}, p_full=sol.p_full, mu_s=sol.mu_s,
                      lambda_tilde=sol.lambda_tilde, delay=delay,
                      relay_service_rates=list(sol.relay_model.service_rates),
                      relay_distribution=list(sol.relay_model.limiting_distribution))
        lines = [f"N={net.n_nodes} C={net.n_cells} B={net.buffer_size} lambda={_g(sol.lam)}",
                 f"P_B = {_g(sol.p_full)}",
                 f"mu_S = {_g(sol.mu_s)}",
                 f"lambda_tilde = {_g(sol.lambda_tilde)}",
                 f"E[D_S] = {_g(delay)} slots",
                 "pi = " + " ".join(_g(x) for x in sol.relay_model.limiting_distribution)]
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print("\n".join(lines))
    if out:
        (out / "analysis.json").write_text(json.dumps(report, indent=2) + "\n")
        ex.write_manifest(out / "manifest.json", None, _command(argv), "complete",
                          ["analysis.json"], {"resolved": resolved})
    return EXIT_OK


def cmd_simulate(args, argv):
    net = _network(args)
    if args.rho is not None:
        lam = args.rho * throughput_capacity(net).throughput_capacity
    else:
        lam = args.lam
    base = SimConfig(net, lam, args.mobility, args.slots, args.warmup, args.seed)
    out = _out_dir(args)
    outputs = ["stats.json"] + (["trace.ndjson"] if args.trace else [])
    resolved = {**base.to_dict(), "replications": args.replications, "rho": args.rho}
    ex.write_manifest(out / "manifest.json", None, _command(argv), "running", outputs,
                      {"resolved": resolved})

    if args.trace:
        first = run(base, trace=True)
        write_trace(first.trace, out / "trace.ndjson")
        rest = ex.simulate_replications(base, args.replications, args.jobs)[1:] if args.replications > 1 else []
        stats = [first, *rest]
    else:
        stats = ex.simulate_replications(base, args.replications, args.jobs)
    thr = np.array([s.throughput for s in stats])
    summary = {
        "lambda": lam,
        "throughput_mean": float(thr.mean()),
        "throughput_std": float(thr.std(ddof=1)) if len(thr) > 1 else 0.0,
        "p_full_mean": float(np.mean([s.p_full for s in stats])),
        "mean_local_delay": float(np.mean([s.mean_local_delay for s in stats])),
        "replications": [s.to_dict() for s in stats],
    }
    (out / "stats.json").write_text(json.dumps(summary, indent=2) + "\n")
    ex.write_manifest(out / "manifest.json", None, _command(argv), "complete", outputs,
                      {"resolved": resolved})
    print(f"throughput = {_g(summary['throughput_mean'])} packets/slot "
          f"(lambda = {_g(lam)}, {len(stats)} replication(s))")
    print(f"relay full fraction = {_g(summary['p_full_mean'])}")
    print(f"mean local delay = {_g(summary['mean_local_delay'])} slots")
    return EXIT_OK


def _spec_from_args(args):
    overrides = {"replications": args.replications, "horizon": args.horizon, "base_seed": args.seed}
    return ex.load_spec(args.spec, overrides)


def cmd_sweep(args, argv):
    spec = _spec_from_args(args)
    out = _out_dir(args)
    ex.write_manifest(out / "manifest.json", spec, _command(argv), "running", ["results.csv"])
    results = ex.run_sweep(spec, n_jobs=args.jobs, progress=None if args.quiet else ex.stderr_progress)
    ex.write_csv(results, out / "results.csv")
    ex.write_manifest(out / "manifest.json", spec, _command(argv), "complete", ["results.csv"])
    for r in results:
        if not math.isnan(r.sim_mean):
            print(f"N={r.config.n_nodes} B={r.config.buffer_size} {r.mobility} rho={_g(r.rho)} "
                  f"sim={_g(r.sim_mean)} analytic={_g(min(r.lam, r.tc))}")
    tcs = sorted({(r.config.n_nodes, r.config.n_cells, r.config.buffer_size, r.tc) for r in results})
    for n, c, b, tc in tcs:
        print(f"N={n} C={c} B={b} T_c={_g(tc)}")
    return EXIT_OK


def cmd_validate(args, argv):
    spec = _spec_from_args(args)
    if not spec.simulate:
        raise SpecFileError("simulate", "validate needs simulation enabled")
    out = _out_dir(args)
    outputs = ["results.csv", "report.json"]
    ex.write_manifest(out / "manifest.json", spec, _command(argv), "running", outputs)
    results = ex.run_sweep(spec, n_jobs=args.jobs, progress=None if args.quiet else ex.stderr_progress)
    report = ex.ValidationReport(results, ex.throughput_checks(results, spec.tolerances))
    ex.write_csv(results, out / "results.csv")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    ex.write_manifest(out / "manifest.json", spec, _command(argv),
                      "passed" if report.passed else "failed", outputs)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_VALIDATION


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="manet-capacity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="closed-form capacity or fixed point at one load")
    _add_network_flags(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--lambda", dest="lam", type=float, help="per-node arrival rate")
    mode.add_argument("--capacity", action="store_true", help="report the throughput capacity")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    p.add_argument("--out", help="also write manifest.json and analysis.json here")

    p = sub.add_parser("simulate", help="run the slot-level simulator")
    _add_network_flags(p)
    load = p.add_mutually_exclusive_group(required=True)
    load.add_argument("--lambda", dest="lam", type=float)
    load.add_argument("--rho", type=float, help="load as a multiple of the analytic capacity")
    p.add_argument("--mobility", default="iid", choices=["iid", "walk", "random_walk"])
    p.add_argument("--slots", type=int, default=1_000_000, help="total slots including warmup")
    p.add_argument("--warmup", type=int, default=None, help="default: 10%% of --slots")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="concurrent replications")
    p.add_argument("--trace", action="store_true", help="write trace.ndjson for replication 0")
    p.add_argument("--out")

    for name, text in (("sweep", "run a spec file grid and write CSV"),
                       ("validate", "compare simulation to the analytic capacity")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--spec", required=True)
        p.add_argument("--out")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
    return parser


_COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnstableLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SpecFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
