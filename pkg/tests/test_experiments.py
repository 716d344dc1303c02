import json
import math

import numpy as np
import pytest

from manet_capacity import experiments as ex
from manet_capacity.analytic import NetworkConfig, contact_probabilities, throughput_capacity
from manet_capacity.errors import ConfigError, SpecFileError

BASE = NetworkConfig(72, 36, 5)


def _spec(**kw):
    data = {"grid": [{"nodes": 16, "cells": 8, "buffer": 2}], "loads": {"rho": [0.5, 1.3]},
            "mobility": ["iid"], "replications": 2, "horizon": 20_000, "base_seed": 3}
    data.update(kw)
    return data


# -- service-rate curves ----------------------------------------------------

def test_curve_starts_at_full_relay_rate():
    cp = contact_probabilities(BASE)
    (lam0, mu0), *_ = ex.curve_mu_s(BASE, [0.0, 0.01])
    assert lam0 == 0.0 and mu0 == cp.p_sd + cp.p_sr


@pytest.mark.parametrize("b,expected", [(5, 0.0232), (8, 0.0283), (10, 0.0315)])
def test_curve_crosses_identity_at_capacity(b, expected):
    cfg = NetworkConfig(72, 36, b)
    curve = ex.curve_mu_s(cfg, ex.default_lambda_grid(cfg, 401))
    mus = np.array([m for _, m in curve])
    lams = np.array([l for l, _ in curve])
    assert np.all(np.diff(mus) <= 1e-15)
    k = np.flatnonzero(mus - lams < 0)[0]
    # linear interpolation of mu - lambda between the bracketing grid points
    d0, d1 = mus[k - 1] - lams[k - 1], mus[k] - lams[k]
    cross = lams[k - 1] + d0 / (d0 - d1) * (lams[k] - lams[k - 1])
    assert cross == pytest.approx(throughput_capacity(cfg).throughput_capacity, abs=2e-5)
    assert cross == pytest.approx(expected, abs=5e-4)


def test_bigger_buffer_serves_faster():
    grid = np.linspace(0, 0.05, 101)
    for (l5, m5), (l10, m10) in zip(ex.curve_mu_s(BASE, grid), ex.curve_mu_s(NetworkConfig(72, 36, 10), grid)):
        assert m10 >= m5 - 1e-15


# -- capacity tables --------------------------------------------------------

def test_capacity_vs_buffer_table():
    pts = ex.sweep_capacity_vs_buffer([16, 72], range(1, 31))
    assert len(pts) == 60
    for n in (16, 72):
        row = [p for p in pts if p.n_nodes == n]
        assert all(p.n_cells == n // 2 for p in row)
        tcs = [p.tc for p in row]
        assert all(b >= a - 1e-9 for a, b in zip(tcs, tcs[1:]))
    at72 = {p.buffer_size: p.tc for p in pts if p.n_nodes == 72}
    assert [round(at72[b], 4) for b in (5, 8, 10)] == [0.0232, 0.0283, 0.0315]


def test_marginal_gain_shrinks_and_knee():
    pts = ex.sweep_capacity_vs_buffer([72], range(1, 31))
    gains = ex.marginal_gains(pts)
    assert len(gains) == 29
    assert np.mean(gains[-5:]) < np.mean(gains[:5])
    assert all(b < a for a, b in zip(gains, gains[1:]))
    knee = ex.diminishing_returns_knee(pts)
    assert 1 < knee < 30
    # independent check: furthest point above the normalised chord, by brute force
    tc = [p.tc for p in pts]
    dist = [(t - tc[0]) / (tc[-1] - tc[0]) - (b - 1) / 29 for b, t in zip(range(1, 31), tc)]
    assert knee == 1 + max(range(30), key=dist.__getitem__)


def test_knee_degenerate_tables():
    pts = ex.sweep_capacity_vs_buffer([72], [3, 4])
    assert ex.diminishing_returns_knee(pts) == 3


def test_capacity_vs_nodes_table():
    pts = ex.sweep_capacity_vs_n([8, 16, 32, 64, 128], 5)
    tcs = [p.tc for p in pts]
    assert all(b < a for a, b in zip(tcs, tcs[1:]))
    assert all(p.infinite_buffer_reference == 0.14 for p in pts)
    assert all(p.p_sd <= p.tc for p in pts)
    assert pts[-1].tc < pts[-1].infinite_buffer_reference


def test_capacity_table_rejects_uneven_ratio():
    with pytest.raises(ConfigError):
        ex.sweep_capacity_vs_n([10], 5, ratio=4)


# -- spec files -------------------------------------------------------------

def test_parse_list_grid():
    spec = ex.parse_spec(_spec())
    assert spec.grid == (NetworkConfig(16, 8, 2),)
    assert spec.loads == (0.5, 1.3) and spec.load_kind == "rho"
    assert spec.tolerances == ex.DEFAULT_TOLERANCES


def test_parse_product_grid():
    spec = ex.parse_spec(_spec(grid={"nodes": [8, 16], "buffers": [1, 2, 3], "node_cell_ratio": 2}))
    assert len(spec.grid) == 6
    assert NetworkConfig(16, 8, 3) in spec.grid


def test_parse_overrides():
    spec = ex.parse_spec(_spec(), {"replications": 5, "horizon": None, "base_seed": 9})
    assert spec.replications == 5 and spec.horizon == 20_000 and spec.base_seed == 9


def test_spec_dict_round_trip():
    spec = ex.parse_spec(_spec(mobility=["iid", "walk"], warmup=100))
    assert ex.parse_spec(spec.to_dict()) == spec


@pytest.mark.parametrize("patch,field", [
    ({"grid": []}, "grid"),
    ({"grid": [{"nodes": 7, "cells": 3, "buffer": 1}]}, "grid[0]"),
    ({"grid": {"nodes": [8], "buffers": [1]}}, "grid"),
    ({"loads": {}}, "loads"),
    ({"loads": {"rho": []}}, "loads.rho"),
    ({"loads": {"lambda": [2.0]}}, "loads"),
    ({"mobility": ["teleport"]}, "mobility"),
    ({"replications": 0}, "replications"),
    ({"horizon": "long"}, "horizon"),
    ({"colour": "blue"}, "colour"),
    ({"schema_version": 2}, "schema_version"),
    ({"tolerances": {"speed": 0.1}}, "tolerances"),
])
def test_spec_errors_name_the_field(patch, field):
    with pytest.raises(SpecFileError) as info:
        ex.parse_spec(_spec(**patch))
    assert info.value.field == field


def test_missing_grid_field():
    data = _spec()
    del data["grid"]
    with pytest.raises(SpecFileError) as info:
        ex.parse_spec(data)
    assert info.value.field == "grid"


def test_load_spec_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(SpecFileError):
        ex.load_spec(path)


def test_rho_beyond_unit_lambda_is_rejected():
    spec = ex.parse_spec(_spec(loads={"rho": [200.0]}))
    with pytest.raises(SpecFileError):
        list(ex.sweep_points(spec))


# -- sweeps -----------------------------------------------------------------

def test_analytic_only_sweep():
    spec = ex.parse_spec(_spec(simulate=False, loads={"lambda": [0.0, 0.01]}))
    res = ex.run_sweep(spec)
    assert [r.lam for r in res] == [0.0, 0.01]
    assert all(not r.simulated and math.isnan(r.sim_mean) for r in res)
    row = res[0].csv_row()
    assert row["throughput_sim_mean"] == "" and row["pb_analytic"] == "0"


def test_sweep_order_and_reproducibility():
    spec = ex.parse_spec(_spec(mobility=["iid", "random_walk"], grid=[{"nodes": 18, "cells": 9, "buffer": 2}]))
    a = ex.run_sweep(spec)
    assert [(r.rho, r.mobility) for r in a] == [(0.5, "iid"), (0.5, "random_walk"),
                                                (1.3, "iid"), (1.3, "random_walk")]
    assert ex.run_sweep(spec) == a
    assert all(r.service_bound_holds() for r in a)
    # above capacity the delivered rate exceeds mu_S at the offered load
    assert a[2].sim_mean > a[2].mu_s
    above = a[2]
    assert math.isinf(above.delay)
    assert above.csv_row()["delay_analytic"] == "inf"


def test_parallel_replications_match_serial():
    from manet_capacity.simulator import SimConfig
    cfg = SimConfig(NetworkConfig(16, 8, 2), 0.05, n_slots=20_000, seed=1)
    serial = ex.simulate_replications(cfg, 3, n_jobs=1)
    parallel = ex.simulate_replications(cfg, 3, n_jobs=2)
    assert [s.to_dict() for s in serial] == [s.to_dict() for s in parallel]
    assert len({s.delivered_total for s in serial}) > 1


def test_csv_and_manifest(tmp_path):
    spec = ex.parse_spec(_spec())
    res = ex.run_sweep(spec)
    ex.write_csv(res, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == ",".join(ex.CSV_COLUMNS)
    rows = ex.read_csv(tmp_path / "r.csv")
    assert len(rows) == 2 and rows[0]["N"] == "16" and rows[0]["replications"] == "2"
    assert float(rows[0]["throughput_sim_mean"]) == pytest.approx(res[0].sim_mean, rel=1e-5)

    ex.write_manifest(tmp_path / "m.json", spec, "cmd", "complete", ["r.csv"])
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["status"] == "complete" and doc["outputs"] == ["r.csv"]
    assert ex.parse_spec(doc["spec"]) == spec


def test_checks_flag_deviations():
    r = ex.SweepResult(BASE, "iid", lam=0.01, rho=0.5, tc=0.02, mu_s=0.03, p_full=0.1, delay=5.0,
                       sim_mean=0.0105, sim_std=0.0001, replications=3)
    checks = ex.throughput_checks([r], ex.DEFAULT_TOLERANCES)
    assert len(checks) == 1 and not checks[0].passed
    ok = ex.throughput_checks([ex.SweepResult(**{**r.__dict__, "sim_mean": 0.0101})], ex.DEFAULT_TOLERANCES)
    assert ok[0].passed


def test_mobility_gap_check():
    common = dict(config=BASE, lam=0.024, rho=1.2, tc=0.02, mu_s=0.02, p_full=0.9, delay=math.inf,
                  sim_std=0.0, replications=2)
    iid = ex.SweepResult(mobility="iid", sim_mean=0.0200, **common)
    walk = ex.SweepResult(mobility="random_walk", sim_mean=0.0185, **common)
    checks = ex.throughput_checks([iid, walk], ex.DEFAULT_TOLERANCES)
    gap = [c for c in checks if c.name.startswith("mobility gap")]
    assert len(gap) == 1 and gap[0].observed == pytest.approx(0.075) and not gap[0].passed


def test_validate_smoke():
    report = ex.validate(NetworkConfig(16, 8, 3), rho_list=(0.5, 1.3), replications=2, horizon=100_000,
                         tolerances={"linear": 0.1, "saturated": 0.1, "mobility_gap": 0.2}, base_seed=4,
                         mobility=("iid",))
    assert report.passed, report.lines()
    assert all(line.startswith("PASS") for line in report.lines())
    assert report.to_dict()["passed"] is True
