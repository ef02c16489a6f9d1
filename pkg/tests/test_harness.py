import filecmp
import math

import numpy as np
import pytest

from abmspde import load_preset
from abmspde.harness.cli import main
from abmspde.harness.ensemble import (
    RealizationError,
    RealizationTask,
    guarded_run,
    make_tasks,
    resolve_workers,
    run_tasks,
)
from abmspde.harness.experiments import (
    ExperimentPlan,
    compare_models,
    consistency_sweep,
    cost_benchmark,
    density_errors,
    plan_from_config,
    run_ensemble,
)
from abmspde.harness.plots import render_plots
from abmspde.harness.tables import FormatError, read_table, write_table
from abmspde.model import ConfigError, build_rule
from abmspde.observables import ensemble_mean_std


@pytest.fixture
def small():
    return load_preset("innovation").with_agents(60).with_params(t_end=0.3)


@pytest.fixture
def fast():
    """Quick adoption: high rate, wide contact radius."""
    cfg = load_preset("innovation").with_agents(80)
    return cfg.with_params(t_end=3.0, d_int=0.05, rules=(build_rule(1, 2, 2, 2.0, 2),))


def test_plan_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentPlan(kind="bogus")
    with pytest.raises(ConfigError):
        ExperimentPlan(model="agents")
    with pytest.raises(ConfigError):
        ExperimentPlan(realizations=0)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        ExperimentPlan(out_dir=str(blocker / "sub")).prepare_output()


def test_plan_from_config_overrides(small):
    plan = plan_from_config(small, realizations=5, model="abm", out_dir="x", n_list=None)
    assert (plan.kind, plan.realizations, plan.model, plan.out_dir) == ("single-run", 5, "abm", "x")
    assert plan.models == ("abm",)
    assert plan.options["reference_realizations"] == 1


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("ABMSPDE_WORKERS", raising=False)
    assert resolve_workers() == 1
    monkeypatch.setenv("ABMSPDE_WORKERS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    with pytest.raises(ValueError):
        resolve_workers(0)


def test_tables_roundtrip(tmp_path):
    p = write_table(tmp_path / "t.csv", ("a", "b", "c"), [(1, 0.1, None), (2, float("nan"), "x")],
                    {"config_hash": "abc", "seed": 5})
    meta, rows = read_table(p, ("a", "b"))
    assert meta == {"config_hash": "abc", "seed": "5"}
    assert rows[0] == {"a": 1, "b": 0.1, "c": None}
    assert math.isnan(rows[1]["b"]) and rows[1]["c"] == "x"
    with pytest.raises(FormatError):
        read_table(p, ("z",))
    with pytest.raises(FormatError):
        write_table(tmp_path / "u.csv", ("a",), [(1, 2)])


def test_single_run_is_byte_identical(small, tmp_path):
    plan = dict(kind="single-run", model="both", realizations=1, snapshot_every=10)
    for d in ("a", "b"):
        run_ensemble(small, ExperimentPlan(out_dir=str(tmp_path / d), **plan))
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert any("trajectories" in str(f) for f in files)
    for f in files:
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False), f
    first = (tmp_path / "a" / files[-1]).read_text().splitlines()[0]
    assert first.startswith(f"# config_hash={small.hash()} seed={small.master_seed}")


def test_serial_and_parallel_agree(fast, tmp_path):
    res = {}
    for w in (1, 2):
        plan = ExperimentPlan(kind="ensemble", realizations=3, out_dir=str(tmp_path / f"w{w}"), workers=w)
        res[w] = run_ensemble(fast, plan)
    for key in res[1]:
        assert res[1][key]["taus"] == res[2][key]["taus"]
        assert np.array_equal(res[1][key]["density"].mean, res[2][key]["density"].mean)
        assert np.array_equal(res[1][key]["density"].std, res[2][key]["density"].std)
    for f in (tmp_path / "w1").glob("*.csv"):
        assert filecmp.cmp(f, tmp_path / "w2" / f.name, shallow=False)


def test_execution_order_does_not_matter(fast):
    tasks = make_tasks(fast, "spde", 3, 50)
    fwd = run_tasks(tasks)
    rev = run_tasks(tasks[::-1])
    for a, b in zip(fwd, rev):
        assert a.index == b.index and np.array_equal(a.final, b.final)


def test_abm_ensemble_first_passage_table(tmp_path):
    cfg = load_preset("innovation").with_params(t_end=0.2)
    run_ensemble(cfg, ExperimentPlan(kind="ensemble", model="abm", realizations=100, out_dir=str(tmp_path)))
    _, rows = read_table(tmp_path / "first_passage_N1000_abm.csv", ("realization", "tau"))
    assert [r["realization"] for r in rows] == list(range(100))


def test_realization_failure_names_index(small):
    bad = RealizationTask(small, "spde", 7, 5, dt=0.01, noise_dt=0.003)
    with pytest.raises(RealizationError, match="realization 7"):
        guarded_run(bad)


def test_density_errors_identical_ensembles():
    rng = np.random.default_rng(0)
    samples = [rng.random((2, 9)) for _ in range(5)]
    st = ensemble_mean_std(samples)
    e_mean, e_std = density_errors(st, st)
    assert np.all(e_mean == 0) and np.all(e_std == 0)


def test_compare_models_pipeline(fast, tmp_path):
    plan = ExperimentPlan(kind="compare-models", n_list=(40, 80), realizations=4, out_dir=str(tmp_path))
    rep = compare_models(fast, plan)
    assert [r["N"] for r in rep.rows] == [40, 80]
    for r in rep.rows:
        assert not r["flagged"] and r["n_reached_abm"] == 4
        assert r["tau_N"] == pytest.approx(round(r["mean_tau_abm"] / 0.01) * 0.01)
        assert 0 < r["E_mean_type2"] < 2
    meta, rows = read_table(tmp_path / "compare_report.csv", ("N", "E_mean_type1", "E_std_type2"))
    assert meta["config_hash"] == fast.hash()
    _, taus = read_table(tmp_path / "tau_summary.csv", ("N", "model", "mean_tau", "std_tau", "n_reached", "R"))
    assert len(taus) == 4
    assert (tmp_path / "density_N80_spde_type2.csv").exists()


def test_compare_flags_unreached(small, tmp_path):
    plan = ExperimentPlan(kind="compare-models", n_list=(30,), realizations=2, out_dir=str(tmp_path))
    row = compare_models(small, plan).rows[0]
    assert row["flagged"] and math.isnan(row["E_mean_type1"])


def test_cost_benchmark_rows(small, tmp_path):
    plan = ExperimentPlan(kind="cost-benchmark", n_list=(20, 40), out_dir=str(tmp_path),
                          options={"bench_steps": 5, "warmup": 2})
    rows = cost_benchmark(small, plan)
    assert [(n, m) for n, m, _ in rows] == [(20, "abm"), (20, "spde"), (40, "abm"), (40, "spde")]
    assert all(s > 0 for *_, s in rows)


def test_consistency_sweep_shapes(small, tmp_path):
    plan = ExperimentPlan(kind="consistency-sweep", model="spde", realizations=2, out_dir=str(tmp_path),
                          options={"t_obs": 0.1, "axes": {"n_modes": [64, 128, 256], "n_cells": [32, 64]},
                                   "deterministic_dts": [0.02, 0.01, 0.005]})
    rep = consistency_sweep(small, plan)
    assert sorted(k for k in rep.means if k[0] == "n_modes") == [("n_modes", 64), ("n_modes", 128), ("n_modes", 256)]
    assert len(rep.diffs) == 2 * 2 + 1 * 2
    assert len(rep.order) == 2
    _, rows = read_table(tmp_path / "consistency_mean.csv", ("axis", "level", "type", "x", "mean"))
    assert {r["level"] for r in rows if r["axis"] == "n_modes"} == {64, 128, 256}
    with pytest.raises(ConfigError):
        consistency_sweep(small, ExperimentPlan(out_dir=str(tmp_path), options={"axes": {"sigma": [1]}}))


def _synthetic_reports(d, spde_taus=True):
    cols = ("N", "mean_tau_abm", "std_tau_abm", "mean_tau_spde", "std_tau_spde",
            "E_mean_type1", "E_mean_type2", "E_std_type1", "E_std_type2")
    nan = float("nan")
    rows = [(n, 100 / n, 1.0, (90 / n) if spde_taus else nan, 1.0 if spde_taus else nan, 0.1, 0.2, 0.3, 0.4)
            for n in (50, 250, 1000)]
    write_table(d / "compare_report.csv", cols, rows)
    write_table(d / "cost.csv", ("N", "model", "seconds_per_step"),
                [(50, "abm", 1e-4), (50, "spde", 2e-4), (1000, "abm", 5e-4), (1000, "spde", 2e-4)])
    for m in ("abm", "spde"):
        write_table(d / f"density_N50_{m}_type1.csv", ("x", "mean", "std"), [(0.0, 1.0, 0.1), (1.0, 2.0, 0.2)])


def test_render_plots(tmp_path):
    _synthetic_reports(tmp_path)
    made = {p.name for p in render_plots(tmp_path)}
    assert {"tau_vs_N.svg", "E_mean_vs_N.svg", "E_std_vs_N.svg", "cost_vs_N.svg", "density_N50.svg"} <= made
    svg = (tmp_path / "figures" / "cost_vs_N.svg").read_text()
    assert "ABM" in svg and "SPDE" in svg


def test_render_plots_skips_empty_series(tmp_path):
    _synthetic_reports(tmp_path, spde_taus=False)
    assert (tmp_path / "figures" / "tau_vs_N.svg") in render_plots(tmp_path)


def test_render_plots_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        render_plots(tmp_path)
    write_table(tmp_path / "cost.csv", ("N", "model"), [(1, "abm")])
    with pytest.raises(FormatError):
        render_plots(tmp_path)


def test_cli_bench_and_plot(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["-q", "bench", "--n-list", "20,40", "--out", str(out), "--seed", "9"]) == 0
    meta, rows = read_table(out / "cost.csv", ("N", "model", "seconds_per_step"))
    assert meta["seed"] == "9" and len(rows) == 4
    assert main(["plot", str(out)]) == 0
    assert (out / "figures" / "cost_vs_N.svg").exists()


def test_cli_run_with_file_config(tmp_path):
    cfg_path = tmp_path / "c.yaml"
    import yaml
    from abmspde.config import preset_path

    raw = yaml.safe_load(preset_path("innovation").read_text())
    raw.update(n_agents=30, t_end=0.1)
    raw["experiment"] = {"kind": "ensemble", "realizations": 2}
    cfg_path.write_text(yaml.safe_dump(raw))
    out = tmp_path / "run"
    assert main(["-q", "run", "--config", str(cfg_path), "--out", str(out), "--model", "spde", "--workers", "1"]) == 0
    assert (out / "first_passage_N30_spde.csv").exists()
    assert not (out / "first_passage_N30_abm.csv").exists()


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["-q", "run", "--config", "no-such-preset", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
