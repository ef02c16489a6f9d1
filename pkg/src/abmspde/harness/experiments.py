"""Experiment drivers: ensembles, model comparison over N, cost benchmark,
discretisation sweeps, noise scaling and the equilibrium check.

Each driver takes a :class:`SimulationConfig` and an :class:`ExperimentPlan`,
writes its tables to ``plan.out_dir`` and returns the numbers it wrote.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..abm import abm_steps, initial_agents
from ..fem import FemMesh
from ..model import ConfigError
from ..observables import (
    EnsembleStats,
    binned_boltzmann,
    boltzmann_density,
    ensemble_mean_std,
    first_passage_summary,
    relative_l2_error,
)
from ..spde import SpdeSolver
from .ensemble import MODELS, make_tasks, parallel_map, resolve_workers, run_tasks, trajectory_path
from .tables import write_table

log = logging.getLogger("abmspde")

KINDS = ("single-run", "ensemble", "compare-models", "consistency-sweep", "cost-benchmark",
         "equilibrium", "noise-scaling")
MODEL_CHOICES = MODELS + ("both",)


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str = "ensemble"
    model: str = "both"
    n_list: tuple[int, ...] = ()
    realizations: int = 1
    snapshot_every: int = 0
    out_dir: str = "out"
    workers: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"model must be one of {MODEL_CHOICES}, got {self.model!r}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if any(n < 1 for n in self.n_list):
            raise ConfigError("every N must be >= 1")

    @property
    def models(self) -> tuple[str, ...]:
        return MODELS if self.model == "both" else (self.model,)

    def opt(self, key, default=None):
        return self.options.get(key, default)

    def prepare_output(self) -> Path:
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        return out


_PLAN_KEYS = ("kind", "model", "n_list", "realizations", "snapshot_every", "out_dir", "workers")


def plan_from_config(config, **overrides) -> ExperimentPlan:
    """Plan from the config's ``experiment`` block; ``None`` overrides are ignored."""
    spec = dict(config.experiment)
    spec.update({k: v for k, v in overrides.items() if v is not None})
    options = {k: v for k, v in spec.items() if k not in _PLAN_KEYS}
    n_list = tuple(int(n) for n in spec.get("n_list", ()) or ())
    return ExperimentPlan(
        kind=spec.get("kind", "ensemble"),
        model=spec.get("model", "both"),
        n_list=n_list,
        realizations=int(spec.get("realizations", 1)),
        snapshot_every=int(spec.get("snapshot_every", 0)),
        out_dir=str(spec.get("out_dir", "out")),
        workers=resolve_workers(spec.get("workers")),
        options=options,
    )


def table_meta(config, **extra) -> dict:
    return {"config_hash": config.hash(), "seed": config.master_seed, **extra}


def _agent_counts(config, plan: ExperimentPlan) -> tuple[int, ...]:
    return plan.n_list or (config.params.n_agents,)


def _nan_if_none(v):
    return float("nan") if v is None else v


def _write_density_stats(path: Path, config, x: np.ndarray, stats: EnsembleStats, type_index: int, **meta):
    write_table(path, ("x", "mean", "std"),
                zip(x.tolist(), stats.mean[type_index].tolist(), stats.std[type_index].tolist()),
                table_meta(config, **meta))


# ----------------------------------------------------------------------------- ensembles

def run_ensemble(config, plan: ExperimentPlan) -> dict:
    """R realizations per model and N, run to ``t_end``.

    Writes ``first_passage_N{N}_{model}.csv``, ``ensemble_summary.csv`` and,
    for R >= 2, final-time density statistics. With ``snapshot_every > 0``
    every realization also writes its trajectory.
    """
    out = plan.prepare_output()
    summary_rows, report = [], {}
    for n in _agent_counts(config, plan):
        cfg = config.with_agents(n)
        mesh = FemMesh(cfg.domain, cfg.n_cells)
        for model in plan.models:
            tasks = make_tasks(cfg, model, plan.realizations, cfg.params.n_steps,
                               snapshot_every=plan.snapshot_every)
            if plan.snapshot_every > 0:
                (out / "trajectories").mkdir(exist_ok=True)
                tasks = [replace(t, trajectory=trajectory_path(out, f"N{n}_{model}", t.index)) for t in tasks]
            log.info("ensemble N=%d model=%s R=%d", n, model, plan.realizations)
            results = run_tasks(tasks, plan.workers)
            taus = [r.tau for r in results]
            write_table(out / f"first_passage_N{n}_{model}.csv", ("realization", "tau"),
                        [(r.index, r.tau) for r in results], table_meta(cfg, N=n, model=model))
            fp = first_passage_summary(taus)
            summary_rows.append((n, model, fp["mean_tau"], fp["std_tau"], fp["n_reached"], fp["R"]))
            entry = {"taus": taus, **fp}
            if len(results) >= 2:
                stats = ensemble_mean_std([r.final for r in results], cfg.params.t_end)
                for s in range(cfg.params.n_types):
                    _write_density_stats(out / f"density_final_N{n}_{model}_type{s + 1}.csv", cfg, mesh.nodes,
                                         stats, s, N=n, model=model, t=cfg.params.t_end)
                entry["density"] = stats
            report[(n, model)] = entry
    write_table(out / "ensemble_summary.csv", ("N", "model", "mean_tau", "std_tau", "n_reached", "R"),
                summary_rows, table_meta(config))
    return report


# ----------------------------------------------------------------------------- comparison

def density_errors(abm: EnsembleStats, spde: EnsembleStats) -> tuple[np.ndarray, np.ndarray]:
    """Relative l2 errors of SPDE against ABM ensemble mean and std, one value per type."""
    n_types = abm.mean.shape[0]
    e_mean = np.array([relative_l2_error(spde.mean[s], abm.mean[s]) for s in range(n_types)])
    e_std = np.array([relative_l2_error(spde.std[s], abm.std[s]) for s in range(n_types)])
    return e_mean, e_std


@dataclass
class CompareReport:
    rows: list[dict]
    taus: dict  # (N, model) -> list of tau or None
    densities: dict  # (N, model) -> EnsembleStats at tau_N


def compare_columns(n_types: int) -> tuple[str, ...]:
    base = ("N", "flagged", "tau_N", "mean_tau_abm", "std_tau_abm", "n_reached_abm",
            "mean_tau_spde", "std_tau_spde", "n_reached_spde", "R")
    return base + tuple(f"E_mean_type{s}" for s in range(1, n_types + 1)) \
        + tuple(f"E_std_type{s}" for s in range(1, n_types + 1))


def compare_models(config, plan: ExperimentPlan) -> CompareReport:
    """For each N: ABM first passage gives tau_N, then both ensembles are snapshotted at tau_N.

    An N whose ABM realizations miss the threshold in more than half the
    runs is flagged and gets no error entries.
    """
    out = plan.prepare_output()
    R = plan.realizations
    n_types = config.params.n_types
    rows, tau_rows, all_taus, densities = [], [], {}, {}
    for n in _agent_counts(config, plan):
        cfg = config.with_agents(n)
        n_steps = cfg.params.n_steps
        mesh = FemMesh(cfg.domain, cfg.n_cells)
        log.info("compare N=%d: abm first passage (R=%d)", n, R)
        abm_first = run_tasks(make_tasks(cfg, "abm", R, n_steps, stop_at_passage=True), plan.workers)
        abm_taus = [r.tau for r in abm_first]
        fp_abm = first_passage_summary(abm_taus)
        flagged = (R - fp_abm["n_reached"]) > R / 2
        row = {"N": n, "flagged": flagged, "R": R,
               "mean_tau_abm": fp_abm["mean_tau"], "std_tau_abm": fp_abm["std_tau"],
               "n_reached_abm": fp_abm["n_reached"]}
        snap = () if flagged else (min(round(fp_abm["mean_tau"] / cfg.params.dt), n_steps),)
        row["tau_N"] = float("nan") if flagged else snap[0] * cfg.params.dt

        log.info("compare N=%d: spde (R=%d)", n, R)
        spde_runs = run_tasks(make_tasks(cfg, "spde", R, n_steps, snap_steps=snap, stop_at_passage=True),
                              plan.workers)
        spde_taus = [r.tau for r in spde_runs]
        fp_spde = first_passage_summary(spde_taus)
        row.update(mean_tau_spde=fp_spde["mean_tau"], std_tau_spde=fp_spde["std_tau"],
                   n_reached_spde=fp_spde["n_reached"])
        all_taus[(n, "abm")], all_taus[(n, "spde")] = abm_taus, spde_taus
        tau_rows += [(n, "abm", fp_abm["mean_tau"], fp_abm["std_tau"], fp_abm["n_reached"], R),
                     (n, "spde", fp_spde["mean_tau"], fp_spde["std_tau"], fp_spde["n_reached"], R)]

        if not flagged and R >= 2:
            k = snap[0]
            log.info("compare N=%d: abm snapshots at step %d", n, k)
            abm_snap = run_tasks(make_tasks(cfg, "abm", R, k, snap_steps=snap), plan.workers)
            stats = {
                "abm": ensemble_mean_std([r.snapshots[k] for r in abm_snap], row["tau_N"]),
                "spde": ensemble_mean_std([r.snapshots[k] for r in spde_runs], row["tau_N"]),
            }
            e_mean, e_std = density_errors(stats["abm"], stats["spde"])
            for model, st in stats.items():
                densities[(n, model)] = st
                for s in range(n_types):
                    _write_density_stats(out / f"density_N{n}_{model}_type{s + 1}.csv", cfg, mesh.nodes, st, s,
                                         N=n, model=model, t=row["tau_N"])
        else:
            e_mean = e_std = np.full(n_types, np.nan)
        for s in range(n_types):
            row[f"E_mean_type{s + 1}"] = float(e_mean[s])
            row[f"E_std_type{s + 1}"] = float(e_std[s])
        rows.append(row)
        write_table(out / f"first_passage_N{n}.csv", ("realization", "tau_abm", "tau_spde"),
                    [(i, a, b) for i, (a, b) in enumerate(zip(abm_taus, spde_taus))], table_meta(cfg, N=n))

    cols = compare_columns(n_types)
    write_table(out / "compare_report.csv", cols, [[r[c] for c in cols] for r in rows], table_meta(config))
    write_table(out / "tau_summary.csv", ("N", "model", "mean_tau", "std_tau", "n_reached", "R"),
                tau_rows, table_meta(config))
    return CompareReport(rows, all_taus, densities)


# ----------------------------------------------------------------------------- cost

def _time_steps(gen, n_steps: int, warmup: int) -> float:
    times = []
    for k in range(warmup + n_steps):
        t0 = time.perf_counter()
        next(gen)
        times.append(time.perf_counter() - t0)
    return float(np.median(times[warmup:]))


def step_time(config, model: str, n_steps: int = 100, warmup: int = 10) -> float:
    """Median wall time of one step after ``warmup`` discarded steps."""
    total = n_steps + warmup
    if model == "abm":
        state = initial_agents(config.initial, config.domain, config.seeds.generator(0, "abm-init"))
        gen = abm_steps(state, config.landscape, config.params, config.seeds.generator(0, "abm-dynamics"), total)
    else:
        solver = SpdeSolver(config)
        gen = solver.steps(solver.initial_state(), total, 0)
    return _time_steps(gen, n_steps, warmup)


def cost_benchmark(config, plan: ExperimentPlan) -> list[tuple]:
    """Rows ``(N, model, seconds_per_step)``; timings always run serially in this process."""
    out = plan.prepare_output()
    steps = int(plan.opt("bench_steps", 100))
    warmup = int(plan.opt("warmup", 10))
    horizon = (steps + warmup) * config.params.dt
    rows = []
    for n in _agent_counts(config, plan):
        cfg = config.with_agents(n)
        if cfg.params.t_end < horizon:
            cfg = cfg.with_params(t_end=horizon)
        for model in plan.models:
            sec = step_time(cfg, model, steps, warmup)
            log.info("bench N=%d model=%s %.3e s/step", n, model, sec)
            rows.append((n, model, sec))
    write_table(out / "cost.csv", ("N", "model", "seconds_per_step"), rows,
                table_meta(config, n_cells=config.n_cells, steps=steps, warmup=warmup))
    return rows


# ----------------------------------------------------------------------------- consistency

DEFAULT_AXES = {"dt": (0.02, 0.01, 0.005), "n_cells": (64, 128, 256), "n_modes": (64, 128, 256)}


@dataclass
class SweepReport:
    means: dict  # (axis, level) -> (nodes, mean array (T, nodes))
    diffs: list[dict]
    order: list[dict]


def _level_kwargs(config, axis: str, level) -> dict:
    kw = {"dt": config.params.dt, "n_cells": config.n_cells, "n_modes": config.modes}
    kw[axis] = float(level) if axis == "dt" else int(level)
    return kw


def _ensemble_mean_at(config, t_obs: float, R: int, workers: int, noise_dt=None,
                      deterministic=None, **kw) -> np.ndarray:
    steps = round(t_obs / kw["dt"])
    if abs(steps * kw["dt"] - t_obs) > 1e-9:
        raise ConfigError(f"t_obs={t_obs} is not a whole number of dt={kw['dt']} steps")
    tasks = make_tasks(config, "spde", R, steps, noise_dt=noise_dt, deterministic=deterministic, **kw)
    finals = [r.final for r in run_tasks(tasks, workers)]
    return np.mean(finals, axis=0)


def consistency_sweep(config, plan: ExperimentPlan) -> SweepReport:
    """Ensemble-mean SPDE densities at ``t_obs`` while refining one of dt, h, M at a time.

    All runs of one realization index share the same Brownian paths: the
    increments are drawn at the finest dt of the sweep and modes are nested.
    Successive levels are compared on the coarser level's nodes.
    """
    out = plan.prepare_output()
    t_obs = float(plan.opt("t_obs", 1.5))
    axes = {k: tuple(v) for k, v in (plan.opt("axes") or DEFAULT_AXES).items()}
    unknown = set(axes) - set(DEFAULT_AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes {sorted(unknown)}")
    noise_dt = min(list(axes.get("dt", ())) + [config.params.dt])
    R = plan.realizations
    n_types = config.params.n_types

    means, mean_rows, diffs = {}, [], []
    for axis, levels in axes.items():
        prev = None
        for level in levels:
            kw = _level_kwargs(config, axis, level)
            log.info("sweep %s=%s (R=%d)", axis, level, R)
            mean = _ensemble_mean_at(config, t_obs, R, plan.workers, noise_dt=noise_dt, **kw)
            mesh = FemMesh(config.domain, kw["n_cells"])
            means[(axis, level)] = (mesh.nodes, mean)
            for s in range(n_types):
                mean_rows += [(axis, level, s + 1, x, m) for x, m in zip(mesh.nodes.tolist(), mean[s].tolist())]
            if prev is not None:
                p_level, p_mesh, p_mean = prev
                coarse, fine = (p_mesh, p_mean), (mesh, mean)
                if mesh.n_nodes < p_mesh.n_nodes:
                    coarse, fine = fine, coarse
                fine_on_coarse = fine[0].interpolate(fine[1], coarse[0].nodes)
                for s in range(n_types):
                    diffs.append({"axis": axis, "coarse": p_level, "fine": level, "type": s + 1,
                                  "rel_l2": relative_l2_error(coarse[1][s], fine_on_coarse[s])})
            prev = (level, mesh, mean)

    order = []
    dts = tuple(plan.opt("deterministic_dts", ()) or ())
    if dts:
        finals = [_ensemble_mean_at(config, t_obs, 1, 1, deterministic=True,
                                    **_level_kwargs(config, "dt", dt)) for dt in dts]
        d = [relative_l2_error(finals[i], finals[i + 1]) for i in range(len(dts) - 1)]
        for i in range(len(d)):
            slope = float("nan") if i == 0 else float(np.log(d[i - 1] / d[i]) / np.log(dts[i - 1] / dts[i]))
            order.append({"dt_coarse": dts[i], "dt_fine": dts[i + 1], "rel_diff": d[i], "slope": slope})
        write_table(out / "consistency_order.csv", ("dt_coarse", "dt_fine", "rel_diff", "slope"),
                    [tuple(r.values()) for r in order], table_meta(config, t_obs=t_obs))

    meta = table_meta(config, t_obs=t_obs, R=R)
    write_table(out / "consistency_mean.csv", ("axis", "level", "type", "x", "mean"), mean_rows, meta)
    write_table(out / "consistency_diff.csv", ("axis", "coarse", "fine", "type", "rel_l2"),
                [tuple(r.values()) for r in diffs], meta)
    return SweepReport(means, diffs, order)


# ----------------------------------------------------------------------------- noise scaling

def noise_scaling(config, plan: ExperimentPlan) -> list[dict]:
    """Spatially averaged ensemble std of the total density per agent, ``sum_s rho_s / N``, at ``t_obs``.

    The total density is untouched by the type-change rules, so its
    fluctuations isolate the diffusion noise.
    """
    out = plan.prepare_output()
    t_obs = float(plan.opt("t_obs", 1.5))
    rows = []
    for n in _agent_counts(config, plan):
        cfg = config.with_agents(n)
        steps = cfg.params.steps_until(t_obs)
        mesh = FemMesh(cfg.domain, cfg.n_cells)
        for model in plan.models:
            log.info("noise scaling N=%d model=%s", n, model)
            results = run_tasks(make_tasks(cfg, model, plan.realizations, steps), plan.workers)
            total = np.array([r.final.sum(axis=0) for r in results]) / n
            std = total.std(axis=0, ddof=1)
            avg = float(std @ mesh.node_weights / cfg.domain.length)
            rows.append({"N": n, "model": model, "mean_std": avg})
    write_table(out / "noise_scaling.csv", ("N", "model", "mean_std"), [tuple(r.values()) for r in rows],
                table_meta(config, t_obs=t_obs, R=plan.realizations))
    return rows


# ----------------------------------------------------------------------------- equilibrium

def _pooled_histogram(args) -> np.ndarray:
    config, index, edges, start, every = args
    state = initial_agents(config.initial, config.domain, config.seeds.generator(index, "abm-init"))
    rng = config.seeds.generator(index, "abm-dynamics")
    counts = np.zeros(edges.size - 1)
    for k, state in enumerate(abm_steps(state, config.landscape, config.params, rng), start=1):
        if k >= start and (k - start) % every == 0:
            counts += np.histogram(state.positions, edges)[0]
    return counts


def equilibrium(config, plan: ExperimentPlan) -> dict:
    """Long-time position statistics without type changes against the Boltzmann density.

    ABM positions are pooled over realizations and over every ``sample_every``-th
    step after ``burn_in``; the deterministic SPDE is compared at ``t_end``.
    """
    out = plan.prepare_output()
    if any(r.rate > 0 and r.subject != r.product for r in config.params.rules):
        log.warning("equilibrium check with active type changes")
    n_bins = int(plan.opt("bins", 64))
    burn_in = float(plan.opt("burn_in", 0.8 * config.params.t_end))
    every = int(plan.opt("sample_every", 10))
    edges = np.linspace(config.domain.lower, config.domain.upper, n_bins + 1)
    result = {}
    if "abm" in plan.models:
        start = max(1, config.params.steps_until(burn_in))
        jobs = [(config, r, edges, start, every) for r in range(plan.realizations)]
        counts = np.sum(parallel_map(_pooled_histogram, jobs, plan.workers), axis=0)
        hist = counts / counts.sum()
        ref = binned_boltzmann(config.landscape, config.params.sigma, edges)
        result["abm_l1"] = float(np.abs(hist - ref).sum())
        write_table(out / "equilibrium_hist.csv", ("bin_left", "bin_right", "abm", "boltzmann"),
                    zip(edges[:-1].tolist(), edges[1:].tolist(), hist.tolist(), ref.tolist()),
                    table_meta(config, burn_in=burn_in, R=plan.realizations))
    if "spde" in plan.models:
        solver = SpdeSolver(config, deterministic=True)
        state = solver.initial_state()
        for state in solver.steps(state, config.params.n_steps):
            pass
        total = state.beta.sum(axis=0)
        ref = config.params.n_agents * boltzmann_density(config.landscape, config.params.sigma, solver.mesh)
        result["spde_rel_l2"] = relative_l2_error(total, ref)
        write_table(out / "equilibrium_density.csv", ("x", "spde", "reference"),
                    zip(solver.mesh.nodes.tolist(), total.tolist(), ref.tolist()),
                    table_meta(config, t=config.params.t_end))
    write_table(out / "equilibrium_summary.csv", ("metric", "value"), list(result.items()), table_meta(config))
    return result


DRIVERS = {
    "single-run": run_ensemble,
    "ensemble": run_ensemble,
    "compare-models": compare_models,
    "consistency-sweep": consistency_sweep,
    "cost-benchmark": cost_benchmark,
    "equilibrium": equilibrium,
    "noise-scaling": noise_scaling,
}


def run_plan(config, plan: ExperimentPlan):
    return DRIVERS[plan.kind](config, plan)
