"""Seeded realizations of either model and a deterministic parallel map over them.

Every realization draws from streams addressed by ``(master seed, realization
index, purpose)``, so results do not depend on which worker ran it or when.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from ..abm import abm_steps, initial_agents
from ..fem import FemMesh
from ..observables import empirical_density
from ..recorders import AgentSnapshotWriter, DensitySnapshotWriter
from ..spde import SpdeSolver

MODELS = ("abm", "spde")
WORKERS_ENV = "ABMSPDE_WORKERS"


class RealizationError(RuntimeError):
    """A single realization failed; the message names its index."""


def resolve_workers(requested: int | None = None) -> int:
    """Worker count from the explicit value, else ``$ABMSPDE_WORKERS``, else 1."""
    if requested is None:
        env = os.environ.get(WORKERS_ENV, "").strip()
        requested = int(env) if env else 1
    if requested < 1:
        raise ValueError(f"worker count must be >= 1, got {requested}")
    return requested


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; order is preserved."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


@dataclass(frozen=True)
class RealizationTask:
    config: object
    model: str
    index: int
    max_steps: int
    snap_steps: tuple[int, ...] = ()
    stop_at_passage: bool = False
    n_cells: int | None = None
    n_modes: int | None = None
    dt: float | None = None
    noise_dt: float | None = None
    deterministic: bool | None = None
    trajectory: str | None = None
    snapshot_every: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")


@dataclass
class RealizationResult:
    index: int
    model: str
    tau: float | None
    steps: int
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    final: np.ndarray | None = None


@lru_cache(maxsize=8)
def _solver(config, n_cells, n_modes, dt, deterministic) -> SpdeSolver:
    return SpdeSolver(config, n_cells, n_modes, dt, deterministic)


def _trajectory(task: RealizationTask) -> Iterator[tuple[int, object]]:
    cfg = task.config
    if task.model == "abm":
        state = initial_agents(cfg.initial, cfg.domain, cfg.seeds.generator(task.index, "abm-init"))
        yield 0, state
        rng = cfg.seeds.generator(task.index, "abm-dynamics")
        yield from enumerate(abm_steps(state, cfg.landscape, cfg.params, rng, task.max_steps), start=1)
    else:
        solver = _solver(cfg, task.n_cells, task.n_modes, task.dt, task.deterministic)
        state = solver.initial_state()
        yield 0, state
        yield from enumerate(solver.steps(state, task.max_steps, task.index, task.noise_dt), start=1)


def _writer(task: RealizationTask, mesh: FemMesh, fh):
    cfg = task.config
    fh.write(f"# config_hash={cfg.hash()} seed={cfg.master_seed} realization={task.index} model={task.model}\n")
    if task.model == "abm":
        return AgentSnapshotWriter(fh, every=task.snapshot_every)
    return DensitySnapshotWriter(fh, mesh.nodes, every=task.snapshot_every)


def run_realization(task: RealizationTask) -> RealizationResult:
    """Advance one realization, recording first passage and the requested density snapshots.

    With ``stop_at_passage`` the run ends once the adopter threshold is
    reached and every snapshot step has been passed.
    """
    cfg = task.config
    n_types = cfg.params.n_types
    if task.model == "abm":
        mesh = FemMesh(cfg.domain, task.n_cells or cfg.n_cells)
        fraction = lambda s: s.fraction(cfg.adopter_type)  # noqa: E731
        density = lambda s: empirical_density(s, mesh, n_types).values  # noqa: E731
    else:
        mesh = _solver(cfg, task.n_cells, task.n_modes, task.dt, task.deterministic).mesh
        fraction = lambda s: s.fraction(mesh, cfg.adopter_type)  # noqa: E731
        density = lambda s: s.beta.copy()  # noqa: E731

    wanted = set(task.snap_steps)
    last_snap = max(wanted, default=0)
    result = RealizationResult(task.index, task.model, None, 0)
    fh = open(task.trajectory, "w", newline="") if task.trajectory else None
    try:
        writer = _writer(task, mesh, fh) if fh else None
        state = None
        for k, state in _trajectory(task):
            if writer is not None and writer.wants(k):
                writer(k, state)
            if k in wanted:
                result.snapshots[k] = density(state)
            if result.tau is None and fraction(state) >= cfg.threshold:
                result.tau = float(state.t)
            result.steps = k
            if task.stop_at_passage and result.tau is not None and k >= last_snap:
                break
        result.final = density(state)
    finally:
        if fh:
            fh.close()
    return result


def guarded_run(task: RealizationTask) -> RealizationResult:
    try:
        return run_realization(task)
    except Exception as exc:
        raise RealizationError(f"{task.model} realization {task.index} failed: {exc!r}") from exc


def run_tasks(tasks: Sequence[RealizationTask], workers: int = 1) -> list[RealizationResult]:
    results = parallel_map(guarded_run, tasks, workers)
    return sorted(results, key=lambda r: r.index)


def make_tasks(config, model: str, realizations: int, max_steps: int, **kw) -> list[RealizationTask]:
    return [RealizationTask(config, model, r, max_steps, **kw) for r in range(realizations)]


def trajectory_path(out_dir: Path, model: str, index: int) -> str:
    return str(Path(out_dir) / "trajectories" / f"{model}_r{index:04d}.csv")

