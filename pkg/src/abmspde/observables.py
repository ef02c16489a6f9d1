"""Measurements shared by both models: empirical densities, first-passage
times, ensemble statistics, model-comparison errors and the Boltzmann
reference density."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .fem import FemMesh, hat_deposit


@dataclass(frozen=True)
class EmpiricalDensity:
    values: np.ndarray  # (n_types, n_nodes)
    t: float


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    std: np.ndarray
    n: int
    t: float | None = None


def empirical_density(state, mesh: FemMesh, n_types: int) -> EmpiricalDensity:
    """Sum of unit hat masses at the agents' positions, one row per type."""
    values = np.stack([hat_deposit(mesh, state.positions[state.types == s + 1]) for s in range(n_types)])
    return EmpiricalDensity(values, state.t)


def first_passage_fraction(series: Iterable[tuple[float, float]], threshold: float) -> float | None:
    """Earliest time whose fraction reaches ``threshold``; ``None`` if never reached."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    seen = False
    for t, frac in series:
        seen = True
        if frac >= threshold:
            return float(t)
    if not seen:
        raise ValueError("empty series")
    return None


def first_passage_summary(taus: Sequence[float | None]) -> dict:
    """Mean/std over the realizations that reached the threshold, plus counts."""
    reached = np.array([t for t in taus if t is not None], dtype=float)
    return {
        "mean_tau": float(reached.mean()) if reached.size else float("nan"),
        "std_tau": float(reached.std(ddof=1)) if reached.size > 1 else float("nan"),
        "n_reached": int(reached.size),
        "R": len(taus),
    }


def ensemble_mean_std(samples: Sequence[np.ndarray], t: float | None = None) -> EnsembleStats:
    """Elementwise sample mean and unbiased (R - 1) standard deviation."""
    arr = np.asarray(samples, dtype=float)
    if arr.shape[0] < 2:
        raise ValueError("need at least two samples")
    return EnsembleStats(arr.mean(axis=0), arr.std(axis=0, ddof=1), arr.shape[0], t)


def relative_l2_error(a: np.ndarray, ref: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if a.shape != ref.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {ref.shape}")
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ZeroDivisionError("reference has zero norm")
    return float(np.linalg.norm(a - ref) / norm)


def boltzmann_density(landscape, sigma: float, mesh: FemMesh) -> np.ndarray:
    """Nodal ``exp(-2 V / sigma^2)`` normalised by the trapezoid rule."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    v = landscape.potential(mesh.nodes)
    p = np.exp(-2.0 * (v - v.min()) / sigma**2)
    return p / (p @ mesh.node_weights)


def binned_boltzmann(landscape, sigma: float, edges: np.ndarray, points_per_bin: int = 64) -> np.ndarray:
    """Probability mass of ``exp(-2 V / sigma^2)`` in each bin (Gauss-Legendre per bin)."""
    g, w = np.polynomial.legendre.leggauss(points_per_bin)
    a, b = edges[:-1, None], edges[1:, None]
    x = 0.5 * (b - a) * g + 0.5 * (a + b)
    v = landscape.potential(x)
    dens = np.exp(-2.0 * (v - v.min()) / sigma**2)
    mass = (dens * w).sum(axis=1) * 0.5 * (edges[1:] - edges[:-1])
    return mass / mass.sum()
