"""Scalar linear SDEs with known pathwise solutions, used to measure the strong
order of the semi-implicit Euler-Maruyama step (implicit in the linear drift,
explicit in the noise), the same splitting the density solver uses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SeedPolicy


@dataclass(frozen=True)
class OrderResult:
    dts: np.ndarray
    errors: np.ndarray
    slope: float


def fitted_slope(dts, errors) -> float:
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def _ratios(dts, T: float) -> tuple[float, np.ndarray]:
    dts = np.asarray(dts, dtype=float)
    fine = dts.min()
    ratios = np.rint(dts / fine).astype(int)
    if np.any(np.abs(ratios * fine - dts) > 1e-9 * dts) or abs(round(T / fine) * fine - T) > 1e-9 * T:
        raise ValueError("every dt and T must be whole multiples of the finest dt")
    return fine, ratios


def _coarsen(dw: np.ndarray, ratio: int) -> np.ndarray:
    return dw.reshape(dw.shape[0], -1, ratio).sum(axis=2)


def ou_strong_errors(dts, T: float = 1.0, n_paths: int = 2000, theta: float = 1.0, sigma: float = 1.0,
                     x0: float = 1.0, seed: int = 0) -> OrderResult:
    """Mean absolute error at ``T`` of ``dX = -theta X dt + sigma dW``.

    The reference is the exact solution driven by the same path: on the
    finest grid the pair (increment, weighted stochastic integral) is sampled
    from its joint Gaussian law and propagated exactly.
    """
    fine, ratios = _ratios(dts, T)
    n = round(T / fine)
    rng = SeedPolicy(seed).generator(0, "sde-order-ou")
    z = rng.standard_normal((2, n_paths, n))
    decay = np.exp(-theta * fine)
    cov = (1.0 - decay) / theta
    var_i = (1.0 - decay**2) / (2.0 * theta)
    dw = np.sqrt(fine) * z[0]
    integral = cov / fine * dw + np.sqrt(max(var_i - cov**2 / fine, 0.0)) * z[1]

    exact = np.full(n_paths, x0)
    for k in range(n):
        exact = decay * exact + sigma * integral[:, k]

    errors = []
    for dt, ratio in zip(np.asarray(dts, dtype=float), ratios):
        inc = _coarsen(dw, ratio)
        x = np.full(n_paths, x0)
        for k in range(inc.shape[1]):
            x = (x + sigma * inc[:, k]) / (1.0 + theta * dt)
        errors.append(np.mean(np.abs(x - exact)))
    errors = np.array(errors)
    return OrderResult(np.asarray(dts, dtype=float), errors, fitted_slope(dts, errors))


def gbm_strong_errors(dts, T: float = 1.0, n_paths: int = 2000, mu: float = -1.0, sigma: float = 1.0,
                      x0: float = 1.0, seed: int = 0) -> OrderResult:
    """Same measurement for ``dX = mu X dt + sigma X dW`` (multiplicative noise),
    exact solution ``x0 exp((mu - sigma^2/2) T + sigma W_T)``."""
    fine, ratios = _ratios(dts, T)
    n = round(T / fine)
    rng = SeedPolicy(seed).generator(0, "sde-order-gbm")
    dw = np.sqrt(fine) * rng.standard_normal((n_paths, n))
    exact = x0 * np.exp((mu - 0.5 * sigma**2) * T + sigma * dw.sum(axis=1))
    errors = []
    for dt, ratio in zip(np.asarray(dts, dtype=float), ratios):
        inc = _coarsen(dw, ratio)
        x = np.full(n_paths, x0)
        for k in range(inc.shape[1]):
            x = (x + sigma * x * inc[:, k]) / (1.0 - mu * dt)
        errors.append(np.mean(np.abs(x - exact)))
    errors = np.array(errors)
    return OrderResult(np.asarray(dts, dtype=float), errors, fitted_slope(dts, errors))
