"""Problem definition shared by the agent and density simulators.

Holds the 1-D domain, the suitability landscape, interaction rules, run
parameters and the seeding policy that derives independent random streams
per realization.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid model configuration."""


class DomainError(ValueError):
    """A position lies outside the simulation domain."""


@dataclass(frozen=True)
class Domain1D:
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError(f"domain needs lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def reflect(self, x):
        """Fold positions back into the domain by repeated mirror reflection.

        The reflection map has period ``2 * length``, so arbitrarily large
        oversteps are handled without iterating.
        """
        length = self.length
        y = np.mod(np.asarray(x, dtype=float) - self.lower, 2.0 * length)
        y = np.where(y > length, 2.0 * length - y, y)
        return y + self.lower


class SuitabilityLandscape:
    """Potential ``V`` with its derivatives on a 1-D domain.

    Subclasses implement ``potential`` and ``gradient`` (vectorised over
    numpy arrays). ``second_derivative`` is optional and only needed by the
    direct drift assembly of the finite element solver.
    """

    domain: Domain1D

    def potential(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def second_derivative(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no second derivative")

    @property
    def has_second_derivative(self) -> bool:
        try:
            self.second_derivative(np.array([self.domain.lower]))
        except NotImplementedError:
            return False
        return True


@dataclass(frozen=True)
class DoubleWell(SuitabilityLandscape):
    """``V(x) = scale * (stiffness * (x - center)**2 - offset)**2``.

    The defaults give the symmetric landscape with minima at 1/3 and 2/3 on
    [0, 1] used for the innovation spreading example.
    """

    scale: float = 0.01
    stiffness: float = 3.6
    center: float = 0.5
    offset: float = 0.1
    domain: Domain1D = field(default_factory=Domain1D)

    def potential(self, x):
        u = np.asarray(x, dtype=float) - self.center
        return self.scale * (self.stiffness * u * u - self.offset) ** 2

    def gradient(self, x):
        u = np.asarray(x, dtype=float) - self.center
        return 4.0 * self.scale * self.stiffness * u * (self.stiffness * u * u - self.offset)

    def second_derivative(self, x):
        u = np.asarray(x, dtype=float) - self.center
        return 4.0 * self.scale * self.stiffness * (3.0 * self.stiffness * u * u - self.offset)


@dataclass(frozen=True)
class PolynomialLandscape(SuitabilityLandscape):
    """``V(x) = sum_k coeffs[k] * x**k``."""

    coeffs: tuple[float, ...] = (0.0,)
    domain: Domain1D = field(default_factory=Domain1D)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def _poly(self):
        return np.polynomial.Polynomial(self.coeffs)

    def potential(self, x):
        return self._poly(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self._poly.deriv(1)(np.asarray(x, dtype=float))

    def second_derivative(self, x):
        return self._poly.deriv(2)(np.asarray(x, dtype=float))


class CallableLandscape(SuitabilityLandscape):
    """Landscape from user supplied evaluators (not picklable for process pools)."""

    def __init__(self, potential: Callable, gradient: Callable,
                 second_derivative: Callable | None = None, domain: Domain1D | None = None):
        self._v = potential
        self._dv = gradient
        self._d2v = second_derivative
        self.domain = domain or Domain1D()

    def potential(self, x):
        return self._v(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self._dv(np.asarray(x, dtype=float))

    def second_derivative(self, x):
        if self._d2v is None:
            raise NotImplementedError("no second derivative supplied")
        return self._d2v(np.asarray(x, dtype=float))


def eval_gradient(landscape: SuitabilityLandscape, x):
    """Return ``V'(x)``, refusing points outside the landscape's domain."""
    if not landscape.domain.contains(x):
        raise DomainError(f"x={x!r} outside [{landscape.domain.lower}, {landscape.domain.upper}]")
    g = landscape.gradient(x)
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True)
class InteractionRule:
    """Catalytic type change ``T_subject + T_catalyst -> T_product + T_catalyst``.

    Type indices are 1-based; ``nu`` is indexed by ``type - 1``.
    """

    subject: int
    catalyst: int
    product: int
    rate: float
    nu: tuple[int, ...]

    @property
    def n_types(self) -> int:
        return len(self.nu)


def build_rule(subject: int, catalyst: int, product: int, rate: float, n_types: int) -> InteractionRule:
    if n_types < 1:
        raise ConfigError("n_types must be >= 1")
    for name, idx in (("subject", subject), ("catalyst", catalyst), ("product", product)):
        if not (isinstance(idx, (int, np.integer)) and 1 <= idx <= n_types):
            raise ConfigError(f"{name} index {idx!r} not in 1..{n_types}")
    if not rate >= 0:
        raise ConfigError(f"rate must be >= 0, got {rate}")
    nu = [0] * n_types
    if subject != product:
        nu[subject - 1] = -1
        nu[product - 1] = 1
    return InteractionRule(int(subject), int(catalyst), int(product), float(rate), tuple(nu))


@dataclass(frozen=True)
class ModelParams:
    n_types: int
    n_agents: int
    sigma: float
    d_int: float
    rules: tuple[InteractionRule, ...]
    t_end: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.n_types < 1 or self.n_agents < 1:
            raise ConfigError("n_types and n_agents must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.d_int <= 0:
            raise ConfigError("d_int must be > 0")
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigError("dt and t_end must be > 0")
        if self.dt > self.t_end:
            raise ConfigError("dt must not exceed t_end")
        k = round(self.t_end / self.dt)
        if abs(k * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise ConfigError(f"t_end={self.t_end} is not a whole number of dt={self.dt} steps")
        for r in self.rules:
            if r.n_types != self.n_types:
                raise ConfigError("rule built for a different number of types")

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)

    def steps_until(self, t: float) -> int:
        return round(t / self.dt)


@dataclass(frozen=True)
class TypeInit:
    """Initial distribution of the agents of one type.

    ``kind`` is ``"normal"`` (``mean``/``std``, truncated to the domain) or
    ``"uniform"``.
    """

    type: int
    count: int
    kind: str = "normal"
    mean: float = 0.5
    std: float = 0.1

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise ConfigError(f"unknown initial distribution {self.kind!r}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.kind == "normal" and self.std <= 0:
            raise ConfigError("std must be > 0")

    def density(self, x, domain: Domain1D):
        """Unnormalised density shape on ``domain`` (mass fixed later)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(x)
        z = (x - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2 * math.pi))

    def sample(self, rng: np.random.Generator, domain: Domain1D) -> np.ndarray:
        """Draw ``count`` positions, rejection-resampling anything outside the domain."""
        if self.kind == "uniform":
            return rng.uniform(domain.lower, domain.upper, self.count)
        out = rng.normal(self.mean, self.std, self.count)
        bad = (out < domain.lower) | (out > domain.upper)
        while bad.any():
            out[bad] = rng.normal(self.mean, self.std, int(bad.sum()))
            bad = (out < domain.lower) | (out > domain.upper)
        return out


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode())


@dataclass(frozen=True)
class SeedPolicy:
    """Derives independent, reproducible streams from one master seed.

    A stream is addressed by ``(realization, purpose tag, *extra)`` through
    numpy's ``SeedSequence`` spawn keys, so results never depend on the order
    in which realizations are executed.
    """

    master_seed: int

    def sequence(self, realization: int, purpose: str, *extra: int) -> np.random.SeedSequence:
        key = (int(realization), _tag_code(purpose)) + tuple(int(e) for e in extra)
        return np.random.SeedSequence(int(self.master_seed) % 2**64, spawn_key=key)

    def generator(self, realization: int, purpose: str, *extra: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(realization, purpose, *extra)))


def split_counts(fractions: Sequence[float], total: int) -> list[int]:
    """Largest-remainder split of ``total`` by ``fractions``."""
    f = np.asarray(fractions, dtype=float)
    f = f / f.sum()
    raw = f * total
    base = np.floor(raw).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return [int(b) for b in base]
