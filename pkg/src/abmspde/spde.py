"""Finite element solver for the stochastic density model.

Each type density is a piecewise-linear function ``rho_s = sum_j beta[s, j] phi_j``.
One semi-implicit Euler-Maruyama step solves

    (C + A dt) beta_new = C beta + F dt + G^D dB^D + sum_r G^I_r dB^I_r

per type and rescales all types by one common factor so the total mass stays
at the number of agents. ``F`` and the ``G`` matrices are always evaluated on
``max(beta, 0)``. The coefficients themselves keep their sign unless
``clip_state`` is set: clipping the state adds mass wherever noise drives a
small density negative, which biases the type fractions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.sparse.linalg import spsolve

from .fem import AssembledSystem, FemMesh, NoiseBasis, assemble_mass, hat_deposit
from .model import ConfigError, InteractionRule


@dataclass(frozen=True)
class DensityState:
    beta: np.ndarray  # (n_types, n_nodes)
    t: float = 0.0

    def masses(self, mesh: FemMesh) -> np.ndarray:
        return mesh.integrate(self.beta)

    def fraction(self, mesh: FemMesh, type_index: int) -> float:
        m = self.masses(mesh)
        return float(m[type_index - 1] / m.sum())


def checked_sqrt(values: np.ndarray) -> np.ndarray:
    """Square root that refuses negative arguments instead of returning NaN."""
    if values.size and values.min() < 0.0:
        raise FloatingPointError(f"negative square-root argument {values.min():.3e}")
    return np.sqrt(values)


def _nu_matrix(rules: Sequence[InteractionRule], n_types: int) -> np.ndarray:
    nu = np.zeros((n_types, len(rules)))
    for r, rule in enumerate(rules):
        nu[:, r] = rule.nu
    return nu


class BallIntegral:
    """Exact ``integral over [x - d, x + d] ∩ D`` of piecewise-linear densities, at fixed points."""

    def __init__(self, mesh: FemMesh, d_int: float, points: np.ndarray):
        self.mesh = mesh
        dom = mesh.domain
        self._lo = mesh.locate(np.maximum(points - d_int, dom.lower))
        self._hi = mesh.locate(np.minimum(points + d_int, dom.upper))

    def _cumulative(self, beta, cell, t):
        h = self.mesh.h
        node_cum = np.zeros(beta.shape[:-1] + (beta.shape[-1],))
        np.cumsum(0.5 * h * (beta[..., :-1] + beta[..., 1:]), axis=-1, out=node_cum[..., 1:])
        b0 = beta[..., cell]
        b1 = beta[..., cell + 1]
        return node_cum[..., cell] + h * t * (b0 + 0.5 * (b1 - b0) * t)

    def __call__(self, beta: np.ndarray) -> np.ndarray:
        val = self._cumulative(beta, *self._hi) - self._cumulative(beta, *self._lo)
        # exact value is nonnegative for nonnegative beta; strip cancellation error
        return np.maximum(val, 0.0)


class InteractionTerms:
    """Rates ``a^r = rate * rho_subject * ball(rho_catalyst)`` at the Gauss points and the
    deterministic/stochastic load vectors built from them."""

    def __init__(self, mesh: FemMesh, rules: Sequence[InteractionRule], d_int: float, n_types: int):
        self.mesh = mesh
        self.rules = tuple(r for r in rules)
        self.nu = _nu_matrix(self.rules, n_types)
        self.ball = BallIntegral(mesh, d_int, mesh.quad_points)
        self.active = [r.rate > 0 and r.subject != r.product for r in self.rules]

    def rates(self, beta: np.ndarray) -> np.ndarray:
        """``a^r`` at the Gauss points, shape ``(n_rules, n_cells, 3)``; ``beta`` must be clipped."""
        rho_q = self.mesh.at_quad(beta)
        out = np.zeros((len(self.rules),) + rho_q.shape[1:])
        for r, rule in enumerate(self.rules):
            if self.active[r]:
                out[r] = rule.rate * rho_q[rule.subject - 1] * self.ball(beta[rule.catalyst - 1])
        return out

    def vector(self, beta: np.ndarray, rates: np.ndarray | None = None) -> np.ndarray:
        rates = self.rates(beta) if rates is None else rates
        return self.nu @ self.mesh.load_vector(rates)

    def noise_matrices(self, beta: np.ndarray, chi_q: np.ndarray, rates: np.ndarray | None = None) -> np.ndarray:
        """``G^I[s, r, i, m] = nu_s^r <sqrt(a^r) chi_m, phi_i>``."""
        rates = self.rates(beta) if rates is None else rates
        root = checked_sqrt(rates)  # (R, cells, q)
        prod = np.moveaxis(root[:, :, :, None] * chi_q[None], -1, 1)  # (R, M, cells, q)
        g = np.swapaxes(self.mesh.load_vector(prod), -1, -2)  # (R, nodes, M)
        return self.nu[:, :, None, None] * g[None]

    def noise_forcing(self, rates: np.ndarray, fields: np.ndarray) -> np.ndarray:
        """``sum_r G^I_r dB_r`` given the noise fields ``sum_m chi_m dB_{r,m}`` at the Gauss points."""
        return self.nu @ self.mesh.load_vector(checked_sqrt(rates) * fields)


def assemble_interaction_vector(state: DensityState, rules: Sequence[InteractionRule], d_int: float,
                                mesh: FemMesh) -> np.ndarray:
    beta = np.maximum(state.beta, 0.0)
    return InteractionTerms(mesh, rules, d_int, beta.shape[0]).vector(beta)


def assemble_diffusion_noise(state: DensityState, mesh: FemMesh, basis: NoiseBasis,
                             sigma: float) -> np.ndarray:
    """``G^D[s, i, m] = -sigma <sqrt(rho_s) chi_m, phi_i'>``.

    The boundary term vanishes because every ``chi_m`` is zero at both ends.
    """
    beta = np.maximum(state.beta, 0.0)
    root = checked_sqrt(mesh.at_quad(beta))  # (T, cells, q)
    chi_q = basis(mesh.quad_points)  # (cells, q, M)
    prod = np.moveaxis(root[:, :, :, None] * chi_q[None], -1, 1)  # (T, M, cells, q)
    return -sigma * np.swapaxes(mesh.derivative_load_vector(prod), -1, -2)


def assemble_interaction_noise(state: DensityState, rules: Sequence[InteractionRule], mesh: FemMesh,
                               basis: NoiseBasis, d_int: float) -> np.ndarray:
    beta = np.maximum(state.beta, 0.0)
    terms = InteractionTerms(mesh, rules, d_int, beta.shape[0])
    return terms.noise_matrices(beta, basis(mesh.quad_points))


def advance(beta: np.ndarray, system: AssembledSystem, forcing: np.ndarray, n_total: float | None,
            clip: bool = False) -> np.ndarray:
    """Implicit solve with an explicit right-hand side addition, then optionally clip, then renormalise."""
    rhs = (system.C @ beta.T).T + forcing
    new = system.solve(rhs)
    if clip:
        np.maximum(new, 0.0, out=new)
    if n_total is not None:
        total = system.mesh.integrate(new).sum()
        if not total > 0:
            raise FloatingPointError("density vanished; cannot renormalise")
        new *= n_total / total
    return new


def em_step(state: DensityState, system: AssembledSystem, F: np.ndarray, GD: np.ndarray | None,
            GI: np.ndarray | None, dB_D: np.ndarray | None, dB_I: np.ndarray | None,
            n_total: float | None, clip: bool = False) -> DensityState:
    """One semi-implicit Euler-Maruyama step from explicitly assembled noise matrices.

    ``GD`` is ``(T, nodes, M)`` with increments ``dB_D`` of shape ``(T, M)``;
    ``GI`` is ``(T, R, nodes, M)`` sharing increments ``dB_I`` ``(R, M)`` across
    types. Pass ``n_total=None`` to skip renormalisation.
    """
    dt = system.dt
    forcing = F * dt
    if GD is not None:
        forcing = forcing + np.einsum("sim,sm->si", GD, dB_D)
    if GI is not None and GI.shape[1]:
        forcing = forcing + np.einsum("srim,rm->si", GI, dB_I)
    beta = advance(state.beta, system, forcing, n_total, clip)
    return DensityState(beta, state.t + dt)


class NoiseSource:
    """Brownian increments per channel and mode, reproducible across discretisations.

    Base increments of length ``noise_dt`` are drawn in chunks of
    ``chunk`` steps, mode-major, from a generator keyed by
    ``(realization, channel, chunk index)``. A step of length
    ``substeps * noise_dt`` sums consecutive base increments. Runs that differ
    only in ``dt`` (a multiple of ``noise_dt``) or in the number of modes
    therefore see the same underlying Brownian paths.
    """

    def __init__(self, seeds, realization: int, n_channels: int, n_modes: int, noise_dt: float,
                 substeps: int = 1, chunk: int = 512, purpose: str = "spde-noise"):
        self.seeds = seeds
        self.realization = realization
        self.n_channels = n_channels
        self.n_modes = n_modes
        self.scale = np.sqrt(noise_dt)
        self.substeps = substeps
        self.chunk = chunk
        self.purpose = purpose
        self._cached = (-1, None)
        self._k = 0

    def _chunk(self, c: int) -> np.ndarray:
        if self._cached[0] != c:
            block = np.empty((self.n_channels, self.n_modes, self.chunk))
            for ch in range(self.n_channels):
                rng = self.seeds.generator(self.realization, self.purpose, ch, c)
                block[ch] = rng.standard_normal((self.n_modes, self.chunk))
            self._cached = (c, block)
        return self._cached[1]

    def next(self) -> np.ndarray:
        """Increments for the next step, shape ``(n_channels, n_modes)``."""
        a = self._k * self.substeps
        b = a + self.substeps
        self._k += 1
        out = np.zeros((self.n_channels, self.n_modes))
        while a < b:
            c, off = divmod(a, self.chunk)
            take = min(b - a, self.chunk - off)
            out += self._chunk(c)[:, :, off:off + take].sum(axis=-1)
            a += take
        return out * self.scale


class SpdeSolver:
    """Everything fixed for a run: mesh, noise basis at the Gauss points, factorised system."""

    def __init__(self, config, n_cells: int | None = None, n_modes: int | None = None,
                 dt: float | None = None, deterministic: bool | None = None):
        params = config.params
        self.config = config
        self.n_types = params.n_types
        self.n_total = float(params.n_agents)
        self.sigma = params.sigma
        self.dt = params.dt if dt is None else dt
        self.deterministic = config.deterministic if deterministic is None else deterministic
        self.clip_state = config.clip_state
        self.mesh = FemMesh(config.domain, config.n_cells if n_cells is None else n_cells)
        self.basis = NoiseBasis(config.domain, config.modes if n_modes is None else n_modes)
        self.system = AssembledSystem(self.mesh, config.landscape, params.sigma, self.dt, config.drift_mode)
        self.interaction = InteractionTerms(self.mesh, params.rules, params.d_int, params.n_types)
        self.n_rules = len(params.rules)
        self.chi_q = self.basis(self.mesh.quad_points).reshape(-1, self.basis.n_modes)  # (cells*q, M)

    @property
    def n_channels(self) -> int:
        return self.n_types + self.n_rules

    def initial_state(self, spec=None) -> DensityState:
        spec = self.config.initial if spec is None else spec
        return project_initial_density(spec, self.mesh, self.system, self.n_types)

    def noise_source(self, realization: int, noise_dt: float | None = None) -> NoiseSource:
        noise_dt = self.dt if noise_dt is None else noise_dt
        substeps = round(self.dt / noise_dt)
        if substeps < 1 or abs(substeps * noise_dt - self.dt) > 1e-9 * self.dt:
            raise ConfigError("dt must be a whole multiple of noise_dt")
        return NoiseSource(self.config.seeds, realization, self.n_channels, self.basis.n_modes,
                           noise_dt, substeps)

    def forcing(self, beta: np.ndarray, dB: np.ndarray | None) -> np.ndarray:
        """``F dt + G^D dB^D + sum_r G^I_r dB^I_r``, evaluated on ``max(beta, 0)``."""
        beta = np.maximum(beta, 0.0)
        rates = self.interaction.rates(beta)
        out = self.interaction.nu @ self.mesh.load_vector(rates) * self.dt
        if dB is None:
            return out
        shape = self.mesh.quad_points.shape
        fields = (self.chi_q @ dB.T).T.reshape((self.n_channels,) + shape)
        root = checked_sqrt(self.mesh.at_quad(beta))
        out -= self.sigma * self.mesh.derivative_load_vector(root * fields[:self.n_types])
        if self.n_rules:
            out += self.interaction.noise_forcing(rates, fields[self.n_types:])
        return out

    def step(self, state: DensityState, dB: np.ndarray | None) -> DensityState:
        beta = advance(state.beta, self.system, self.forcing(state.beta, dB), self.n_total, self.clip_state)
        return DensityState(beta, state.t + self.dt)

    def steps(self, state: DensityState, n_steps: int, realization: int = 0,
              noise_dt: float | None = None) -> Iterator[DensityState]:
        noise = None if self.deterministic else self.noise_source(realization, noise_dt)
        for k in range(n_steps):
            dB = None if noise is None else noise.next()
            state = self.step(state, dB)
            state = DensityState(state.beta, (k + 1) * self.dt)
            yield state


def project_initial_density(spec, mesh: FemMesh, system: AssembledSystem | None = None,
                            n_types: int | None = None) -> DensityState:
    """Initial coefficients from analytic per-type densities or from agent positions.

    ``spec`` is either a sequence of ``TypeInit`` (L2 projection with the mass
    matrix, clipped and rescaled to each type's count) or an ``AgentState``
    (unit hat mass per agent).
    """
    if hasattr(spec, "positions"):
        n_types = int(spec.types.max()) if n_types is None else n_types
        beta = np.stack([hat_deposit(mesh, spec.positions[spec.types == s + 1]) for s in range(n_types)])
        return DensityState(beta, getattr(spec, "t", 0.0))

    spec = list(spec)
    n_types = max(ti.type for ti in spec) if n_types is None else n_types
    C = system.C if system is not None else assemble_mass(mesh)
    beta = np.zeros((n_types, mesh.n_nodes))
    for ti in spec:
        if ti.count == 0:
            continue
        load = mesh.load_vector(ti.density(mesh.quad_points, mesh.domain))
        coeffs = np.maximum(spsolve(C.tocsc(), load), 0.0)
        mass = mesh.integrate(coeffs)
        if not mass > 0:
            raise ConfigError(f"initial density of type {ti.type} has zero mass on the mesh")
        beta[ti.type - 1] += coeffs * (ti.count / mass)
    return DensityState(beta, 0.0)


def simulate_spde(config, realization: int = 0, recorders: Sequence = (), n_steps: int | None = None,
                  solver: SpdeSolver | None = None, initial_state: DensityState | None = None,
                  noise_dt: float | None = None) -> DensityState:
    """Run one realization of the density model and return the final state.

    Recorders follow the same ``wants(k)`` / ``rec(k, state)`` protocol as the
    agent simulator.
    """
    solver = solver or SpdeSolver(config)
    state = solver.initial_state() if initial_state is None else initial_state
    n_steps = round(config.params.t_end / solver.dt) if n_steps is None else n_steps
    for rec in recorders:
        if rec.wants(0):
            rec(0, state)
    for k, state in enumerate(solver.steps(state, n_steps, realization, noise_dt), start=1):
        for rec in recorders:
            if rec.wants(k):
                rec(k, state)
    return state
