"""Agent-based simulator: drifted Brownian agents with contact-triggered type changes.

Each step advances positions by Euler-Maruyama with reflecting walls,
rebuilds the contact network with a cell list and applies at most one type
change per agent, all agents deciding on the same pre-step types.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .model import ConfigError, Domain1D, InteractionRule, SuitabilityLandscape

# cell width floor, as a fraction of the domain length
_MAX_CELLS = 4096


@dataclass(frozen=True)
class AgentState:
    positions: np.ndarray
    types: np.ndarray  # 1-based type indices
    t: float = 0.0

    def __post_init__(self):
        if self.positions.shape != self.types.shape:
            raise ValueError("positions and types must have equal length")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    def type_counts(self, n_types: int) -> np.ndarray:
        return np.bincount(self.types - 1, minlength=n_types)

    def fraction(self, type_index: int) -> float:
        return float(np.count_nonzero(self.types == type_index)) / self.n_agents


@dataclass(frozen=True)
class ContactNetwork:
    """Neighbour lists in compressed row form: neighbours of ``i`` are
    ``indices[indptr[i]:indptr[i+1]]``, sorted ascending."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def rows(self) -> np.ndarray:
        """Row index for every stored entry (same length as ``indices``)."""
        return np.repeat(np.arange(self.n_agents), np.diff(self.indptr))

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self) -> set[tuple[int, int]]:
        """Undirected edges ``(i, j)`` with ``i < j``."""
        rows = self.rows
        keep = rows < self.indices
        return set(zip(rows[keep].tolist(), self.indices[keep].tolist()))

    def to_dense(self) -> np.ndarray:
        adj = np.zeros((self.n_agents, self.n_agents), dtype=np.int8)
        adj[self.rows, self.indices] = 1
        return adj


def step_positions(state: AgentState, landscape: SuitabilityLandscape, sigma: float, dt: float,
                   noise: np.ndarray, domain: Domain1D | None = None) -> AgentState:
    """One Euler-Maruyama step ``x - V'(x) dt + sigma sqrt(dt) noise``, reflected into the domain."""
    domain = domain or landscape.domain
    x = state.positions
    proposed = x - landscape.gradient(x) * dt + (sigma * np.sqrt(dt)) * noise
    return AgentState(domain.reflect(proposed), state.types, state.t + dt)


def build_contact_network(positions: np.ndarray, d_int: float,
                          domain: Domain1D | None = None) -> ContactNetwork:
    """Exact contact network ``|x_i - x_j| <= d_int`` via a uniform cell list.

    Agents are bucketed into cells of width ``max(d_int, L / 4096)``; after
    sorting by cell, the candidates of an agent (its own and the two adjacent
    cells) form one contiguous slice of the sorted order.
    """
    if not d_int > 0:
        raise ConfigError("d_int must be > 0")
    x = np.asarray(positions, dtype=float)
    n = x.shape[0]
    if n < 2:
        return ContactNetwork(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    lo, hi = (domain.lower, domain.upper) if domain is not None else (x.min(), x.max())
    width = max(d_int, (hi - lo) / _MAX_CELLS)
    n_cells = int((hi - lo) / width) + 1
    cell = np.minimum(((x - lo) / width).astype(np.int64), n_cells - 1)

    order = np.argsort(cell, kind="stable")
    start = np.searchsorted(cell[order], np.arange(n_cells + 1))
    first = start[np.maximum(cell - 1, 0)]
    stop = start[np.minimum(cell + 2, n_cells)]
    counts = stop - first

    rows = np.repeat(np.arange(n), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = order[np.repeat(first, counts) + offsets]
    keep = (rows != cols) & (np.abs(x[rows] - x[cols]) <= d_int)
    key = np.sort(rows[keep] * n + cols[keep])
    rows, cols = np.divmod(key, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return ContactNetwork(indptr, cols)


def brute_force_network(positions: np.ndarray, d_int: float) -> ContactNetwork:
    """O(N^2) reference for :func:`build_contact_network`."""
    x = np.asarray(positions, dtype=float)
    adj = np.abs(x[:, None] - x[None, :]) <= d_int
    np.fill_diagonal(adj, False)
    rows, cols = np.nonzero(adj)
    indptr = np.zeros(x.shape[0] + 1, dtype=np.int64)
    np.cumsum(adj.sum(axis=1), out=indptr[1:])
    return ContactNetwork(indptr, cols.astype(np.int64))


def transition_rates(state: AgentState, network: ContactNetwork,
                     rules: Sequence[InteractionRule]) -> np.ndarray:
    """Rate table ``lam[i, r] = rate_r * #(catalyst neighbours of i)`` for agents of the subject type."""
    types = state.types
    n = types.shape[0]
    rows, cols = network.rows, network.indices
    lam = np.zeros((n, len(rules)))
    for r, rule in enumerate(rules):
        if rule.rate == 0:
            continue
        hits = rows[types[cols] == rule.catalyst]
        lam[:, r] = rule.rate * np.bincount(hits, minlength=n) * (types == rule.subject)
    return lam


def step_types(state: AgentState, rates: np.ndarray, dt: float, u_event: np.ndarray,
               u_rule: np.ndarray, rules: Sequence[InteractionRule]) -> AgentState:
    """Apply at most one type change per agent.

    Agent ``i`` changes with probability ``1 - exp(-Lambda_i dt)``; the rule
    is then picked by comparing ``u_rule`` against the cumulative rates in
    rule order. Rates of rules whose subject is not the agent's type are
    zero, so the sum over all rules equals the sum over the agent's rule set.
    """
    total = rates.sum(axis=1)
    fire = u_event < -np.expm1(-total * dt)
    if not fire.any():
        return state
    cum = np.cumsum(rates[fire], axis=1)
    # (0, 1] so the first rule whose cumulative rate reaches the target has a positive rate
    target = (1.0 - u_rule[fire]) * cum[:, -1]
    chosen = np.minimum((cum < target[:, None]).sum(axis=1), len(rules) - 1)
    products = np.array([r.product for r in rules])
    types = state.types.copy()
    types[fire] = products[chosen]
    return AgentState(state.positions, types, state.t)


def initial_agents(initial, domain: Domain1D, rng: np.random.Generator) -> AgentState:
    """Sample initial positions per type, in the order the types are listed."""
    xs, ys = [], []
    for ti in initial:
        xs.append(ti.sample(rng, domain))
        ys.append(np.full(ti.count, ti.type, dtype=np.int64))
    return AgentState(np.concatenate(xs), np.concatenate(ys), 0.0)


def abm_steps(state: AgentState, landscape: SuitabilityLandscape, params,
              rng: np.random.Generator, n_steps: int | None = None) -> Iterator[AgentState]:
    """Yield the state after each of ``n_steps`` steps (default ``params.n_steps``).

    Per step the stream is consumed in a fixed order: position noise, event
    uniforms, rule uniforms (``N`` draws each).
    """
    domain = landscape.domain
    rules = params.rules
    active = any(r.rate > 0 and r.subject != r.product for r in rules)
    n = state.n_agents
    n_steps = params.n_steps if n_steps is None else n_steps
    for k in range(n_steps):
        zeta = rng.standard_normal(n)
        u_event = rng.random(n)
        u_rule = rng.random(n)
        state = step_positions(state, landscape, params.sigma, params.dt, zeta, domain)
        state = AgentState(state.positions, state.types, (k + 1) * params.dt)
        if active:
            network = build_contact_network(state.positions, params.d_int, domain)
            lam = transition_rates(state, network, rules)
            state = step_types(state, lam, params.dt, u_event, u_rule, rules)
        yield state


def simulate_abm(config, realization: int = 0, recorders: Sequence = (), n_steps: int | None = None,
                 initial_state: AgentState | None = None) -> AgentState:
    """Run one realization of the agent model and return the final state.

    Recorders are called as ``recorder(k, state)`` at step 0 and after every
    step ``k`` for which ``recorder.wants(k)`` is true.
    """
    seeds = config.seeds
    if initial_state is None:
        initial_state = initial_agents(config.initial, config.domain, seeds.generator(realization, "abm-init"))
    rng = seeds.generator(realization, "abm-dynamics")
    state = initial_state
    for rec in recorders:
        if rec.wants(0):
            rec(0, state)
    for k, state in enumerate(abm_steps(state, config.landscape, config.params, rng, n_steps), start=1):
        for rec in recorders:
            if rec.wants(k):
                rec(k, state)
    return state
