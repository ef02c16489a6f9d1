"""Piecewise-linear finite elements on a uniform 1-D grid."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import ConfigError, Domain1D, SuitabilityLandscape

# 3-point Gauss-Legendre rule mapped to [0, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
GAUSS_NODES = 0.5 * (_GL_NODES + 1.0)
GAUSS_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class FemMesh:
    domain: Domain1D
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 1:
            raise ConfigError("n_cells must be >= 1")

    @property
    def h(self) -> float:
        return self.domain.length / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.domain.lower + self.h * np.arange(self.n_nodes)

    @cached_property
    def node_weights(self) -> np.ndarray:
        """``integral(phi_i)``: ``h`` inside, ``h/2`` at the two ends."""
        w = np.full(self.n_nodes, self.h)
        w[[0, -1]] = 0.5 * self.h
        return w

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Gauss points, shape ``(n_cells, 3)``."""
        return self.nodes[:-1, None] + self.h * GAUSS_NODES[None, :]

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return self.h * GAUSS_WEIGHTS

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and local coordinate, clamped to [0, 1], of each point."""
        s = (np.asarray(x, dtype=float) - self.domain.lower) / self.h
        cell = np.clip(np.floor(s).astype(np.int64), 0, self.n_cells - 1)
        return cell, np.clip(s - cell, 0.0, 1.0)

    def basis(self, i: int, x) -> np.ndarray:
        """Hat function ``phi_i`` at ``x``."""
        return np.maximum(0.0, 1.0 - np.abs((np.asarray(x, dtype=float) - self.nodes[i]) / self.h))

    def basis_derivative(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = (x - self.nodes[i]) / self.h
        out = np.where((d > -1) & (d < 0), 1.0 / self.h, 0.0)
        return np.where((d >= 0) & (d < 1), -1.0 / self.h, out)

    def interpolate(self, coeffs: np.ndarray, x) -> np.ndarray:
        """Evaluate ``sum_j coeffs[..., j] phi_j(x)``."""
        cell, t = self.locate(x)
        return coeffs[..., cell] * (1.0 - t) + coeffs[..., cell + 1] * t

    def at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at the Gauss points, shape ``(..., n_cells, 3)``."""
        left = coeffs[..., :-1, None]
        right = coeffs[..., 1:, None]
        return left + (right - left) * GAUSS_NODES

    def integrate(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.node_weights

    def load_vector(self, values: np.ndarray) -> np.ndarray:
        """``<f, phi_i>`` from ``f`` sampled at the Gauss points (leading axes kept)."""
        wl = values @ (self.quad_weights * (1.0 - GAUSS_NODES))
        wr = values @ (self.quad_weights * GAUSS_NODES)
        out = np.zeros(values.shape[:-2] + (self.n_nodes,))
        out[..., :-1] += wl
        out[..., 1:] += wr
        return out

    def derivative_load_vector(self, values: np.ndarray) -> np.ndarray:
        """``<f, phi_i'>`` from ``f`` sampled at the Gauss points."""
        cell_int = values @ GAUSS_WEIGHTS  # (1/h) * integral over the cell
        out = np.zeros(values.shape[:-2] + (self.n_nodes,))
        out[..., :-1] -= cell_int
        out[..., 1:] += cell_int
        return out


@dataclass(frozen=True)
class NoiseBasis:
    """Sine system ``chi_m(x) = sqrt(2/L) sin(pi m (x - lower) / L)``, m = 1..M."""

    domain: Domain1D
    n_modes: int

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigError("n_modes must be >= 1")

    def __call__(self, x) -> np.ndarray:
        """Mode values, shape ``x.shape + (M,)``."""
        x = np.asarray(x, dtype=float)
        m = np.arange(1, self.n_modes + 1)
        L = self.domain.length
        arg = np.pi * ((x[..., None] - self.domain.lower) / L) * m
        return np.sqrt(2.0 / L) * np.sin(arg)


def assemble_mass(mesh: FemMesh) -> sp.csr_matrix:
    """Galerkin mass matrix ``C_ij = <phi_j, phi_i>`` (exact, tridiagonal)."""
    h = mesh.h
    main = np.full(mesh.n_nodes, 2.0 * h / 3.0)
    main[[0, -1]] = h / 3.0
    off = np.full(mesh.n_cells, h / 6.0)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def assemble_stiffness(mesh: FemMesh) -> sp.csr_matrix:
    """Neumann stiffness matrix ``<phi_j', phi_i'>``."""
    h = mesh.h
    main = np.full(mesh.n_nodes, 2.0 / h)
    main[[0, -1]] = 1.0 / h
    off = np.full(mesh.n_cells, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def assemble_drift(mesh: FemMesh, landscape: SuitabilityLandscape, mode: str = "ibp") -> sp.csr_matrix:
    """Drift part of the operator matrix, ``-<(V' phi_j)', phi_i>``.

    ``ibp`` integrates by parts and drops the boundary flux, giving
    ``<V' phi_j, phi_i'>`` whose columns sum to zero. ``direct`` keeps the
    undifferentiated form and needs ``V''``.
    """
    h = mesh.h
    xq = mesh.quad_points
    w = mesh.quad_weights
    phi = np.stack([1.0 - GAUSS_NODES, GAUSS_NODES])  # local basis (a, q)
    dphi = np.array([-1.0 / h, 1.0 / h])
    dv = landscape.gradient(xq)  # (cells, q)
    if mode == "ibp":
        # local[k, a, b] = int V' phi_b phi_a'
        local = np.einsum("kq,bq,q,a->kab", dv, phi, w, dphi)
    elif mode == "direct":
        if not landscape.has_second_derivative:
            raise ConfigError("direct drift assembly needs the landscape's second derivative")
        d2v = landscape.second_derivative(xq)
        local = -(np.einsum("kq,bq,aq,q->kab", d2v, phi, phi, w)
                  + np.einsum("kq,b,aq,q->kab", dv, dphi, phi, w))
    else:
        raise ConfigError(f"unknown drift assembly mode {mode!r}")
    rows = np.arange(mesh.n_cells)[:, None, None] + np.array([0, 1])[None, :, None]
    cols = np.arange(mesh.n_cells)[:, None, None] + np.array([0, 1])[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_drift_diffusion(mesh: FemMesh, landscape: SuitabilityLandscape, sigma: float,
                             mode: str = "ibp") -> sp.csr_matrix:
    """``A = sigma^2/2 <phi_j', phi_i'> - <(V' phi_j)', phi_i>``."""
    return (0.5 * sigma**2 * assemble_stiffness(mesh) + assemble_drift(mesh, landscape, mode)).tocsr()


class AssembledSystem:
    """Time-independent matrices of the semi-implicit scheme with ``C + A dt`` factorised once."""

    def __init__(self, mesh: FemMesh, landscape: SuitabilityLandscape, sigma: float, dt: float,
                 mode: str = "ibp"):
        self.mesh = mesh
        self.dt = dt
        self.C = assemble_mass(mesh)
        self.A = assemble_drift_diffusion(mesh, landscape, sigma, mode)
        self.lhs = (self.C + dt * self.A).tocsc()
        self._lu = splu(self.lhs)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(C + A dt) x = rhs`` for each row of ``rhs``."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return self._lu.solve(rhs)
        return self._lu.solve(np.ascontiguousarray(rhs.T)).T


def hat_deposit(mesh: FemMesh, x) -> np.ndarray:
    """Nodal coefficients of unit masses at ``x``.

    An agent splits its mass between the two nodes of its cell by the
    barycentric weights; each share is divided by ``integral(phi_j)`` so every
    agent integrates to exactly one, including next to the boundary.
    """
    x = np.asarray(x, dtype=float)
    cell, t = mesh.locate(x)
    mass = np.bincount(cell, weights=1.0 - t, minlength=mesh.n_nodes)
    mass += np.bincount(cell + 1, weights=t, minlength=mesh.n_nodes)
    return mass / mesh.node_weights
