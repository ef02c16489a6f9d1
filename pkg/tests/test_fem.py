import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from abmspde.fem import (
    AssembledSystem,
    FemMesh,
    NoiseBasis,
    assemble_drift,
    assemble_drift_diffusion,
    assemble_mass,
    assemble_stiffness,
    hat_deposit,
)
from abmspde.model import ConfigError, Domain1D, DoubleWell, PolynomialLandscape, CallableLandscape

FLAT = PolynomialLandscape((2.0,))


def mass_oracle(n, h):
    C = np.zeros((n + 1, n + 1))
    for k in range(n):
        C[k:k + 2, k:k + 2] += h * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    return C


@pytest.mark.parametrize("n", [1, 4, 128])
def test_mass_matrix_exact(n):
    mesh = FemMesh(Domain1D(), n)
    C = assemble_mass(mesh).toarray()
    assert np.abs(C - mass_oracle(n, mesh.h)).max() < 1e-12
    assert np.allclose(C.sum(axis=1), mesh.node_weights, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(C) > 0)


def test_mass_two_nodes():
    mesh = FemMesh(Domain1D(0.0, 2.0), 1)
    assert np.allclose(assemble_mass(mesh).toarray(), [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)


@pytest.mark.parametrize("n", [1, 4, 128])
def test_flat_landscape_gives_pure_laplacian(n):
    mesh = FemMesh(Domain1D(), n)
    A = assemble_drift_diffusion(mesh, FLAT, 0.15).toarray()
    h = mesh.h
    K = np.diag(np.full(n + 1, 2 / h)) - np.diag(np.full(n, 1 / h), 1) - np.diag(np.full(n, 1 / h), -1)
    K[0, 0] = K[-1, -1] = 1 / h
    assert np.abs(A - 0.0225 / 2 * K).max() < 1e-12
    assert np.abs(assemble_stiffness(mesh).toarray().sum(axis=0)).max() < 1e-12


def test_ibp_drift_columns_sum_to_zero():
    mesh = FemMesh(Domain1D(), 32)
    D = assemble_drift(mesh, DoubleWell(), "ibp").toarray()
    assert np.abs(D.sum(axis=0)).max() < 1e-14


def test_drift_modes_agree_inside():
    well = DoubleWell()
    mesh = FemMesh(Domain1D(), 32)
    ibp = assemble_drift_diffusion(mesh, well, 0.15, "ibp").toarray()
    direct = assemble_drift_diffusion(mesh, well, 0.15, "direct").toarray()
    diff = direct - ibp
    # the direct form keeps the boundary flux V' phi_i phi_j at the two end nodes
    assert diff[0, 0] == pytest.approx(float(well.gradient(0.0)), abs=1e-12)
    assert diff[-1, -1] == pytest.approx(-float(well.gradient(1.0)), abs=1e-12)
    diff[0, 0] = diff[-1, -1] = 0.0
    assert np.abs(diff).max() < 1e-8


def test_direct_mode_needs_second_derivative():
    land = CallableLandscape(lambda x: x * 0, lambda x: x * 0)
    with pytest.raises(ConfigError):
        assemble_drift(FemMesh(Domain1D(), 4), land, "direct")
    with pytest.raises(ConfigError):
        assemble_drift(FemMesh(Domain1D(), 4), FLAT, "upwind")


def test_partition_of_unity_and_nodal_interpolation():
    mesh = FemMesh(Domain1D(-1.0, 2.0), 7)
    x = np.linspace(-1, 2, 301)
    total = sum(mesh.basis(i, x) for i in range(mesh.n_nodes))
    assert np.allclose(total, 1.0)
    vals = np.array([mesh.basis(i, mesh.nodes) for i in range(mesh.n_nodes)])
    assert np.allclose(vals, np.eye(mesh.n_nodes))
    dsum = sum(mesh.basis_derivative(i, x[1:-1] + 1e-9) for i in range(mesh.n_nodes))
    assert np.allclose(dsum, 0.0)


def test_load_vectors_of_constants():
    mesh = FemMesh(Domain1D(), 16)
    ones = np.ones(mesh.quad_points.shape)
    assert np.allclose(mesh.load_vector(ones), mesh.node_weights)
    d = mesh.derivative_load_vector(ones)
    expected = np.zeros(mesh.n_nodes)
    expected[[0, -1]] = [-1.0, 1.0]
    assert np.allclose(d, expected)


def test_noise_basis_orthonormal():
    dom = Domain1D(0.0, 2.0)
    basis = NoiseBasis(dom, 20)
    g, w = np.polynomial.legendre.leggauss(200)
    x = 1.0 + g
    chi = basis(x)
    gram = (chi * w[:, None]).T @ chi
    assert np.abs(gram - np.eye(20)).max() < 1e-10
    assert np.abs(basis(np.array([0.0, 2.0]))).max() < 1e-12


def test_system_factorisation_residual():
    mesh = FemMesh(Domain1D(), 128)
    sys_ = AssembledSystem(mesh, DoubleWell(), 0.15, 0.01)
    rhs = np.random.default_rng(0).random((2, mesh.n_nodes))
    x = sys_.solve(rhs)
    assert np.abs(sys_.lhs @ x.T - rhs.T).max() <= 1e-12
    assert np.allclose(x[0], spsolve(sys_.lhs, rhs[0]))


def test_hat_deposit_unit_mass():
    mesh = FemMesh(Domain1D(), 8)
    beta = hat_deposit(mesh, np.array([mesh.nodes[3]]))
    assert beta[3] == pytest.approx(1 / mesh.h)
    assert np.count_nonzero(beta) == 1
    for x in (0.0, 0.01, 0.5, 0.99, 1.0):
        assert mesh.integrate(hat_deposit(mesh, np.array([x]))) == pytest.approx(1.0, abs=1e-12)
