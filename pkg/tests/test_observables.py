import numpy as np
import pytest

from abmspde.abm import AgentState
from abmspde.fem import FemMesh
from abmspde.model import Domain1D, DoubleWell, PolynomialLandscape
from abmspde.observables import (
    binned_boltzmann,
    boltzmann_density,
    empirical_density,
    ensemble_mean_std,
    first_passage_fraction,
    first_passage_summary,
    relative_l2_error,
)

MESH = FemMesh(Domain1D(), 128)


def test_empirical_density_single_agent_at_node():
    st = AgentState(np.array([MESH.nodes[5]]), np.array([1]))
    d = empirical_density(st, MESH, 2)
    assert d.values[0, 5] == pytest.approx(1 / MESH.h)
    assert np.count_nonzero(d.values) == 1
    assert np.all(d.values[1] == 0)


def test_empirical_density_counts():
    rng = np.random.default_rng(0)
    st = AgentState(rng.random(100), rng.integers(1, 3, 100))
    d = empirical_density(st, MESH, 2)
    assert np.abs(MESH.integrate(d.values) - st.type_counts(2)).max() < 1e-9
    assert d.values.min() >= 0


def test_first_passage_examples():
    assert first_passage_fraction([(0.0, 0.8)], 0.75) == 0.0
    assert first_passage_fraction([(0, 0.2), (0.01, 0.5), (0.02, 0.8)], 0.75) == 0.02
    assert first_passage_fraction([(0, 0.2), (0.01, 0.5)], 0.75) is None
    with pytest.raises(ValueError):
        first_passage_fraction([], 0.75)
    with pytest.raises(ValueError):
        first_passage_fraction([(0, 0.2)], 1.5)


def test_first_passage_summary_excludes_unreached():
    s = first_passage_summary([1.0, None, 3.0])
    assert s == {"mean_tau": 2.0, "std_tau": pytest.approx(np.sqrt(2)), "n_reached": 2, "R": 3}


def test_ensemble_mean_std_examples():
    st = ensemble_mean_std([np.ones(4), np.ones(4)])
    assert np.all(st.std == 0)
    st = ensemble_mean_std([np.array([0.0]), np.array([2.0])])
    assert st.mean[0] == 1.0 and st.std[0] == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        ensemble_mean_std([np.ones(3)])


def test_ensemble_mean_std_statistical():
    draws = np.random.default_rng(1).standard_normal((1000, 20))
    st = ensemble_mean_std(list(draws))
    assert np.abs(st.mean).max() < 0.1
    assert np.abs(st.std - 1).max() < 0.1


def test_relative_l2_error_examples():
    ref = np.array([1.0, -2.0, 3.0])
    assert relative_l2_error(ref, ref) == 0.0
    assert relative_l2_error(np.zeros(3), ref) == 1.0
    assert relative_l2_error(2 * ref, ref) == pytest.approx(1.0)
    with pytest.raises(ZeroDivisionError):
        relative_l2_error(ref, np.zeros(3))
    with pytest.raises(ValueError):
        relative_l2_error(ref, ref[:2])


def test_boltzmann_density():
    flat = boltzmann_density(PolynomialLandscape((3.0,), Domain1D(0.0, 2.0)), 0.15, FemMesh(Domain1D(0.0, 2.0), 8))
    assert np.allclose(flat, 0.5)
    mesh = FemMesh(Domain1D(), 6)  # nodes include 1/3 and 1/2
    p = boltzmann_density(DoubleWell(), 0.15, mesh)
    assert p[2] / p[3] == pytest.approx(np.exp(2 * 1e-4 / 0.0225), rel=1e-12)
    assert p[2] / p[3] == pytest.approx(1.00893, abs=1e-5)
    assert p @ mesh.node_weights == pytest.approx(1.0)
    assert np.allclose(p, p[::-1], atol=1e-12)
    with pytest.raises(ValueError):
        boltzmann_density(DoubleWell(), 0.0, mesh)


def test_binned_boltzmann_sums_to_one():
    edges = np.linspace(0, 1, 65)
    b = binned_boltzmann(DoubleWell(), 0.15, edges)
    assert b.sum() == pytest.approx(1.0)
    assert np.allclose(b, b[::-1], atol=1e-12)
