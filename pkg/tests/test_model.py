import numpy as np
import pytest

from abmspde.model import (
    ConfigError,
    Domain1D,
    DomainError,
    DoubleWell,
    ModelParams,
    PolynomialLandscape,
    SeedPolicy,
    TypeInit,
    build_rule,
    eval_gradient,
    split_counts,
)


@pytest.fixture
def well():
    return DoubleWell()


@pytest.mark.parametrize("x, expected", [(0.5, 0.0), (2 / 3, 0.0), (1 / 3, 0.0), (1.0, 0.0576)])
def test_double_well_gradient_values(well, x, expected):
    assert eval_gradient(well, x) == pytest.approx(expected, abs=1e-12)


def test_gradient_outside_domain(well):
    with pytest.raises(DomainError):
        eval_gradient(well, 1.2)
    with pytest.raises(DomainError):
        eval_gradient(well, np.array([0.5, -0.1]))


def test_double_well_potential_values(well):
    assert well.potential(1 / 3) == pytest.approx(0.0, abs=1e-15)
    assert well.potential(0.5) == pytest.approx(1e-4)


def test_derivatives_match_finite_differences(well):
    x = np.random.default_rng(0).uniform(0.01, 0.99, 100)
    eps = 1e-6
    fd1 = (well.potential(x + eps) - well.potential(x - eps)) / (2 * eps)
    fd2 = (well.gradient(x + eps) - well.gradient(x - eps)) / (2 * eps)
    g, h = well.gradient(x), well.second_derivative(x)
    assert np.all(np.abs(fd1 - g) <= 1e-6 * np.maximum(np.abs(g), 1e-3))
    assert np.all(np.abs(fd2 - h) <= 1e-6 * np.maximum(np.abs(h), 1e-3))


def test_polynomial_landscape():
    p = PolynomialLandscape((1.0, 0.0, 2.0))
    assert p.gradient(0.25) == pytest.approx(1.0)
    assert p.second_derivative(0.9) == pytest.approx(4.0)
    assert p.has_second_derivative


def test_domain():
    d = Domain1D(0.0, 1.0)
    assert d.reflect(-0.03) == pytest.approx(0.03)
    assert d.reflect(2.05) == pytest.approx(0.05)
    assert d.reflect(1.2) == pytest.approx(0.8)
    with pytest.raises(ConfigError):
        Domain1D(1.0, 1.0)


def test_build_rule_stoichiometry():
    assert build_rule(1, 2, 2, 0.1, 2).nu == (-1, 1)
    assert build_rule(1, 2, 1, 0.5, 2).nu == (0, 0)
    assert build_rule(3, 1, 2, 0.2, 3).nu == (0, 1, -1)


@pytest.mark.parametrize("args", [(3, 1, 2, 0.1, 2), (0, 1, 2, 0.1, 2), (1, 2, 2, -0.1, 2), (1, 2, 2, 0.1, 0)])
def test_build_rule_rejects(args):
    with pytest.raises(ConfigError):
        build_rule(*args)


def test_model_params_validation():
    rule = build_rule(1, 2, 2, 0.1, 2)
    p = ModelParams(2, 1000, 0.15, 0.002, (rule,), 5.5, 0.01)
    assert p.n_steps == 550
    with pytest.raises(ConfigError):
        ModelParams(2, 1000, 0.15, 0.002, (rule,), 5.5, 0.03)
    with pytest.raises(ConfigError):
        ModelParams(2, 1000, 0.15, 0.0, (rule,), 5.5, 0.01)
    with pytest.raises(ConfigError):
        ModelParams(3, 1000, 0.15, 0.002, (rule,), 5.5, 0.01)


def test_seed_policy_streams():
    a = SeedPolicy(7).generator(3, "abm-dynamics").random(5)
    b = SeedPolicy(7).generator(3, "abm-dynamics").random(5)
    c = SeedPolicy(7).generator(4, "abm-dynamics").random(5)
    d = SeedPolicy(7).generator(3, "abm-init").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_seed_streams_uncorrelated():
    x = np.array([SeedPolicy(1).generator(r, "t").standard_normal(2000) for r in range(20)])
    corr = np.corrcoef(x)
    off = corr[~np.eye(20, dtype=bool)]
    assert np.abs(off).max() < 0.1


def test_initial_sampling_stays_in_domain():
    ti = TypeInit(1, 5000, "normal", 0.5, 0.4)
    x = ti.sample(np.random.default_rng(0), Domain1D())
    assert x.shape == (5000,)
    assert x.min() >= 0 and x.max() <= 1


def test_split_counts():
    assert split_counts([800, 200], 50) == [40, 10]
    assert sum(split_counts([1, 1, 1], 100)) == 100
