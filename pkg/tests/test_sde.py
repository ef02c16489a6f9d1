import pytest

from abmspde.sde import fitted_slope, gbm_strong_errors, ou_strong_errors

DTS = [1e-2, 2.5e-3, 6.25e-4]


def test_slope_fit():
    assert fitted_slope([1.0, 0.25], [1.0, 0.5]) == pytest.approx(0.5)


def test_multiplicative_noise_has_half_order():
    res = gbm_strong_errors(DTS, n_paths=2000, seed=3)
    assert 0.35 <= res.slope <= 0.65


def test_additive_noise_has_first_order():
    # with additive noise the scheme coincides with the Milstein scheme
    res = ou_strong_errors(DTS, n_paths=2000, seed=3)
    assert 0.85 <= res.slope <= 1.15
    assert res.errors[0] > res.errors[-1]


def test_grid_validation():
    with pytest.raises(ValueError):
        ou_strong_errors([0.01, 0.003])
