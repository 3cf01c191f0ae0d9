import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochlab.engine import (
    FbmParams,
    GbmParams,
    HestonParams,
    RngSeed,
    SimPath,
    TimeGrid,
    VgParams,
    euler_maruyama,
    fbm_covariance,
    gamma_subordinator,
    sample_fbm,
    simulate_gbm,
    simulate_heston,
    simulate_vg,
    wiener_increments,
)
from stochlab.errors import NumericalError


def _linear(a=-1.0, b=0.0):
    """Drift and diffusion of dX = a X dt + b X dW."""

    def drift(x, t):
        return a * x

    def diffusion(x, t):
        return (b * x)[:, :, None]

    return drift, diffusion


# ---------------------------------------------------------------- grid / seed / path types


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 1.0, 1.0])
    g = TimeGrid.uniform(2.0, 4)
    assert g.is_uniform and g.n_steps == 4 and len(g) == 5
    np.testing.assert_allclose(g.dt, 0.5)
    assert not TimeGrid([0.0, 1.0, 3.0]).is_uniform


def test_rng_seed_validation():
    with pytest.raises(ValueError):
        RngSeed(-1)
    with pytest.raises(ValueError):
        RngSeed(2**64)
    a = RngSeed(7, 3).generator().random(5)
    b = RngSeed(7, 3).generator().random(5)
    c = RngSeed(7, 4).generator().random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_simpath_csv_round_trip(tmp_path):
    path = simulate_heston(HestonParams(0.05, 2.0, 0.04, 0.3, -0.7), TimeGrid.uniform(1.0, 10), 1, n_paths=2)
    path.to_csv(tmp_path / "p.csv", index=1)
    back = SimPath.from_csv(tmp_path / "p.csv")
    assert back.labels == ("S", "v")
    assert np.array_equal(back.states[0], path.states[1])
    assert np.array_equal(back.grid.t, path.grid.t)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "t,S,v"


# ---------------------------------------------------------------- Wiener increments


def test_wiener_errors():
    with pytest.raises(ValueError):
        wiener_increments(0, 1.0, 1)
    with pytest.raises(ValueError):
        wiener_increments(3, 0.0, 1)


def test_wiener_moments():
    x = wiener_increments(10**6, 1.0, 11)
    assert abs(x.mean()) < 4 / math.sqrt(1e6)
    y = wiener_increments(10**6, 0.25, 12)
    assert y.var() == pytest.approx(0.25, rel=0.01)


def test_wiener_reproducible():
    assert np.array_equal(wiener_increments(100, 0.1, 5), wiener_increments(100, 0.1, 5))


# ---------------------------------------------------------------- Euler-Maruyama


def test_em_zero_fields_constant():
    grid = TimeGrid.uniform(1.0, 20)
    path = euler_maruyama(lambda x, t: 0 * x, lambda x, t: np.zeros(x.shape + (1,)), [1.5, -2.0], grid, 1, 3)
    assert np.all(path.states == np.array([1.5, -2.0]))


def test_em_ode_decay():
    grid = TimeGrid.uniform(1.0, 1000)
    drift, diffusion = _linear()
    x = euler_maruyama(drift, diffusion, [1.0], grid, 0).states[0, -1, 0]
    assert abs(x - math.exp(-1.0)) < 1e-3  # O(dt) with dt = 1e-3


def test_em_mean_matches_ode():
    grid = TimeGrid.uniform(1.0, 200)
    path = euler_maruyama(
        lambda x, t: -x, lambda x, t: np.full(x.shape + (1,), 0.5), [2.0], grid, 3, n_paths=10**4
    )
    xt = path.states[:, -1, 0]
    se = xt.std(ddof=1) / math.sqrt(xt.size)
    assert abs(xt.mean() - 2.0 * math.exp(-1.0)) < 3 * se + 2.0 * 0.005  # MC error plus O(dt) bias


def test_em_weak_order_one():
    drift, diffusion = _linear(-1.0, 0.05)
    bias = []
    for n in (10, 20):
        xt = euler_maruyama(drift, diffusion, [1.0], TimeGrid.uniform(1.0, n), 21, n_paths=10**5).states[:, -1, 0]
        bias.append(abs(xt.mean() - math.exp(-1.0)))
    assert bias[1] <= 0.5 * bias[0]


def test_em_non_finite_reports_step():
    with pytest.raises(NumericalError, match="step"), np.errstate(over="ignore"):
        euler_maruyama(lambda x, t: x * x * 1e200, lambda x, t: np.zeros(x.shape + (1,)), [1.0],
                       TimeGrid.uniform(1.0, 5), 0)


def test_em_diffusion_shape_checked():
    with pytest.raises(ValueError):
        euler_maruyama(lambda x, t: x, lambda x, t: x, [1.0], TimeGrid.uniform(1.0, 5), 0)


# ---------------------------------------------------------------- GBM


def test_gbm_deterministic_limits():
    grid = TimeGrid([0.0, 0.3, 1.0, 2.5])
    s = simulate_gbm(GbmParams(0.05, 0.0, 100.0), grid, 1)["S"][0]
    np.testing.assert_allclose(s, 100.0 * np.exp(0.05 * grid.t), rtol=1e-15)
    flat = simulate_gbm(GbmParams(0.0, 0.0, 42.0), grid, 1)["S"][0]
    assert np.all(flat == 42.0)


def test_gbm_terminal_mean():
    s = simulate_gbm(GbmParams(0.05, 0.2, 100.0), TimeGrid.uniform(1.0, 1), 8, n_paths=10**5)["S"][:, -1]
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - 100.0 * math.exp(0.05)) < 3 * se


@given(st.floats(-1, 1), st.floats(0, 2), st.integers(0, 2**32))
def test_gbm_positive(mu, sigma, seed):
    s = simulate_gbm(GbmParams(mu, sigma, 1.0), TimeGrid.uniform(5.0, 50), seed, n_paths=4)["S"]
    assert np.all(s > 0)


def test_paths_do_not_depend_on_batch_size():
    grid = TimeGrid.uniform(1.0, 30)
    a = simulate_gbm(GbmParams(0.1, 0.3), grid, 4, n_paths=2)["S"]
    b = simulate_gbm(GbmParams(0.1, 0.3), grid, 4, n_paths=7)["S"]
    assert np.array_equal(a, b[:2])
    hp = HestonParams(0.05, 2.0, 0.04, 0.3, -0.5)
    a = simulate_heston(hp, grid, 4, n_paths=2).states
    b = simulate_heston(hp, grid, 4, n_paths=5).states
    assert np.array_equal(a, b[:2])


# ---------------------------------------------------------------- Heston


def test_heston_zero_volvol():
    hp = HestonParams(0.05, 2.0, 0.04, 0.0, -0.5, 100.0, 0.04)
    path = simulate_heston(hp, TimeGrid.uniform(1.0, 50), 1, n_paths=2 * 10**4)
    assert np.all(path["v"] == 0.04)
    st_ = path["S"][:, -1]
    assert abs(st_.mean() - 100.0 * math.exp(0.05)) < 3 * st_.std(ddof=1) / math.sqrt(st_.size)
    logret = np.log(st_ / 100.0)
    assert logret.var() == pytest.approx(0.04, rel=0.05)


@given(st.integers(0, 2**32), st.floats(0.1, 2.0))
def test_heston_variance_nonnegative(seed, xi):
    hp = HestonParams(0.0, 1.5, 0.04, xi, -0.9, 100.0, 0.0)
    v = simulate_heston(hp, TimeGrid.uniform(1.0, 100), seed, n_paths=20)["v"]
    assert v.min() >= 0.0


def test_heston_ergodic_mean():
    hp = HestonParams(0.0, 2.0, 0.04, 0.3, -0.7, 100.0, 0.04)
    v = simulate_heston(hp, TimeGrid.uniform(50.0, 5000), 2, n_paths=40)["v"]
    assert v[:, 500:].mean() == pytest.approx(0.04, rel=0.10)


def test_heston_params_validation():
    with pytest.raises(ValueError):
        HestonParams(0.0, 0.0, 0.04, 0.3, 0.0)
    with pytest.raises(ValueError):
        HestonParams(0.0, 1.0, 0.04, 0.3, 1.5)
    assert HestonParams(0.0, 2.0, 0.04, 0.3, 0.0).feller_ratio == pytest.approx(16 / 9)


# ---------------------------------------------------------------- fBm


def test_fbm_covariance_examples():
    assert fbm_covariance(2.0, 3.0, 0.5) == pytest.approx(2.0, abs=1e-15)
    assert fbm_covariance(1.7, 1.7, 0.3) == pytest.approx(1.7**0.6, rel=1e-15)
    assert fbm_covariance(1.0, 2.0, 0.75) == pytest.approx(math.sqrt(2.0), abs=1e-7)
    with pytest.raises(ValueError):
        fbm_covariance(1.0, 2.0, 1.0)


@given(st.floats(0.01, 0.99), st.floats(0, 10), st.floats(0, 10))
def test_fbm_covariance_symmetric(h, s, t):
    assert fbm_covariance(s, t, h) == fbm_covariance(t, s, h)


def test_fbm_empirical_covariance():
    grid = TimeGrid.uniform(1.0, 8)
    b = sample_fbm(FbmParams(0.7), grid, 5, n_paths=10**4)["B"]
    assert np.all(b[:, 0] == 0.0)
    for i, j in [(4, 8), (8, 8), (6, 7)]:
        emp = np.mean(b[:, i] * b[:, j])
        assert emp == pytest.approx(fbm_covariance(grid.t[i], grid.t[j], 0.7), rel=0.05)


def test_fbm_half_is_brownian():
    b = sample_fbm(FbmParams(0.5), TimeGrid.uniform(1.0, 64), 6, n_paths=4000)["B"]
    inc = np.diff(b, axis=1)
    lag1 = np.mean(inc[:, 1:] * inc[:, :-1]) / np.mean(inc * inc)
    assert abs(lag1) < 0.02


def test_fbm_cap():
    with pytest.raises(ValueError, match="capped"):
        sample_fbm(FbmParams(0.5), TimeGrid.uniform(1.0, 20), 1, max_points=20)


def test_fbm_non_pd_reports_eigenvalue():
    # nearly coincident times make the covariance numerically singular
    grid = TimeGrid(np.array([0.0, 1.0, 1.0 + 1e-15 * 4, 2.0]))
    with pytest.raises(NumericalError, match="eigenvalue"):
        sample_fbm(FbmParams(0.9), grid, 1)


# ---------------------------------------------------------------- gamma subordinator and VG


@given(st.integers(0, 2**32), st.floats(0.01, 2.0))
def test_gamma_nondecreasing(seed, nu):
    g = gamma_subordinator(nu, TimeGrid.uniform(1.0, 50), seed, n_paths=3)["G"]
    assert np.all(g[:, 0] == 0.0)
    assert np.all(np.diff(g, axis=1) >= 0.0)


def test_gamma_moments():
    g1 = gamma_subordinator(0.2, TimeGrid.uniform(1.0, 4), 9, n_paths=10**5)["G"][:, -1]
    assert abs(g1.mean() - 1.0) < 3 * g1.std(ddof=1) / math.sqrt(g1.size)
    assert g1.var(ddof=1) == pytest.approx(0.2, rel=0.05)


def test_vg_zero_sigma_is_scaled_clock():
    path = simulate_vg(VgParams(0.3, 0.0, 0.2), TimeGrid.uniform(1.0, 20), 3, n_paths=4)
    assert np.array_equal(path["X"], 0.3 * path["G"])


def test_vg_means():
    grid = TimeGrid.uniform(1.0, 2)
    x0 = simulate_vg(VgParams(0.0, 0.2, 0.2), grid, 10, n_paths=10**5)["X"][:, -1]
    assert abs(x0.mean()) < 3 * x0.std(ddof=1) / math.sqrt(x0.size)
    x1 = simulate_vg(VgParams(0.1, 0.2, 0.2), grid, 11, n_paths=10**5)["X"][:, -1]
    assert abs(x1.mean() - 0.1) < 3 * x1.std(ddof=1) / math.sqrt(x1.size)


def test_reproducible_bit_identical():
    grid = TimeGrid.uniform(1.0, 16)
    p = VgParams(0.1, 0.2)
    assert np.array_equal(simulate_vg(p, grid, 3, 5).states, simulate_vg(p, grid, 3, 5).states)
    f = FbmParams(0.3)
    assert np.array_equal(sample_fbm(f, grid, 3, 5).states, sample_fbm(f, grid, 3, 5).states)


@pytest.mark.parametrize("hurst", [0.3, 0.5, 0.7])
def test_fbm_self_similarity(hurst):
    grid = TimeGrid.uniform(2.0, 16)
    b = sample_fbm(FbmParams(hurst), grid, 13, n_paths=10**4)["B"]
    for i in (4, 8, 16):
        assert np.mean(b[:, i] ** 2) == pytest.approx(grid.t[i] ** (2 * hurst), rel=0.05)
