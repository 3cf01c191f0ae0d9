import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochlab.engine import TimeGrid
from stochlab.errors import NumericalError
from stochlab.reaction import (
    MarketState,
    RateConstants,
    classify,
    classify_matrix,
    drift,
    eigenvalues_2x2,
    equilibria,
    integrate,
    jacobian,
    propensities,
    simulate_deterministic,
    simulate_stochastic,
)

K_AAPL = RateConstants(0.1, 0.2, 0.01, 0.05)
rates = st.tuples(*[st.floats(1e-3, 1.0)] * 4).map(lambda t: RateConstants(*t))
states = st.tuples(st.floats(0, 5), st.floats(0, 5)).map(lambda t: MarketState(*t))


def fd_jacobian(x, k, variant="bilinear"):
    out = np.empty((2, 2))
    v = np.array([x.S, x.V])
    for j in range(2):
        h = 1e-6 * max(1.0, abs(v[j]))
        up, dn = v.copy(), v.copy()
        up[j] += h
        dn[j] -= h
        # central differences may step below zero; evaluate the drift formula directly
        fu = np.array(_raw_drift(up, k, variant))
        fd = np.array(_raw_drift(dn, k, variant))
        out[:, j] = (fu - fd) / (2 * h)
    return out


def _raw_drift(v, k, variant):
    s, vol = v
    if variant == "bilinear":
        return k.k1 * s * vol - k.k3 * s, k.k2 * s * vol - k.k4 * vol
    return k.k2 * vol - k.k3 * s, k.k1 * s - k.k4 * vol


# ---------------------------------------------------------------- drift and propensities


def test_drift_examples():
    assert drift(MarketState(0, 0), K_AAPL) == (0.0, 0.0)
    assert drift(MarketState(1, 1), RateConstants(2, 1, 1, 1)) == pytest.approx((1.0, 0.0), abs=0)


def test_linear_variant_drift():
    assert drift(MarketState(2, 3), RateConstants(1, 2, 3, 4), "linear") == pytest.approx((2 * 3 - 3 * 2, 1 * 2 - 4 * 3))
    with pytest.raises(ValueError):
        drift(MarketState(1, 1), K_AAPL, "cubic")


def test_propensities():
    assert propensities(MarketState(0, 0), K_AAPL) == (0.0, 0.0, 0.0, 0.0)
    assert propensities(MarketState(2, 3), RateConstants(1, 1, 1, 1)) == (2.0, 3.0, 2.0, 3.0)


@given(states, rates)
def test_propensities_nonnegative(x, k):
    assert all(a >= 0 for a in propensities(x, k))


def test_rate_constants_validation():
    with pytest.raises(ValueError):
        RateConstants(-0.1, 1, 1, 1)
    with pytest.raises(ValueError):
        RateConstants.of([1, 2, 3])
    with pytest.raises(ValueError):
        MarketState(-1.0, 0.0)


# ---------------------------------------------------------------- equilibria and stability


def test_equilibria_examples():
    pts = equilibria(RateConstants(1, 1, 1, 1))
    assert pts[0] == MarketState(0, 0) and pts[1] == MarketState(1.0, 1.0)
    s, v = equilibria(K_AAPL)[1].S, equilibria(K_AAPL)[1].V
    assert s == pytest.approx(0.25, abs=1e-15) and v == pytest.approx(0.1, abs=1e-15)


@given(rates)
def test_equilibria_residual(k):
    for p in equilibria(k):
        assert max(abs(c) for c in drift(p, k)) < 1e-12


def test_equilibria_without_interior_point():
    with pytest.warns(RuntimeWarning, match="k1 or k2"):
        pts = equilibria(RateConstants(0, 1, 1, 1))
    assert pts == [MarketState(0, 0)]
    rep = classify(RateConstants(1, 0, 1, 1))
    assert len(rep.points) == 1 and rep.notes


def test_jacobian_at_origin_and_interior():
    k = K_AAPL
    np.testing.assert_array_equal(jacobian(MarketState(0, 0), k), [[-k.k3, 0], [0, -k.k4]])
    j = jacobian(equilibria(k)[1], k)
    np.testing.assert_allclose(j, [[0, k.k1 * k.k4 / k.k2], [k.k2 * k.k3 / k.k1, 0]], atol=1e-15)


@given(states, rates, st.sampled_from(["bilinear", "linear"]))
def test_jacobian_matches_finite_differences(x, k, variant):
    assert np.max(np.abs(jacobian(x, k, variant) - fd_jacobian(x, k, variant))) < 1e-6


@given(rates)
def test_classification(k):
    rep = classify(k)
    assert rep.classifications[0] == "stable node"
    assert sorted(e.real for e in rep.eigenvalues[0]) == pytest.approx(sorted([-k.k3, -k.k4]), abs=1e-12)
    assert rep.classifications[1] == "saddle"
    root = math.sqrt(k.k3 * k.k4)
    ev = sorted(e.real for e in rep.eigenvalues[1])
    assert ev == pytest.approx([-root, root], abs=1e-8)
    assert all(e.imag == 0 for e in rep.eigenvalues[1])


def test_degenerate_when_k3_zero():
    rep = classify(RateConstants(1, 1, 0, 1))
    assert rep.classifications[1] == "degenerate"


@pytest.mark.parametrize(
    "matrix, label",
    [
        ([[-1, 0], [0, -2]], "stable node"),
        ([[1, 0], [0, 2]], "unstable node"),
        ([[1, 0], [0, -2]], "saddle"),
        ([[0, 1], [-1, 0]], "center"),
        ([[-0.1, 1], [-1, -0.1]], "stable spiral"),
        ([[0.1, 1], [-1, 0.1]], "unstable spiral"),
        ([[0, 0], [0, 0]], "degenerate"),
        ([[1, 1], [1, 1]], "degenerate"),
    ],
)
def test_classify_matrix(matrix, label):
    assert classify_matrix(np.array(matrix, dtype=float)) == label


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_eigenvalues_match_numpy(entries):
    j = np.array(entries).reshape(2, 2)
    ours = np.sort_complex(np.array(eigenvalues_2x2(j)))
    ref = np.sort_complex(np.linalg.eigvals(j).astype(complex))
    np.testing.assert_allclose(ours, ref, atol=1e-6 * max(1.0, np.abs(j).max()))


def test_report_json():
    d = json.loads(json.dumps(classify(K_AAPL).to_dict()))
    assert [(p["S"], p["V"]) for p in d["points"]] == [(0.0, 0.0), (0.25, pytest.approx(0.1))]
    assert d["points"][1]["classification"] == "saddle"
    assert set(d["points"][1]["eigenvalues"][0]) == {"re", "im"}


# ---------------------------------------------------------------- integration


def test_equilibrium_is_fixed_point():
    x = equilibria(K_AAPL)[1]
    path = simulate_deterministic(x, K_AAPL, TimeGrid.uniform(50.0, 500))
    np.testing.assert_allclose(path["S"][0], x.S, atol=1e-9)
    np.testing.assert_allclose(path["V"][0], x.V, atol=1e-9)


def test_no_decay_is_nondecreasing():
    path = simulate_deterministic(MarketState(0.1, 0.2), RateConstants(0.3, 0.4, 0, 0), TimeGrid.uniform(5.0, 200))
    assert np.all(np.diff(path["S"][0]) >= 0) and np.all(np.diff(path["V"][0]) >= 0)


def test_rk4_step_halving():
    x0 = MarketState(0.3, 0.2)
    a = simulate_deterministic(x0, K_AAPL, TimeGrid.uniform(1.0, 20)).states[0, -1]
    b = simulate_deterministic(x0, K_AAPL, TimeGrid.uniform(1.0, 40)).states[0, -1]
    assert np.max(np.abs(a - b)) < 1e-6


def test_euler_matches_hand_step():
    k = RateConstants(2, 1, 1, 1)
    out, failed = integrate(MarketState(1, 1), k, TimeGrid([0.0, 0.1]), method="euler")
    assert failed == -1
    np.testing.assert_allclose(out[1], [1 + 0.1 * 1.0, 1 + 0.1 * 0.0])


def test_blow_up_reports_step():
    with pytest.raises(NumericalError, match="step"):
        simulate_deterministic(MarketState(100.0, 100.0), RateConstants(5, 5, 0, 0), TimeGrid.uniform(100.0, 100))


def test_linear_variant_converges_to_origin():
    k = RateConstants(0.1, 0.1, 1.0, 1.0)
    path = simulate_deterministic(MarketState(1.0, 1.0), k, TimeGrid.uniform(20.0, 200), variant="linear")
    assert np.all(path.states[0, -1] < 1e-6)


def test_zero_noise_equals_euler():
    x0 = MarketState(0.3, 0.2)
    grid = TimeGrid.uniform(10.0, 100)
    det, _ = integrate(x0, K_AAPL, grid, method="euler")
    sto = simulate_stochastic(x0, K_AAPL, grid, 0.0, 1)
    np.testing.assert_array_equal(sto.states[0], det)


@given(st.integers(0, 2**32), st.floats(0.0, 3.0))
def test_stochastic_states_nonnegative(seed, noise):
    path = simulate_stochastic(MarketState(0.05, 0.05), K_AAPL, TimeGrid.uniform(10.0, 100), noise, seed, 5)
    assert path.states.min() >= 0.0


def test_stochastic_mean_tracks_deterministic():
    x0 = MarketState(0.3, 0.2)
    grid = TimeGrid.uniform(5.0, 50)
    det, _ = integrate(x0, K_AAPL, grid, method="euler")
    sto = simulate_stochastic(x0, K_AAPL, grid, 0.01, 2, n_paths=10**4).states[:, -1]
    se = sto.std(axis=0, ddof=1) / math.sqrt(sto.shape[0])
    assert np.all(np.abs(sto.mean(axis=0) - det[-1]) < 3 * se + 1e-12)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        simulate_stochastic(MarketState(1, 1), K_AAPL, TimeGrid.uniform(1.0, 2), -0.1)
