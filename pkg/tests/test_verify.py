import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnstab.analysis import StabilityCertificate, REGIONAL_AUX
from rnnstab.errors import NotSchur
from rnnstab.model import ClosedLoop
from rnnstab.sigmoid import TANH
from rnnstab.verify import (
    Dataset, esn_generate, fit_percent, generate_surrogate_data, h2_norm_oracle, identify_esn,
    load_preset, monte_carlo_invariance, mprs, random_reservoir, sample_ellipsoid, simulate,
    solve_dlyap, train_esn,
)

import oracles


def stable_matrix(rng, n, rho):
    m = rng.normal(size=(n, n))
    return rho * m / max(abs(np.linalg.eigvals(m)))


@given(seed=st.integers(0, 10_000), rho=st.floats(0.05, 0.98))
@settings(max_examples=40, deadline=None)
def test_dlyap_residual(seed, rho):
    rng = np.random.default_rng(seed)
    a = stable_matrix(rng, 5, rho)
    g = rng.normal(size=(5, 5))
    q = g @ g.T
    x = solve_dlyap(a, q)
    res = np.abs(a.T @ x @ a + q - x).max()
    assert res <= 1e-10 * max(1.0, np.abs(x).max())
    np.testing.assert_allclose(x, x.T, atol=0)


def test_dlyap_examples():
    assert solve_dlyap(np.array([[0.5]]), np.array([[1.0]]))[0, 0] == pytest.approx(4.0 / 3.0)
    rng = np.random.default_rng(0)
    a = stable_matrix(rng, 3, 0.7)
    q = np.eye(3)
    np.testing.assert_allclose(solve_dlyap(a, q), oracles.fixed_point_dlyap(a, q), atol=1e-10)
    with pytest.raises(NotSchur):
        solve_dlyap(np.eye(2), np.eye(2))


def test_h2_oracle_against_impulse_response():
    rng = np.random.default_rng(5)
    a = stable_matrix(rng, 4, 0.8)
    c = rng.normal(size=(2, 4))
    assert h2_norm_oracle(a, c) ** 2 == pytest.approx(oracles.impulse_h2(a, c), rel=1e-9)


def scalar_cl(a, b, c=1.0):
    return ClosedLoop(a=np.atleast_2d(a), b=np.atleast_2d(b), c=np.atleast_2d(c), kind=TANH,
                      k=np.zeros((1, 1)))


def test_simulate_matches_recursion():
    cl = scalar_cl(0.5, 1.0)
    tr = simulate(cl, [0.3], 20)
    x = 0.3
    for t in range(20):
        assert tr.states[t, 0] == pytest.approx(x, abs=1e-15)
        x = 1.5 * x - np.tanh(x)
    assert tr.steps == 20 and not tr.diverged
    np.testing.assert_array_equal(tr.outputs, tr.states)


def test_simulate_flags_divergence():
    tr = simulate(scalar_cl(3.0, 0.0), [1.0], 1000)
    assert tr.diverged and tr.steps < 1000
    with pytest.raises(ValueError):
        simulate(scalar_cl(0.5, 0.0), [1.0, 2.0], 5)


def test_simulate_reference_offset():
    tr = simulate(scalar_cl(0.5, 0.0), [0.0], 200, reference=1.0)
    # x+ = 0.5 x + 1 settles at 2
    assert tr.states[-1, 0] == pytest.approx(2.0, abs=1e-12)


def test_trajectory_csv(tmp_path):
    tr = simulate(scalar_cl(0.5, 1.0), [0.3], 5)
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    assert rows.shape == (6, 5)
    np.testing.assert_array_equal(rows[:, 1], tr.states[:, 0])


def test_sample_ellipsoid():
    s = np.array([[4.0, 1.0], [1.0, 1.0]])
    x = sample_ellipsoid(s, 2000, seed=1)
    v = np.einsum("ij,jk,ik->i", x, np.linalg.inv(s), x)
    assert v.max() <= 1.0 + 1e-12
    assert np.sum(np.isclose(v, 1.0, atol=1e-12)) == 1000
    np.testing.assert_array_equal(x, sample_ellipsoid(s, 2000, seed=1))


def test_monte_carlo_linear_lyapunov():
    a = np.array([[0.5, 0.3], [0.0, 0.4]])
    cl = ClosedLoop(a=a, b=np.zeros((2, 1)), c=np.zeros((1, 2)), kind=TANH, k=np.zeros((1, 2)))
    # sublevel sets of x' P x with P = A' P A + I are invariant
    p = solve_dlyap(a, np.eye(2))
    cert = StabilityCertificate(REGIONAL_AUX, s=np.linalg.inv(p), u=np.eye(1))
    rep = monte_carlo_invariance(cert, cl, horizon=50)
    assert rep.passed and rep.converged_fraction > 0.99
    rep = monte_carlo_invariance(np.linalg.inv(p), scalar_free(cl, 2.5 * a))
    assert not rep.passed


def scalar_free(cl, a):
    return ClosedLoop(a=a, b=cl.b, c=cl.c, kind=cl.kind, k=cl.k)


def test_fit_percent():
    y = np.array([1.0, 2.0, 3.0])
    assert fit_percent(y, y) == 100.0
    assert fit_percent(y, np.full(3, 2.0)) == pytest.approx(0.0)
    assert fit_percent(np.ones(3), np.ones(3)) == 100.0


def test_mprs():
    rng = np.random.default_rng(0)
    u = mprs(500, 5, -1.0, 1.0, 3, 10, rng)
    assert set(np.round(np.unique(u), 12)) <= set(np.round(np.linspace(-1, 1, 5), 12))
    # every run of constant input lasts at least min_hold, except possibly the last
    edges = np.flatnonzero(np.diff(u)) + 1
    runs = np.diff(np.concatenate([[0], edges]))
    assert runs.size == 0 or runs.min() >= 3
    assert np.all(mprs(10, 1, 2.0, 4.0, 1, 2, rng) == 3.0)
    with pytest.raises(ValueError):
        mprs(10, 0, 0.0, 1.0, 1, 2, rng)


def test_surrogate_is_deterministic(tmp_path):
    d1 = generate_surrogate_data(seed=3, T=2000)
    d2 = generate_surrogate_data(seed=3, T=2000)
    np.testing.assert_array_equal(d1.y, d2.y)
    assert not np.array_equal(d1.u, generate_surrogate_data(seed=4, T=2000).u)
    pre = load_preset()
    assert len(generate_surrogate_data()) == pre["samples"]
    assert d1.u.min() >= pre["input"]["u_min"] and d1.u.max() <= pre["input"]["u_max"]
    p = tmp_path / "d.csv"
    d1.to_csv(p)
    back = Dataset.from_csv(p)
    np.testing.assert_array_equal(back.y, d1.y)
    assert back.sample_time == d1.sample_time


def test_surrogate_noise_free_steady_state():
    pre = load_preset()
    pre["noise_std"] = 0.0
    d = generate_surrogate_data(pre, u=np.full(400, pre["static"]["u_mid"]))
    # unit DC gain: a constant mid-range input settles at the mid value
    assert d.y[-1] == pytest.approx(pre["static"]["y_mid"], abs=1e-9)


def test_esn_realizable_fit():
    # data generated by an ESN on the same reservoir is fitted almost exactly
    n_s, seed = 6, 11
    wx, wu, wxy = random_reservoir(n_s, 0.9, seed)
    wy = np.random.default_rng(0).uniform(-0.5, 0.5, (1, n_s))
    u = mprs(4000, 7, -1.0, 1.0, 5, 30, np.random.default_rng(1))
    _, y = esn_generate(wx, wu, wxy, wy, u)
    tr = train_esn(Dataset(u, y), n_s=n_s, seed=seed, ridge_lambda=1e-12, normalize=False)
    assert tr.fit >= 99.0
    np.testing.assert_allclose(tr.esn.wy, wy, atol=1e-4)


def test_identify_keeps_best_fit():
    d = generate_surrogate_data(seed=0, T=6000)
    best = identify_esn(d, n_s=3, seed=0, tries=3)
    fits = [train_esn(d, n_s=3, seed=s).fit for s in range(3)]
    assert best.fit == pytest.approx(max(fits))
    with pytest.raises(ValueError):
        train_esn(Dataset(np.zeros(20), np.zeros(20)), n_s=3)
