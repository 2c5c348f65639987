import numpy as np
import pytest

from rnnstab.analysis import (
    GLOBAL, REGIONAL_AUX, REGIONAL_NARROW, Ellipsoid, StabilityCertificate, algorithm1,
    analyze_regional_aux, analyze_regional_narrow, check_global, default_delta_h, min_h_feasible,
    necessary_precheck, select_best, validate_certificate,
)
from rnnstab.errors import Infeasible
from rnnstab.model import ClosedLoop, RnnModel, augment_integrator, build_closed_loop
from rnnstab.sigmoid import SAT, TANH, compute_ybar
from rnnstab.verify import monte_carlo_invariance, simulate

import oracles
from conftest import scalar_plant


def loop(a, b=-0.5, c=1.0, kind=TANH):
    a, b, c = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (a, b, c))
    return ClosedLoop(a=a, b=b, c=c, kind=kind, k=np.zeros((1, a.shape[0])))


def bounded_loop(a=0.5, kind=TANH):
    """x+ = a x + q(x): locally stable, diverges for large |x| when a > 0."""
    return loop(a, b=1.0, kind=kind)


def assert_sound(cert, cl):
    rep = validate_certificate(cert, cl)
    assert rep.passed, rep.to_dict()
    assert monte_carlo_invariance(cert, cl).passed


def test_global_scalar(scalar_loop):
    cert = check_global(scalar_loop)
    assert cert.method == GLOBAL
    assert_sound(cert, scalar_loop)
    assert oracles.global_grid(0.5, -0.5, 1.0) is not None


def test_global_without_nonlinearity_is_lyapunov():
    cl = loop(0.9, b=0.0)
    assert_sound(check_global(cl), cl)


def test_global_integrator_lemma2():
    esn_model = augment_integrator(_tiny_esn())
    cl = build_closed_loop(esn_model, np.zeros((1, 3)))
    pre = necessary_precheck(esn_model, np.zeros((1, 3)))
    assert not pre["schur_A0BuK"] and pre["radius_A0BuK"] == pytest.approx(1.0)
    with pytest.raises(Infeasible) as exc:
        check_global(cl)
    assert exc.value.lemma == "Lemma 2"
    assert "Lemma 2" in str(exc.value)


def _tiny_esn():
    from rnnstab.model import EsnModel
    return EsnModel(np.diag([0.4, -0.3]), np.ones((2, 1)), 0.1 * np.ones((2, 1)),
                    np.array([[0.5, 0.2]]))


def test_precheck_examples():
    m = RnnModel(0.2 * np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)),
                 np.zeros((1, 1)))
    assert necessary_precheck(m, np.zeros((1, 1)))["passes"]
    rng = np.random.default_rng(3)
    m = RnnModel(rng.normal(size=(3, 3)) * 0.3, rng.normal(size=(3, 1)), rng.normal(size=(3, 2)) * 0.2,
                 rng.normal(size=(2, 3)), rng.normal(size=(2, 1)))
    k = rng.normal(size=(1, 3)) * 0.1
    p = np.eye(3)[[2, 0, 1]]
    mp = RnnModel(p @ m.a0 @ p.T, p @ m.bu, p @ m.bsigma, m.c0 @ p.T, m.du)
    r1, r2 = necessary_precheck(m, k), necessary_precheck(mp, k @ p.T)
    assert r1["radius_A"] == pytest.approx(r2["radius_A"], abs=1e-12)
    assert r1["radius_A0BuK"] == pytest.approx(r2["radius_A0BuK"], abs=1e-12)


def test_aux_scalar(scalar_loop):
    cert = analyze_regional_aux(scalar_loop)
    assert cert.method == REGIONAL_AUX
    assert_sound(cert, scalar_loop)
    cl = bounded_loop()
    cert = analyze_regional_aux(cl)
    assert cert.gamma == pytest.approx(np.linalg.eigvalsh(cert.s)[0], rel=1e-5)
    sat_loop = loop(0.5, kind=SAT)
    assert_sound(analyze_regional_aux(sat_loop), sat_loop)


def test_aux_basin_trajectories_converge(scalar_loop):
    cl = bounded_loop()
    cert = analyze_regional_aux(cl, theta=0.3)
    assert_sound(cert, cl)
    for x0 in Ellipsoid(cert.s).boundary(np.array([[1.0], [-1.0]])):
        tr = simulate(cl, x0, 400)
        assert np.linalg.norm(tr.states[-1]) < 1e-6 * np.linalg.norm(x0)


def test_regional_not_schur():
    cl = loop(1.2, b=0.0)
    with pytest.raises(Infeasible) as exc:
        analyze_regional_aux(cl)
    assert exc.value.lemma == "Lemma 5"
    with pytest.raises(Infeasible) as exc:
        analyze_regional_narrow(cl, 1.0)
    assert exc.value.lemma == "Lemma 6"
    with pytest.raises(Infeasible) as exc:
        min_h_feasible(cl)
    assert exc.value.lemma == "Lemma 6"


def test_min_h_matches_grid(scalar_loop):
    hbar, _ = min_h_feasible(scalar_loop)
    ref = oracles.min_h_grid(0.5, -0.5, 1.0)
    assert hbar == pytest.approx(ref, rel=0.05, abs=0.03)


def test_min_h_unstable_open_loop_grid():
    # a loop whose nonlinearity pushes outward needs a positive slope
    cl = bounded_loop()
    hbar, _ = min_h_feasible(cl)
    ref = oracles.min_h_grid(0.5, 1.0, 1.0)
    assert ref > 0.1
    assert hbar == pytest.approx(ref, rel=0.05)


def test_min_h_without_nonlinearity():
    hbar, _ = min_h_feasible(loop(0.5, b=0.0))
    assert hbar < 1e-4


def test_min_h_trend_with_stability():
    hs = [min_h_feasible(bounded_loop(a))[0] for a in (0.999, 0.9, 0.7, 0.5)]
    assert hs[0] == pytest.approx(1.0 / (1.0 - 0.999), rel=0.02)
    assert all(h2 <= h1 + 1e-6 for h1, h2 in zip(hs, hs[1:]))


def test_narrow_scalar(scalar_loop):
    cert = analyze_regional_narrow(scalar_loop, 1.0)
    assert cert.method == REGIONAL_NARROW
    assert cert.ybar[0] == pytest.approx(compute_ybar(TANH, 1.0))
    assert_sound(cert, scalar_loop)


def test_narrow_below_hbar_infeasible():
    cl = bounded_loop()
    hbar, _ = min_h_feasible(cl)
    with pytest.raises(Infeasible):
        analyze_regional_narrow(cl, 0.8 * hbar)
    assert_sound(analyze_regional_narrow(cl, 1.2 * hbar), cl)


def test_narrow_sat_versus_aux():
    cl = bounded_loop(kind=SAT)
    h = 2.0 * min_h_feasible(cl)[0]
    n = analyze_regional_narrow(cl, h)
    a = analyze_regional_aux(cl)
    assert n.ybar[0] == pytest.approx(compute_ybar(SAT, h), abs=1e-5)
    assert_sound(n, cl)
    assert_sound(a, cl)
    assert 0.1 < n.gamma / a.gamma < 10.0


def test_algorithm1_scalar(scalar_loop):
    res = algorithm1(scalar_loop, delta_h=0.1, i_max=20)
    gammas = [r.gamma for r in res.table]
    assert len(gammas) == 21
    assert res.certificate.gamma == max(g for g in gammas if g is not None)
    assert res.certificate.gamma >= gammas[0]
    assert_sound(res.certificate, scalar_loop)


def test_algorithm1_imax_zero_equals_single_shot():
    cl = bounded_loop()
    res = algorithm1(cl, i_max=0)
    single = analyze_regional_narrow(cl, res.hbar)
    assert res.certificate.gamma == pytest.approx(single.gamma, rel=1e-6)
    with pytest.raises(ValueError):
        algorithm1(cl, i_max=-1)


def test_algorithm1_workers_do_not_change_result():
    cl = bounded_loop()
    r1 = algorithm1(cl, i_max=4)
    r2 = algorithm1(cl, i_max=4, workers=3)
    assert [r.gamma for r in r1.table] == [r.gamma for r in r2.table]


def test_select_best_ties():
    assert select_best([1.0, 2.0, 2.0 + 1e-12, None]) == 1
    assert select_best([None, None]) is None
    assert default_delta_h(0.5) == 0.1 and default_delta_h(30.0) == pytest.approx(3.0)


def test_validation_catches_inflated_certificate():
    cl = bounded_loop()
    cert = analyze_regional_narrow(cl, 2.0 * min_h_feasible(cl)[0])
    bad = StabilityCertificate(cert.method, s=4.0 * cert.s, u=cert.u, h_mat=cert.h_mat,
                               ybar=cert.ybar)
    rep = validate_certificate(bad, cl)
    assert not rep.rows_ok
    # a much larger ellipsoid reaches where x+ = 1.5 x - tanh(x) diverges
    mc = monte_carlo_invariance(StabilityCertificate(cert.method, s=1e4 * cert.s, u=cert.u), cl)
    assert not mc.passed


def test_validation_skips_origin(scalar_loop):
    cert = check_global(scalar_loop)
    rep = validate_certificate(cert, scalar_loop, n_samples=10)
    assert rep.decrease_violations == 0


def test_certificate_roundtrip(scalar_loop):
    cert = analyze_regional_aux(scalar_loop)
    back = StabilityCertificate.from_dict(cert.to_dict())
    np.testing.assert_array_equal(back.s, cert.s)
    np.testing.assert_array_equal(back.l, cert.l)


def test_state_rescaling_transports_certificate():
    cl = loop(np.array([[0.5, 0.2], [0.0, 0.6]]), b=np.array([[-0.3], [0.1]]),
              c=np.array([[1.0, 0.5]]))
    cert = analyze_regional_aux(cl)
    t = np.diag([2.0, 0.5])
    ti = np.linalg.inv(t)
    cl_t = ClosedLoop(a=t @ cl.a @ ti, b=t @ cl.b, c=cl.c @ ti, kind=cl.kind, k=cl.k @ ti)
    moved = StabilityCertificate(cert.method, s=t @ cert.s @ t.T, u=cert.u, r=cert.r,
                                 l=cert.l @ t.T, theta=cert.theta)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    np.testing.assert_allclose(Ellipsoid(cert.s).level(x), Ellipsoid(moved.s).level(x @ t.T),
                               rtol=1e-10)
    np.testing.assert_allclose(moved.h_poly, cert.h_poly @ ti, atol=1e-10)
    assert validate_certificate(moved, cl_t).passed


def test_ellipsoid_boundary():
    s = np.array([[2.0, 0.3], [0.3, 0.5]])
    e = Ellipsoid(s)
    d = np.random.default_rng(1).normal(size=(50, 2))
    np.testing.assert_allclose(e.level(e.boundary(d)), 1.0, atol=1e-9)
