import numpy as np
import pytest

from rnnstab.analysis import REGIONAL_AUX, REGIONAL_NARROW, validate_certificate
from rnnstab.errors import Infeasible, NoFeasibleUpperBound
from rnnstab.model import DesignMatrices, build_closed_loop, design_matrices
from rnnstab.synthesis import (
    FixedDelta, H2Weights, Scalarized, benchmark_weights, h2_gevp, min_h_design, refine_basin,
    synthesize_aux, synthesize_global, synthesize_ladder, synthesize_narrow,
)
from rnnstab.verify import monte_carlo_invariance

import oracles
from conftest import integrator_plant, scalar_plant, scalar_weights

BASIN_LIMIT = 2.5 ** 2  # exact basin bound of the saturated-input plant


def dm_of(f, g):
    return DesignMatrices(np.atleast_2d(float(f)), np.atleast_2d(float(g)))


def assert_sound(res, model):
    cl = build_closed_loop(model, res.k)
    assert validate_certificate(res.certificate, cl).passed
    assert monte_carlo_invariance(res.certificate, cl).passed


@pytest.mark.parametrize("f,g", [(0.0, 1.0), (0.5, 1.0), (1.2, 1.0), (0.9, 0.5)])
def test_h2_gevp_matches_grid(f, g):
    w8 = scalar_weights()
    res = h2_gevp(dm_of(f, g), w8, tol=1e-5)
    ref, kref = oracles.h2_scalar_grid(f, g, w8.q_tilde[:, 0], w8.r_tilde[:, 0])
    assert res.delta == pytest.approx(ref, rel=1e-3)
    # the returned gain achieves its bound
    ac, cc = f + g * res.k[0, 0], w8.q_tilde + w8.r_tilde * res.k[0, 0]
    assert (cc.T @ cc).item() / (1 - ac ** 2) <= res.delta * (1 + 1e-6)


def test_h2_gevp_without_input():
    res = h2_gevp(dm_of(0.5, 0.0), scalar_weights(), tol=1e-5)
    assert res.delta == pytest.approx(4.0 / 3.0, rel=1e-3)
    with pytest.raises(NoFeasibleUpperBound):
        h2_gevp(dm_of(2.0, 0.0), scalar_weights(), cap=2.0 ** 12)


def test_h2_gevp_fixed_eta_agrees():
    dm = dm_of(0.5, 1.0)
    a = h2_gevp(dm, scalar_weights(), tol=1e-5)
    b = h2_gevp(dm, scalar_weights(), tol=1e-5, fix_eta=True)
    assert a.delta == pytest.approx(b.delta, rel=1e-3)


def test_weights_validation():
    with pytest.raises(ValueError):
        H2Weights(np.ones((2, 1)), np.ones((3, 1)))
    with pytest.warns(RuntimeWarning):
        H2Weights(np.zeros((1, 1)), np.zeros((1, 1)))
    w = benchmark_weights(np.array([[1.0, 2.0]]))
    assert w.q_tilde.shape == (3, 3) and w.r_tilde.shape == (3, 1)
    with pytest.raises(ValueError):
        w.check(2, 1)


def test_global_design_scalar(plant, w8):
    res = synthesize_global(plant, w8, 10.0)
    assert res.h2_oracle(plant, w8) ** 2 <= res.delta * (1 + 1e-4)
    assert_sound(res, plant)


def test_global_design_lemma2(integ, w8):
    with pytest.raises(Infeasible) as exc:
        synthesize_global(integ, w8, 100.0)
    assert exc.value.lemma == "Lemma 2"


def test_aux_design_integrator(integ, w8):
    res = synthesize_aux(integ, w8, FixedDelta(10.0))
    assert res.method == REGIONAL_AUX
    assert res.h2_oracle(integ, w8) ** 2 <= res.delta * (1 + 1e-4)
    assert_sound(res, integ)


@pytest.mark.parametrize("method", [REGIONAL_AUX, REGIONAL_NARROW])
def test_delta_trend_and_basin_limit(sat_plant, w8, method):
    rows = synthesize_ladder(sat_plant, w8, [5.0, 10.0, 20.0, 40.0], method=method,
                             **({"i_max": 2} if method == REGIONAL_NARROW else {}))
    gammas = [r.gamma for _, r, _ in rows]
    assert all(g2 >= g1 * (1 - 1e-4) for g1, g2 in zip(gammas, gammas[1:]))
    assert max(gammas) <= BASIN_LIMIT
    for _, r, _ in rows:
        assert_sound(r, sat_plant)
        assert r.h2_oracle(sat_plant, w8) ** 2 <= r.delta * (1 + 1e-4)


def test_aux_below_optimum_infeasible(integ, w8):
    d_star = h2_gevp(design_matrices(integ), w8).delta
    with pytest.raises(Infeasible):
        synthesize_aux(integ, w8, FixedDelta(0.9 * d_star))


def test_narrow_design_integrator(integ, w8):
    res = synthesize_narrow(integ, w8, FixedDelta(10.0), i_max=4)
    assert res.method == REGIONAL_NARROW
    assert len(res.table) == 5
    assert res.gamma == max(r["gamma"] for r in res.table if r["gamma"] is not None)
    assert res.h2_oracle(integ, w8) ** 2 <= res.delta * (1 + 1e-4)
    assert_sound(res, integ)


def test_narrow_imax_zero_is_single_point(sat_plant, integ, w8):
    hbar, _ = min_h_design(sat_plant)
    assert hbar == pytest.approx(0.1, rel=1e-3)
    # h-bar ignores the H2 blocks, so the joint program may need a larger slope
    res = synthesize_narrow(sat_plant, w8, FixedDelta(10.0), i_max=0, hbar=0.5)
    assert len(res.table) == 1 and res.table[0]["h"] == 0.5
    assert res.certificate.h_mat[0, 0] == 0.5
    with pytest.raises(ValueError):
        synthesize_narrow(integ, w8, FixedDelta(10.0), i_max=-1)
    with pytest.raises(ValueError):
        synthesize_narrow(integ, w8, FixedDelta(10.0), delta_h=0.0)


def test_refinement_never_shrinks(integ, w8):
    res = synthesize_narrow(integ, w8, FixedDelta(10.0), i_max=2)
    h_design = res.certificate.h_mat[0, 0]
    ref = refine_basin(integ, res.k, extra_h=[h_design], i_max=4)
    assert ref.gamma >= res.gamma * (1 - 1e-6)
    aux = synthesize_aux(integ, w8, FixedDelta(10.0))
    assert refine_basin(integ, aux.k, method=REGIONAL_AUX).gamma >= aux.gamma * (1 - 1e-6)


def test_refinement_rejects_destabilizing_gain(integ):
    # A = 1 + 0.5 K is not Schur for K = 1
    with pytest.raises(Infeasible) as exc:
        refine_basin(integ, np.ones((1, 1)))
    assert exc.value.lemma == "Lemma 6"
    with pytest.raises(Infeasible) as exc:
        refine_basin(integ, np.ones((1, 1)), method=REGIONAL_AUX)
    assert exc.value.lemma == "Lemma 5"


def test_scalarized_mode(integ, w8):
    res = synthesize_aux(integ, w8, Scalarized(w=0.01, rel_tol=1e-2))
    d_star = h2_gevp(design_matrices(integ), w8).delta
    assert res.delta >= d_star * (1 - 1e-3)
    assert_sound(res, integ)
    with pytest.raises(ValueError):
        synthesize_aux(integ, w8, Scalarized(w=0.0))


def test_ladder_keeps_order(integ, w8):
    rows = synthesize_ladder(integ, w8, [20.0, 5.0], method=REGIONAL_AUX)
    assert [r[0] for r in rows] == [20.0, 5.0]
    assert all(r[1] is not None for r in rows)
    d_star = h2_gevp(design_matrices(integ), w8).delta
    rows = synthesize_ladder(integ, w8, [0.5 * d_star], method=REGIONAL_AUX)
    assert rows[0][1] is None and rows[0][2].startswith("Infeasible")


def test_benchmark_lemma2_and_regional(bench3):
    _, model, w8 = bench3
    with pytest.raises(Infeasible) as exc:
        synthesize_global(model, w8, 10.0)
    assert exc.value.lemma == "Lemma 2"
    res = synthesize_aux(model, w8, FixedDelta(10.0))
    assert_sound(res, model)


def test_scalar_plant_narrow(plant, w8):
    res = synthesize_narrow(plant, w8, FixedDelta(10.0), i_max=2)
    assert_sound(res, plant)
    assert scalar_plant().n == 1 and integrator_plant().n == 1
