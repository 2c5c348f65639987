import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnstab.errors import AssumptionViolated, CertificationFailed
from rnnstab.sigmoid import (
    ALGEBRAIC, SAT, TANH, YBAR_INF, SectorData, certify_sector_global, certify_sector_narrow,
    certify_sector_psi, check_assumption, compute_theta, compute_ybar, custom, eval_dz,
    eval_psi, eval_q, eval_sigma, is_unbounded, kind_from_name,
)

KINDS = [TANH, SAT, ALGEBRAIC]
finite_y = st.floats(-60.0, 60.0, allow_nan=False)


def test_eval_examples():
    assert eval_sigma(TANH, [0.0]).tolist() == [0.0]
    assert eval_sigma(SAT, [2.5, -0.3]).tolist() == [1.0, -0.3]
    assert eval_sigma(ALGEBRAIC, [1.0]).tolist() == [0.5]
    for k in KINDS:
        assert eval_q(k, [0.0]).tolist() == [0.0]
    assert eval_q(SAT, [3.0]).tolist() == [2.0]
    assert eval_q(TANH, [1.0])[0] == pytest.approx(1.0 - math.tanh(1.0), abs=1e-15)
    assert np.all(eval_psi(SAT, np.linspace(-5, 5, 11)) == 0.0)
    assert eval_psi(TANH, [1.0])[0] == pytest.approx(1.0 - math.tanh(1.0), abs=1e-15)
    assert eval_psi(TANH, [10.0])[0] == pytest.approx(4.122307e-9, rel=1e-5)
    assert eval_dz([0.5, 2.0, -3.0]).tolist() == [0.0, 1.0, -2.0]


def test_kind_from_name():
    assert kind_from_name("TANH") is TANH
    with pytest.raises(ValueError):
        kind_from_name("relu")
    with pytest.raises(ValueError):
        custom("tanh", np.tanh)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.name)
@given(y=finite_y)
@settings(max_examples=300, deadline=None)
def test_pointwise_sector_properties(kind, y):
    s = float(eval_sigma(kind, [y])[0])
    q = float(eval_q(kind, [y])[0])
    p = float(eval_psi(kind, [y])[0])
    assert abs(s) <= min(1.0, abs(y)) + 1e-15
    assert q * s >= 0.0
    assert p * y >= 0.0
    if y != 0.0:
        assert p / y <= compute_theta(kind) + 1e-4


def test_theta_values():
    assert compute_theta(TANH) == pytest.approx(0.2384, abs=1e-3)
    assert compute_theta(SAT) == 0.0
    # psi(y)/y is y/(1+y) below one and 1/(y(1+y)) above: peak 1/2 at y = 1
    assert compute_theta(ALGEBRAIC) == pytest.approx(0.5, abs=1e-4)


def test_theta_is_upper_bound_on_dense_grid():
    y = np.linspace(1e-6, 50.0, 400_001)
    for k in KINDS:
        ratio = eval_psi(k, y) / y
        th = compute_theta(k)
        assert ratio.max() <= th
        assert th - ratio.max() <= 1e-4


def test_ybar_examples():
    assert compute_ybar(TANH, 1.0) == pytest.approx(1.915008, abs=2e-6)
    assert compute_ybar(SAT, 1.0) == pytest.approx(2.0, abs=2e-6)
    y05, y1, y2 = (compute_ybar(TANH, h) for h in (0.5, 1.0, 2.0))
    assert y2 < y1 < y05
    assert is_unbounded(compute_ybar(SAT, 1e-12)) or compute_ybar(SAT, 1e-12) > 1e6
    with pytest.raises(ValueError):
        compute_ybar(TANH, 0.0)


@given(h1=st.floats(0.01, 50.0), h2=st.floats(0.01, 50.0))
@settings(max_examples=60, deadline=None)
def test_ybar_monotone(h1, h2):
    lo, hi = sorted((h1, h2))
    for k in KINDS:
        assert compute_ybar(k, lo) >= compute_ybar(k, hi) - 1e-6


def test_ybar_is_a_root_rounded_down():
    for h in (0.3, 1.0, 4.0):
        yb = compute_ybar(TANH, h)
        alpha = h / (h + 1.0)
        assert math.tanh(yb) / yb >= alpha
        assert math.tanh(yb + 2e-6) / (yb + 2e-6) < alpha


def test_certify_global():
    rep = certify_sector_global(TANH, 1e-3, (-50.0, 50.0))
    assert rep.certified and rep.worst_value >= 0.0
    rep = certify_sector_global(SAT, 1e-3, (-50.0, 50.0))
    assert rep.certified and rep.worst_value == 0.0
    bad = custom("tanh15", lambda y: 1.5 * np.tanh(y), lipschitz=1.5, odd=True)
    with pytest.raises((CertificationFailed, AssumptionViolated)):
        certify_sector_global(bad, 1e-3, (-50.0, 50.0))


def test_certify_psi():
    assert certify_sector_psi(TANH, compute_theta(TANH)).certified
    assert certify_sector_psi(SAT, 0.3).certified
    with pytest.raises(CertificationFailed) as exc:
        certify_sector_psi(TANH, 0.1)
    rep = exc.value.report
    assert rep is not None and not rep.certified and rep.worst_value < 0
    # the witness lies where psi(y)/y exceeds 0.1
    y = rep.worst_y
    assert eval_psi(TANH, [y])[0] / y > 0.1


def test_certify_narrow():
    for h in (0.5, 1.0, 2.0):
        assert certify_sector_narrow(TANH, h, compute_ybar(TANH, h)).certified
    with pytest.raises(CertificationFailed):
        certify_sector_narrow(TANH, 1.0, 1.5 * compute_ybar(TANH, 1.0))
    assert certify_sector_narrow(TANH, 1e-9, 10.0).certified


def test_refining_grid_keeps_certification():
    for step in (2e-3, 1e-3, 5e-4):
        assert certify_sector_global(TANH, step, (-20.0, 20.0)).certified
        assert certify_sector_psi(TANH, compute_theta(TANH), step, (-20.0, 20.0)).certified


def test_sector_data():
    sd = SectorData([TANH, SAT])
    assert sd.nu == 2
    assert np.all((0 <= sd.theta) & (sd.theta < 1))
    yb = sd.ybar([1.0, 1.0])
    assert yb[0] == pytest.approx(1.915008, abs=2e-6) and yb[1] == pytest.approx(2.0, abs=2e-6)
    assert sd.certify(h_values=(0.5, 1.0))


def test_assumption_check_rejects_bad_kinds():
    with pytest.raises(AssumptionViolated):
        check_assumption(custom("steep", lambda y: np.tanh(3 * y), lipschitz=3.0, odd=True))
    with pytest.raises(AssumptionViolated):
        check_assumption(custom("shifted", lambda y: np.tanh(y) + 0.1))
    check_assumption(custom("mytanh", np.tanh, odd=True))


def test_sentinel_is_large():
    assert YBAR_INF >= 1e9 and is_unbounded(YBAR_INF)
