"""Scalar loops: the three stability tests side by side.

Run with ``python demos/scalar_loop.py``.  Two one-state loops are used:

* ``x+ = 0.5 x - 0.5 q(x)``, globally stable, so every test succeeds;
* ``x+ = 0.5 x + q(x) = 1.5 x - tanh(x)``, stable at the origin but
  divergent for large ``|x|``; the global test must fail and the regional
  tests return a bounded basin.

For the second loop the exact basin is the interval between the two
nonzero fixed points of ``1.5 x - tanh(x)``, which the demo prints for
comparison with the certified ellipsoids.
"""

import numpy as np
from scipy.optimize import brentq

from rnnstab import (
    ClosedLoop, Infeasible, TANH, algorithm1, analyze_regional_aux, check_global,
    min_h_feasible, validate_certificate,
)


def loop(a, b):
    return ClosedLoop(a=np.array([[a]]), b=np.array([[b]]), c=np.array([[1.0]]), kind=TANH,
                      k=np.zeros((1, 1)))


def main():
    stable = loop(0.5, -0.5)
    cert = check_global(stable)
    print(f"global test on x+ = 0.5x - 0.5q(x): S = {cert.s[0, 0]:.4g}, U = {cert.u[0, 0]:.4g}")

    cl = loop(0.5, 1.0)
    try:
        check_global(cl)
    except Infeasible as exc:
        print(f"global test on x+ = 1.5x - tanh(x): {exc}")

    # the exact basin edge solves 1.5 x - tanh(x) = x
    edge = brentq(lambda x: 0.5 * x - np.tanh(x), 0.5, 5.0)
    print(f"exact basin: |x| < {edge:.4f}")

    aux = analyze_regional_aux(cl)
    print(f"auxiliary-function basin: |x| <= {np.sqrt(aux.s[0, 0]):.4f}")

    hbar, _ = min_h_feasible(cl)
    res = algorithm1(cl, i_max=20)
    nar = res.certificate
    print(f"minimum slope h-bar = {hbar:.4f}; best ladder point i = {res.best_index}")
    print(f"sector-narrowing basin: |x| <= {np.sqrt(nar.s[0, 0]):.4f}")
    for c in (aux, nar):
        assert validate_certificate(c, cl).passed
        assert np.sqrt(c.s[0, 0]) < edge


if __name__ == "__main__":
    main()
