"""H2 design for an unstable plant driven through a saturating actuator.

Run with ``python demos/saturated_input.py``.  The plant is

    x+ = 1.2 x + 0.5 sigma(u),   u = K x,

so no gain can pull back a state with ``|x| >= 2.5``: there
``|x+| >= 1.2 |x| - 0.5 >= |x|``.  The certified basin ``S`` is therefore
bounded by ``2.5^2 = 6.25`` whatever the gain.  The demo sweeps the H2
bound ``delta_bar`` and shows both joint designs trading performance for
basin size, with the narrowing design approaching the exact limit.
"""

import numpy as np

from rnnstab import (
    FixedDelta, H2Weights, RnnModel, build_closed_loop, design_matrices, h2_gevp,
    monte_carlo_invariance, synthesize_aux, synthesize_narrow,
)


def main():
    model = RnnModel(np.array([[1.2]]), np.zeros((1, 1)), np.array([[0.5]]),
                     np.zeros((1, 1)), np.ones((1, 1)))
    w8 = H2Weights(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))
    d_star = h2_gevp(design_matrices(model), w8).delta
    print(f"unconstrained H2 optimum: delta* = {d_star:.4f}")
    print(f"{'delta_bar':>9} {'aux gamma':>10} {'narrow gamma':>13} {'K (narrow)':>11}")
    for db in (5.0, 10.0, 20.0, 40.0):
        a = synthesize_aux(model, w8, FixedDelta(db))
        n = synthesize_narrow(model, w8, FixedDelta(db), i_max=4)
        for r in (a, n):
            assert monte_carlo_invariance(r.certificate, build_closed_loop(model, r.k)).passed
        print(f"{db:9.1f} {a.gamma:10.4f} {n.gamma:13.4f} {n.k[0, 0]:11.4f}")
    print("exact limit 6.25")


if __name__ == "__main__":
    main()
