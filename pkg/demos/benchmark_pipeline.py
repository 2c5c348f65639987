"""Identification to closed-loop step response on the synthetic plant.

Run with ``python demos/benchmark_pipeline.py [n_s]``.  The steps are:

1. excite the bundled surrogate plant with a multilevel random input;
2. fit an echo state network with output feedback;
3. append an integrator on the output error and confirm that the global
   test cannot apply (the integrator eigenvalue sits at one for K = 0);
4. run both regional joint designs over the H2 bounds 5, 10 and 20;
5. simulate a set-point step with the gain of the largest bound.
"""

import sys

import numpy as np

from rnnstab import (
    FixedDelta, Infeasible, augment_integrator, benchmark_weights, build_closed_loop,
    check_global, generate_surrogate_data, identify_esn, simulate, synthesize_aux,
    synthesize_narrow,
)
from rnnstab.verify import load_preset


def main(n_s=3):
    data = generate_surrogate_data(seed=0)
    tr = identify_esn(data, n_s=n_s, seed=0)
    print(f"ESN with {n_s} states: validation FIT {tr.fit:.1f} %")
    model = augment_integrator(tr.esn)
    w8 = benchmark_weights(tr.esn.wy)
    try:
        check_global(build_closed_loop(model, np.zeros((1, model.n))))
    except Infeasible as exc:
        print(f"global analysis at K = 0: {exc.lemma}")

    print(f"{'delta_bar':>9} {'aux gamma':>10} {'narrow gamma':>13}")
    last = None
    for db in (5.0, 10.0, 20.0):
        a = synthesize_aux(model, w8, FixedDelta(db))
        n = synthesize_narrow(model, w8, FixedDelta(db))
        print(f"{db:9.1f} {a.gamma:10.4g} {n.gamma:13.4g}")
        last = n

    ref = tr.normalize_y(load_preset()["reference"])
    traj = simulate(build_closed_loop(model, last.k), np.zeros(model.n), 300, reference=ref)
    y = tr.denormalize_y(traj.states[:, :n_s] @ tr.esn.wy[0])
    print(f"step to the set point: output after 300 samples {y[-1]:.3f} "
          f"(target {load_preset()['reference']})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
