"""Brute-force references used by the tests.

Each oracle searches a dense grid over the scalar decision variables of a
one-state, one-channel program and checks positive definiteness directly
with ``eigvalsh``; nothing here goes through the LMI layer.
"""

import numpy as np

from rnnstab.verify import solve_dlyap


def pd(m, tol=0.0):
    return np.linalg.eigvalsh(0.5 * (m + m.T))[0] > tol


def global_grid(a, b, c, grid=None):
    """Some (S, U) with the 3x3 global matrix positive definite, or None."""
    grid = np.geomspace(1e-3, 1e3, 121) if grid is None else grid
    for s in grid:
        for u in grid:
            m = np.array([[s, -c * s, s * a],
                          [-c * s, 2 * u, u * b],
                          [a * s, b * u, s]])
            if pd(m):
                return s, u
    return None


def min_h_grid(a, b, c, n_s=400, n_h=800):
    """Smallest h = Hu/U with the min-slope block PD, over U >= 1 and S > 0.

    The block is homogeneous in (S, U, Hu), so fixing U = 1 and scanning S
    and h covers the program.
    """
    ss = np.geomspace(1e-4, 1e4, n_s)
    hs = np.linspace(0.0, 20.0, n_h + 1)
    for h in hs:
        for s in ss:
            m = np.array([[s, -c * s, s * a],
                          [-c * s, 2 * (h + 1.0), b],
                          [a * s, b, s]])
            if pd(m, 1e-12):
                return h
    return np.inf


def h2_scalar_grid(f, g, q, r, ks=None):
    """min over scalar K of trace X(K), X = Ac' X Ac + Cc' Cc, Ac = F + G K."""
    ks = np.linspace(-3.0, 3.0, 60001) if ks is None else ks
    best, kbest = np.inf, None
    q = np.asarray(q, dtype=float).reshape(-1, 1)
    r = np.asarray(r, dtype=float).reshape(-1, 1)
    for k in ks:
        ac = f + g * k
        if abs(ac) >= 1.0:
            continue
        cc = q + r * k
        # scalar dlyap: x = cc'cc / (1 - ac^2)
        val = (cc.T @ cc).item() / (1.0 - ac * ac)
        if val < best:
            best, kbest = val, k
    return best, kbest


def impulse_h2(a, c, steps=4000):
    """Truncated sum of ||C A^t||_F^2."""
    tot, p = 0.0, np.eye(a.shape[0])
    for _ in range(steps):
        tot += float(np.sum((c @ p) ** 2))
        p = a @ p
    return tot


def fixed_point_dlyap(a, q, iters=20000):
    x = np.zeros_like(q)
    for _ in range(iters):
        x = a.T @ x @ a + q
    return x


def dlyap_trace(a, c):
    return float(np.trace(solve_dlyap(a, c.T @ c)))
