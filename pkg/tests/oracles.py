"""Independent reference computations used by the tests.

Nothing here imports the solver internals beyond plain evaluation of H.
"""

import numpy as np


def periodic_gap(x, y):
    d = np.abs(np.mod(np.asarray(x, float) - np.asarray(y, float), 1.0))
    return np.minimum(d, 1.0 - d)


def hopf_lax_quadratic(phi_vals, t):
    """min_y phi(y) + d(x, y)^2 / (2t) over every node, 1D."""
    N = len(phi_vals)
    x = np.arange(N) / N
    d = periodic_gap(x[:, None], x[None, :])
    return np.min(phi_vals[None, :] + d**2 / (2 * t), axis=1)


def dp_step_bruteforce(phi_vals, cost):
    """min over sources j of phi[j] + cost(i, j); cost is an (N, N) array with inf outside the window."""
    return np.min(phi_vals[None, :] + cost, axis=1)


def quadratic_lagrangian(x, v, V):
    """Conjugate of |p|^2/2 + V(x)."""
    return 0.5 * np.sum(np.atleast_1d(v) ** 2) - V(x)


def relativistic_lagrangian(x, v, V):
    """Conjugate of sqrt(1+|p|^2) - 1 + V(x), finite for |v| < 1."""
    s = np.sum(np.atleast_1d(v) ** 2)
    return 1.0 - np.sqrt(1.0 - s) - V(x)


def dense_conjugate_1d(h_of_p, v, p_max=20.0, n=400001):
    """sup_p p v - h(p) by brute force over a fine 1D grid."""
    p = np.linspace(-p_max, p_max, n)
    return float(np.max(p * v - h_of_p(p)))


def sublevel_critical_value_1d(H, N=512, p_max=50.0, n_p=4001, iters=60):
    """Smallest c for which a periodic grid function u with H(x, Du) <= c can exist.

    At level c each node needs a slope in the sublevel interval [a(x), b(x)]
    (empty means infeasible), and the slopes must average to zero on the
    circle. Feasible iff every interval is nonempty and sum a <= 0 <= sum b.
    Bisection on c.
    """
    x = np.arange(N) / N
    p = np.linspace(-p_max, p_max, n_p)
    vals = H(x[:, None], p[None, :])

    def feasible(c):
        inside = vals <= c
        if not np.all(inside.any(axis=1)):
            return False
        lo = np.where(inside, p[None, :], np.inf).min(axis=1)
        hi = np.where(inside, p[None, :], -np.inf).max(axis=1)
        return lo.sum() <= 0.0 <= hi.sum()

    a, b = float(vals.min()), float(vals.max())
    for _ in range(iters):
        m = 0.5 * (a + b)
        a, b = (a, m) if feasible(m) else (m, b)
    return b


def dyadic_field(rng, size, bits=20):
    """Values k / 2^bits in [1.25, 1.5): sums and shifts of these stay exact."""
    k = rng.integers(int(1.25 * 2**bits), int(1.5 * 2**bits), size=size)
    return k / float(2**bits)


def lipschitz_bruteforce(vals):
    """max over all node pairs |u(x) - u(y)| / d(x, y), 1D."""
    N = len(vals)
    x = np.arange(N) / N
    d = periodic_gap(x[:, None], x[None, :])
    np.fill_diagonal(d, np.inf)
    return float(np.max(np.abs(vals[:, None] - vals[None, :]) / d))
