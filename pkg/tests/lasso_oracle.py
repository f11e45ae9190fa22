"""Exhaustive reference solver for small weighted-lasso problems."""
import itertools

import numpy as np

from plsim.optimizer import LinearizedProblem


def lasso_by_enumeration(gram, c, weights):
    """Minimize ``0.5 b'Gb - c'b + sum w_j |b_j|`` by visiting every support.

    ``weights`` covers the leading coordinates; the rest are unpenalized and
    always free. On each support every sign pattern is solved at once and
    only sign-consistent stationary points are kept. ``gram`` must be
    positive definite.
    """
    k = len(weights)
    m = c.size
    free = list(range(k, m))
    best_val, best = 0.0, np.zeros(m)
    if free:
        b = np.zeros(m)
        b[free] = np.linalg.solve(gram[np.ix_(free, free)], c[free])
        best_val, best = _objective(gram, c, weights, b), b
    for size in range(1, k + 1):
        for sub in itertools.combinations(range(k), size):
            cols = list(sub) + free
            g_inv = np.linalg.inv(gram[np.ix_(cols, cols)])
            signs = np.array(list(itertools.product((-1.0, 1.0), repeat=size))).T
            rhs = c[cols][:, None] - np.vstack([np.asarray(weights)[list(sub)][:, None] * signs,
                                                np.zeros((len(free), signs.shape[1]))])
            sol = g_inv @ rhs
            ok = np.all(np.sign(sol[:size]) == signs, axis=0)
            for col in np.flatnonzero(ok):
                b = np.zeros(m)
                b[cols] = sol[:, col]
                val = _objective(gram, c, weights, b)
                if val < best_val:
                    best_val, best = val, b
    return best_val, best


def _objective(gram, c, weights, b):
    k = len(weights)
    return float(0.5 * b @ gram @ b - c @ b + np.sum(np.asarray(weights) * np.abs(b[:k])))


def random_instance(rng, max_cols=12):
    k = int(rng.integers(1, 10))
    q = int(rng.integers(0, min(3, max_cols - k) + 1))
    m = k + q
    n = int(rng.integers(m + 5, 60))
    design = rng.standard_normal((n, m)) @ np.diag(rng.uniform(0.3, 2.0, m))
    if m > 1:
        design[:, 1] += rng.uniform(-0.9, 0.9) * design[:, 0]
    y = design[:, :2] @ rng.standard_normal(min(2, m)) if m >= 2 else design[:, 0]
    y = y + rng.standard_normal(n)
    gram = design.T @ design / n
    c = design.T @ y / n
    weights = rng.uniform(0.0, 1.0, k) * np.max(np.abs(c))
    weights[rng.random(k) < 0.15] = 0.0
    return gram, c, weights, q


def problem_from(gram, c, n_beta):
    # any square root of the gram matrix gives the same quadratic
    n = gram.shape[0]
    root = np.linalg.cholesky(gram).T * np.sqrt(n)
    y = np.linalg.solve(root.T, c * n)
    return LinearizedProblem(y, root, np.arange(n - n_beta), n_beta, np.zeros(n), np.zeros(n))
