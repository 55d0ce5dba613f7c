"""Independent reference computations used by the tests.

These are deliberately naive (explicit loops, explicit inverses) and share no
code with the package beyond the environment arrays.
"""
from __future__ import annotations

import numpy as np


def naive_zeta(env, start=None):
    """Forward zeta by explicit inverses, seeded with the uniform stochastic matrix."""
    m = env.width
    L = len(env)
    z = [np.full((m, m), 1.0 / m)]
    for k in range(1, L):
        z.append(np.linalg.inv(np.eye(m) - env.R[k] - env.Q[k] @ z[-1]) @ env.P[k])
    return np.array(z)


def naive_A(env, zeta):
    m = env.width
    A = np.full((len(env), m, m), np.nan)
    for k in range(1, len(env)):
        A[k] = np.linalg.inv(np.eye(m) - env.R[k] - env.Q[k] @ zeta[k - 1]) @ env.Q[k]
    return A


def long_product_direction(A, k, depth):
    """Max-normalized ``A_k ... A_{k-depth+1} 1``."""
    x = np.ones(A.shape[1])
    for j in range(k - depth + 1, k + 1):
        x = A[j] @ x
        x /= np.abs(x).max()
    return x


def dense_exit_law(env, a, b, start):
    """Exit distribution on layers ``a`` and ``b`` by one dense linear solve.

    Returns ``(left, right)``: probabilities of first entering ``(a, j)`` and
    ``(b, j)`` for each lane ``j``.
    """
    m = env.width
    o = env.window[0]
    T = b - a - 1
    K = np.zeros((T * m, T * m))
    exit_l = np.zeros((T * m, m))
    exit_r = np.zeros((T * m, m))
    for t in range(T):
        n = a + 1 + t
        blk = slice(t * m, (t + 1) * m)
        K[blk, blk] = env.R[n - o]
        if t + 1 < T:
            K[blk, (t + 1) * m:(t + 2) * m] = env.P[n - o]
        else:
            exit_r[blk] = env.P[n - o]
        if t > 0:
            K[blk, (t - 1) * m:t * m] = env.Q[n - o]
        else:
            exit_l[blk] = env.Q[n - o]
    G = np.linalg.inv(np.eye(T * m) - K)
    row = (start[0] - a - 1) * m + start[1]
    return G[row] @ exit_l, G[row] @ exit_r


def brute_force_green(env, a, b, start):
    m = env.width
    o = env.window[0]
    T = b - a - 1
    K = np.zeros((T * m, T * m))
    for t in range(T):
        n = a + 1 + t
        for i in range(m):
            for j in range(m):
                K[t * m + i, t * m + j] = env.R[n - o, i, j]
                if t + 1 < T:
                    K[t * m + i, (t + 1) * m + j] = env.P[n - o, i, j]
                if t > 0:
                    K[t * m + i, (t - 1) * m + j] = env.Q[n - o, i, j]
    G = np.linalg.inv(np.eye(T * m) - K)
    return G[(start[0] - a - 1) * m + start[1]].reshape(T, m)
