"""Independent reference implementations used by the tests."""
from __future__ import annotations

import itertools

import numpy as np


def active_set_qp(P, q, A, l, u, tol=1e-9):
    """Brute-force QP solve: enumerate every activity pattern, solve its KKT system.

    Each row is inactive, active at ``l`` or active at ``u``. Only patterns with
    linearly independent active rows are solved; the best primal-feasible
    stationary point is the optimum of a strictly convex problem.
    Returns ``(z, objective)`` or ``(None, inf)`` when nothing is feasible.
    """
    P, q, A, l, u = (np.asarray(v, dtype=float) for v in (P, q, A, l, u))
    n, m = P.shape[0], A.shape[0]
    best_z, best_f = None, np.inf
    choices = []
    for i in range(m):
        opts = [None]
        if np.isfinite(l[i]):
            opts.append(l[i])
        if np.isfinite(u[i]) and u[i] != l[i]:
            opts.append(u[i])
        choices.append(opts)
    for pattern in itertools.product(*choices):
        act = [i for i, v in enumerate(pattern) if v is not None]
        if len(act) > n:
            continue
        Aa = A[act]
        if act and np.linalg.matrix_rank(Aa) < len(act):
            continue
        k = len(act)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P
        K[:n, n:] = Aa.T
        K[n:, :n] = Aa
        rhs = np.concatenate([-q, [pattern[i] for i in act]])
        z = np.linalg.solve(K, rhs)[:n]
        Az = A @ z
        if np.all(Az >= l - tol) and np.all(Az <= u + tol):
            f = 0.5 * z @ P @ z + q @ z
            if f < best_f:
                best_z, best_f = z, f
    return best_z, best_f


def random_qp(rng: np.random.Generator, n_max=6, m_max=8):
    """Strictly convex dense QP with a nonempty feasible set."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    M = rng.normal(size=(n, n))
    P = M.T @ M + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    Az0 = A @ z0
    l = Az0 - rng.uniform(0, 1, size=m)
    u = Az0 + rng.uniform(0, 1, size=m)
    kind = rng.integers(0, 4, size=m)
    l[kind == 1] = -np.inf
    u[kind == 2] = np.inf
    eq = kind == 3
    l[eq] = u[eq] = Az0[eq]
    return P, q, A, l, u


def unrolled_psi_sympy(i: int, gammas):
    """Symbolic coefficients of psi_{i-1}(x_k) in psi_0(x_k), ..., psi_0(x_{k+i-1})."""
    import sympy as sp

    p = sp.symbols(f"p0:{i}")
    expr = list(p)
    for g in gammas[: i - 1]:
        g = sp.nsimplify(g)
        expr = [expr[s + 1] + (g - 1) * expr[s] for s in range(len(expr) - 1)]
    (e,) = expr
    return [sp.expand(e).coeff(ps) for ps in p]
