"""Compiled inner loops of the ADMM solver.

Sparse matrices are passed as raw CSC arrays ``(indptr, indices, data)``.
The KKT system is factorized with an up-looking LDL' factorization of its
(permuted) upper triangle; the elimination tree and column counts depend
only on the sparsity pattern and are computed once per pattern.
"""
import numpy as np
from numba import njit

SOLVED = 0
MAX_ITER = 1
PRIMAL_INFEASIBLE = 2
FACTOR_FAILED = 3

_UNKNOWN = -1


# sparse helpers ----------------------------------------------------------

@njit(cache=True)
def csc_matvec(Ap, Ai, Ax, x, out):
    """``out = A @ x``."""
    out[:] = 0.0
    for j in range(Ap.size - 1):
        xj = x[j]
        if xj != 0.0:
            for k in range(Ap[j], Ap[j + 1]):
                out[Ai[k]] += Ax[k] * xj


@njit(cache=True)
def csc_rmatvec(Ap, Ai, Ax, y, out):
    """``out = A.T @ y``."""
    for j in range(Ap.size - 1):
        acc = 0.0
        for k in range(Ap[j], Ap[j + 1]):
            acc += Ax[k] * y[Ai[k]]
        out[j] = acc


@njit(cache=True)
def inf_norm(v):
    r = 0.0
    for i in range(v.size):
        a = abs(v[i])
        if a > r:
            r = a
    return r


# LDL' factorization -------------------------------------------------------

@njit(cache=True)
def etree(n, Kp, Ki, Lnz, parent):
    """Elimination tree and column counts of an upper-triangular CSC pattern.

    Returns the number of nonzeros in L, or -1 if an entry lies below the diagonal.
    """
    work = np.empty(n, dtype=np.int64)
    for i in range(n):
        work[i] = 0
        Lnz[i] = 0
        parent[i] = _UNKNOWN
    for j in range(n):
        work[j] = j
        for p in range(Kp[j], Kp[j + 1]):
            i = Ki[p]
            if i > j:
                return -1
            while work[i] != j:
                if parent[i] == _UNKNOWN:
                    parent[i] = j
                Lnz[i] += 1
                work[i] = j
                i = parent[i]
    total = 0
    for i in range(n):
        total += Lnz[i]
    return total


@njit(cache=True)
def ldl_factor(n, Kp, Ki, Kx, Lp, Li, Lx, D, Dinv, Lnz, parent):
    """Numeric factorization ``K = L D L'``; returns the count of positive pivots or -1."""
    marked = np.zeros(n, dtype=np.bool_)
    y_idx = np.empty(n, dtype=np.int64)
    elim = np.empty(n, dtype=np.int64)
    next_space = np.empty(n, dtype=np.int64)
    y_vals = np.zeros(n)

    Lp[0] = 0
    for i in range(n):
        Lp[i + 1] = Lp[i] + Lnz[i]
        D[i] = 0.0
        next_space[i] = Lp[i]

    positive = 0
    for k in range(n):
        nnz_y = 0
        for p in range(Kp[k], Kp[k + 1]):
            b = Ki[p]
            if b == k:
                D[k] += Kx[p]
                continue
            y_vals[b] += Kx[p]
            if not marked[b]:
                marked[b] = True
                elim[0] = b
                n_elim = 1
                nxt = parent[b]
                while nxt != _UNKNOWN and nxt < k:
                    if marked[nxt]:
                        break
                    marked[nxt] = True
                    elim[n_elim] = nxt
                    n_elim += 1
                    nxt = parent[nxt]
                while n_elim > 0:
                    n_elim -= 1
                    y_idx[nnz_y] = elim[n_elim]
                    nnz_y += 1
        for t in range(nnz_y - 1, -1, -1):
            c = y_idx[t]
            top = next_space[c]
            yc = y_vals[c]
            for j in range(Lp[c], top):
                y_vals[Li[j]] -= Lx[j] * yc
            Li[top] = k
            Lx[top] = yc * Dinv[c]
            D[k] -= yc * Lx[top]
            next_space[c] += 1
            y_vals[c] = 0.0
            marked[c] = False
        if D[k] == 0.0:
            return -1
        if D[k] > 0.0:
            positive += 1
        Dinv[k] = 1.0 / D[k]
    return positive


@njit(cache=True)
def ldl_solve(n, Lp, Li, Lx, Dinv, x):
    """Solve ``L D L' x = b`` in place."""
    for i in range(n):
        v = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * v
    for i in range(n):
        x[i] *= Dinv[i]
    for i in range(n - 1, -1, -1):
        v = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            v -= Lx[j] * x[Li[j]]
        x[i] = v


@njit(cache=True)
def kkt_values(Kx, Px, posP, sigma, posSig, Ax, posA, rho, posRho):
    """Fill the permuted upper-triangular KKT values from the problem data."""
    Kx[:] = 0.0
    for k in range(posP.size):
        if posP[k] >= 0:
            Kx[posP[k]] += Px[k]
    for j in range(posSig.size):
        Kx[posSig[j]] += sigma
    for k in range(posA.size):
        Kx[posA[k]] += Ax[k]
    for i in range(posRho.size):
        Kx[posRho[i]] -= 1.0 / rho[i]


# scaling ----------------------------------------------------------------

@njit(cache=True)
def _limit(v, lo, hi):
    if v < lo:
        return 1.0
    if v > hi:
        return hi
    return v


@njit(cache=True)
def ruiz(n, m, Pp, Pi, Px, Ap, Ai, Ax, q, iters, D, E, lo, hi):
    """Modified Ruiz equilibration in place; returns the cost scaling ``c``."""
    d = np.empty(n)
    e = np.empty(m)
    c = 1.0
    D[:] = 1.0
    E[:] = 1.0
    for _ in range(iters):
        for i in range(m):
            e[i] = 0.0
        for j in range(n):
            mx = 0.0
            for k in range(Pp[j], Pp[j + 1]):
                a = abs(Px[k])
                if a > mx:
                    mx = a
            for k in range(Ap[j], Ap[j + 1]):
                a = abs(Ax[k])
                if a > mx:
                    mx = a
                if a > e[Ai[k]]:
                    e[Ai[k]] = a
            d[j] = 1.0 / np.sqrt(_limit(mx, lo, hi))
        for i in range(m):
            e[i] = 1.0 / np.sqrt(_limit(e[i], lo, hi))
        for j in range(n):
            for k in range(Pp[j], Pp[j + 1]):
                Px[k] *= d[Pi[k]] * d[j]
            for k in range(Ap[j], Ap[j + 1]):
                Ax[k] *= e[Ai[k]] * d[j]
            q[j] *= d[j]
            D[j] *= d[j]
        for i in range(m):
            E[i] *= e[i]
        mean_col = 0.0
        for j in range(n):
            mx = 0.0
            for k in range(Pp[j], Pp[j + 1]):
                a = abs(Px[k])
                if a > mx:
                    mx = a
            mean_col += mx
        if n:
            mean_col /= n
        gamma = max(mean_col, inf_norm(q))
        gamma = 1.0 / min(gamma, hi) if gamma >= lo else 1.0
        for k in range(Px.size):
            Px[k] *= gamma
        for j in range(n):
            q[j] *= gamma
        c *= gamma
    return c


# ADMM -------------------------------------------------------------------

@njit(cache=True)
def _box_violation(v, l, u):
    """Largest violation of ``l <= v <= u``."""
    r = 0.0
    for i in range(v.size):
        if l[i] - v[i] > r:
            r = l[i] - v[i]
        if v[i] - u[i] > r:
            r = v[i] - u[i]
    return r


@njit(cache=True)
def _rho_vector(rho, base, is_eq, is_free, eq_factor, rho_min):
    for i in range(rho.size):
        if is_free[i]:
            rho[i] = rho_min
        elif is_eq[i]:
            rho[i] = base * eq_factor
        else:
            rho[i] = base


@njit(cache=True)
def admm(n, m,
         Pp, Pi, Px, Ap, Ai, Ax, q, l, u,          # original data
         Pxs, Axs, qs, ls, us, D, E, c,             # scaled data and scaling
         nK, Kp, Ki, Kx, perm, posP, posSig, posA, posRho,
         Lp, Li, Lx, Dl, Dinv, Lnz, parent,
         x, y, s, y_prev,                           # scaled iterates, in/out
         rho_base, sigma, alpha, eps_abs, eps_rel, eps_feas, eps_pinf, max_iter,
         check_every, adaptive, interval, is_eq, is_free,
         inf, eq_factor, rho_min, trigger):
    """Run ADMM to termination. Returns ``(status, iterations, r_prim, r_dual, e_prim)``."""
    rho = np.empty(m)
    rho_inv = np.empty(m)
    _rho_vector(rho, rho_base, is_eq, is_free, eq_factor, rho_min)
    for i in range(m):
        rho_inv[i] = 1.0 / rho[i]
    kkt_values(Kx, Pxs, posP, sigma, posSig, Axs, posA, rho, posRho)
    if ldl_factor(nK, Kp, Ki, Kx, Lp, Li, Lx, Dl, Dinv, Lnz, parent) < 0:
        return FACTOR_FAILED, 0, np.inf, np.inf, np.nan

    rhs = np.empty(nK)
    sol = np.empty(nK)
    z = np.empty(n)
    yu = np.empty(m)
    su = np.empty(m)
    Az = np.empty(m)
    Pz = np.empty(n)
    Aty = np.empty(n)
    dy = np.empty(m)
    Ax_s = np.empty(m)
    Px_s = np.empty(n)
    Aty_s = np.empty(n)

    q_inf = inf_norm(q)
    status = MAX_ITER
    r_prim = np.inf
    r_dual = np.inf
    e_prim = np.nan
    it = 0
    for it in range(1, max_iter + 1):
        # right-hand side, then permuted into KKT order
        for j in range(n):
            sol[j] = sigma * x[j] - qs[j]
        for i in range(m):
            sol[n + i] = s[i] - y[i] * rho_inv[i]
        for k in range(nK):
            rhs[k] = sol[perm[k]]
        ldl_solve(nK, Lp, Li, Lx, Dinv, rhs)
        for k in range(nK):
            sol[perm[k]] = rhs[k]
        for j in range(n):
            x[j] = alpha * sol[j] + (1.0 - alpha) * x[j]
        for i in range(m):
            s_tilde = s[i] + (sol[n + i] - y[i]) * rho_inv[i]
            s_rel = alpha * s_tilde + (1.0 - alpha) * s[i]
            v = s_rel + y[i] * rho_inv[i]
            if v < ls[i]:
                v = ls[i]
            elif v > us[i]:
                v = us[i]
            y[i] += rho[i] * (s_rel - v)
            s[i] = v

        if it % check_every != 0 and it != max_iter:
            continue

        # residuals on the original data
        for j in range(n):
            z[j] = D[j] * x[j]
        for i in range(m):
            yu[i] = E[i] * y[i] / c
            su[i] = s[i] / E[i]
        csc_matvec(Ap, Ai, Ax, z, Az)
        csc_matvec(Pp, Pi, Px, z, Pz)
        csc_rmatvec(Ap, Ai, Ax, yu, Aty)
        r_prim = 0.0
        for i in range(m):
            r_prim = max(r_prim, abs(Az[i] - su[i]))
        r_dual = 0.0
        for j in range(n):
            r_dual = max(r_dual, abs(Pz[j] + q[j] + Aty[j]))
        e_prim = eps_abs + eps_rel * max(inf_norm(Az), inf_norm(su))
        e_dual = eps_abs + eps_rel * max(inf_norm(Pz), inf_norm(Aty), q_inf)
        if r_prim <= e_prim and r_dual <= e_dual and _box_violation(Az, l, u) <= eps_feas:
            status = SOLVED
            break

        if m > 0 and r_prim > e_prim:
            # certificate test on the dual iterate change
            for i in range(m):
                d_i = E[i] * (y[i] - y_prev[i]) / c
                if u[i] >= inf and d_i > 0.0:
                    d_i = 0.0
                if l[i] <= -inf and d_i < 0.0:
                    d_i = 0.0
                dy[i] = d_i
            norm = inf_norm(dy)
            if norm > 1e-12:
                support = 0.0
                for i in range(m):
                    if dy[i] > 0.0 and u[i] < inf:
                        support += u[i] * dy[i]
                    elif dy[i] < 0.0 and l[i] > -inf:
                        support += l[i] * dy[i]
                csc_rmatvec(Ap, Ai, Ax, dy, Aty)
                if support <= -eps_pinf * norm and inf_norm(Aty) <= eps_pinf * norm:
                    status = PRIMAL_INFEASIBLE
                    break
        for i in range(m):
            y_prev[i] = y[i]

        if m > 0 and adaptive and it % interval == 0:
            csc_matvec(Ap, Ai, Axs, x, Ax_s)
            csc_matvec(Pp, Pi, Pxs, x, Px_s)
            csc_rmatvec(Ap, Ai, Axs, y, Aty_s)
            num = 0.0
            for i in range(m):
                num = max(num, abs(Ax_s[i] - s[i]))
            prim = num / max(inf_norm(Ax_s), inf_norm(s), 1e-30)
            num = 0.0
            for j in range(n):
                num = max(num, abs(Px_s[j] + qs[j] + Aty_s[j]))
            dual = num / max(inf_norm(Px_s), inf_norm(Aty_s), inf_norm(qs), 1e-30)
            new = rho_base * np.sqrt(prim / max(dual, 1e-30))
            new = min(max(new, rho_min), 1e6)
            if new > trigger * rho_base or new < rho_base / trigger:
                rho_base = new
                _rho_vector(rho, rho_base, is_eq, is_free, eq_factor, rho_min)
                for i in range(m):
                    rho_inv[i] = 1.0 / rho[i]
                kkt_values(Kx, Pxs, posP, sigma, posSig, Axs, posA, rho, posRho)
                if ldl_factor(nK, Kp, Ki, Kx, Lp, Li, Lx, Dl, Dinv, Lnz, parent) < 0:
                    return FACTOR_FAILED, it, r_prim, r_dual, e_prim
    return status, it, r_prim, r_dual, e_prim
