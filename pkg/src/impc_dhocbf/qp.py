"""Operator-splitting (ADMM) solver for convex quadratic programs.

Solves::

    minimize    1/2 z' P z + q' z
    subject to  l <= A z <= u

The iteration alternates an equality-constrained QP solve on the
quasi-definite KKT matrix, a projection onto ``[l, u]`` and a dual update.
The KKT matrix is factorized (sparse LDL') once per problem and reused
across iterations; it is refactorized only when the step size rho is
adapted. Problem data are equilibrated (modified Ruiz scaling) before
iterating; residuals and tolerances are always evaluated on the original
data. The fill-reducing ordering and elimination tree depend only on the
sparsity pattern and are cached, so a sequence of QPs with a fixed pattern
pays for the symbolic analysis once.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from . import _kernels as kern

INF = 1e20
RHO_EQ_FACTOR = 1e3
RHO_MIN = 1e-6
SCALE_MIN, SCALE_MAX = 1e-4, 1e4
ADAPT_TRIGGER = 5.0


class QpStatus(str, enum.Enum):
    SOLVED = "Solved"
    MAX_ITER = "MaxIter"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"


class QpError(ValueError):
    """Malformed QP data."""


@dataclass(frozen=True)
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = sp.csc_matrix(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        A = sp.csc_matrix(self.A, dtype=float) if self.A is not None else sp.csc_matrix((0, n))
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        if P.shape != (n, n):
            raise QpError(f"P must be {n}x{n}, got {P.shape}")
        if A.shape[1] != n:
            raise QpError(f"A must have {n} columns, got {A.shape[1]}")
        m = A.shape[0]
        if l.shape != (m,) or u.shape != (m,):
            raise QpError(f"l and u must have length {m}")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)) or np.any(np.isnan(q)):
            raise QpError("NaN in problem data")
        if np.any(l > u):
            raise QpError("l <= u violated")
        asym = abs(P - P.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(P).max()):
            raise QpError("P is not symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", np.maximum(l, -INF))
        object.__setattr__(self, "u", np.minimum(u, INF))

    @classmethod
    def trusted(cls, P: sp.csc_matrix, q: np.ndarray, A: sp.csc_matrix,
                l: np.ndarray, u: np.ndarray) -> "QpProblem":
        """Build from already-valid float CSC data without copying or checks."""
        self = object.__new__(cls)
        for name, v in (("P", P), ("q", q), ("A", A), ("l", np.maximum(l, -INF)),
                        ("u", np.minimum(u, INF))):
            object.__setattr__(self, name, v)
        return self

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


@dataclass(frozen=True)
class QpSettings:
    """ADMM parameters.

    A result is Solved when the primal and dual residuals meet
    ``eps_abs + eps_rel * scale`` and, in addition, no constraint is violated
    by more than ``eps_feas`` (an absolute cap that keeps the relative test
    from accepting visible violations on badly scaled rows).
    """

    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_feas: float = 1e-5
    max_iter: int = 20000
    eps_prim_inf: float = 1e-5
    scaling_iter: int = 10
    check_every: int = 5
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25

    def __post_init__(self):
        for name in ("rho", "sigma", "eps_abs", "eps_rel", "eps_feas", "eps_prim_inf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.max_iter < 1 or self.check_every < 1 or self.adaptive_rho_interval < 1:
            raise ValueError("max_iter, check_every and adaptive_rho_interval must be >= 1")
        if self.adaptive_rho_interval % self.check_every:
            raise ValueError("adaptive_rho_interval must be a multiple of check_every")


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    primal_tolerance: float = float("nan")

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED

    @property
    def primal_feasible(self) -> bool:
        """Last iterate met the primal tolerance (true for every Solved result)."""
        return self.status is not QpStatus.PRIMAL_INFEASIBLE and self.primal_residual <= self.primal_tolerance


class _Structure:
    """Symbolic data for the permuted upper-triangular KKT matrix.

    ``pos_*`` map every entry of P (upper part), the sigma diagonal, every
    entry of A and the rho diagonal to its slot in the KKT value array.
    """

    def __init__(self, n: int, m: int, P: sp.csc_matrix, A: sp.csc_matrix):
        nK = n + m
        pr, pc = P.indices.astype(np.int64), _entry_columns(P)
        ar, ac = A.indices.astype(np.int64), _entry_columns(A)
        diag = np.arange(nK, dtype=np.int64)
        self.perm = self._ordering(nK, np.concatenate([pr, n + ar, diag]),
                                   np.concatenate([pc, ac, diag]))
        pinv = np.empty(nK, dtype=np.int64)
        pinv[self.perm] = np.arange(nK)

        keep = pr <= pc
        rows = np.concatenate([pinv[pr[keep]], pinv[ac], pinv[diag]])
        cols = np.concatenate([pinv[pc[keep]], pinv[n + ar], pinv[diag]])
        lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
        keys, slot = np.unique(hi * nK + lo, return_inverse=True)
        k_p, k_a = int(keep.sum()), ar.size
        self.pos_P = np.full(pr.size, -1, dtype=np.int64)
        self.pos_P[keep] = slot[:k_p]
        self.pos_A = slot[k_p:k_p + k_a].astype(np.int64)
        self.pos_sigma = slot[k_p + k_a:k_p + k_a + n].astype(np.int64)
        self.pos_rho = slot[k_p + k_a + n:].astype(np.int64)

        self.nK = nK
        self.Ki = (keys % nK).astype(np.int64)
        self.Kp = np.searchsorted(keys // nK, np.arange(nK + 1)).astype(np.int64)
        self.Lnz = np.empty(nK, dtype=np.int64)
        self.parent = np.empty(nK, dtype=np.int64)
        self.nnz_L = kern.etree(nK, self.Kp, self.Ki, self.Lnz, self.parent)

    @staticmethod
    def _ordering(nK: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Cheapest of a few fill-reducing orderings, judged by nnz(L)."""
        G = sp.csc_matrix((np.ones(rows.size), (rows, cols)), shape=(nK, nK))
        G = (G + G.T).tocsc()
        candidates = [np.arange(nK)]
        if nK > 1:
            candidates.append(csgraph.reverse_cuthill_mckee(G, symmetric_mode=True)[::-1])
            for spec in ("MMD_AT_PLUS_A", "COLAMD"):
                try:
                    lu = spla.splu(G, permc_spec=spec, options={"SymmetricMode": True})
                    candidates += [lu.perm_c, np.argsort(lu.perm_c)]
                except RuntimeError:
                    pass
        best, best_nnz = candidates[0], None
        Lnz = np.empty(nK, dtype=np.int64)
        parent = np.empty(nK, dtype=np.int64)
        for perm in candidates:
            perm = np.ascontiguousarray(perm, dtype=np.int64)
            Gp = sp.triu(G[perm][:, perm]).tocsc()
            Gp.sort_indices()
            nnz = kern.etree(nK, Gp.indptr.astype(np.int64), Gp.indices.astype(np.int64),
                             Lnz, parent)
            if best_nnz is None or 0 <= nnz < best_nnz:
                best, best_nnz = perm, nnz
        return best


_STRUCTURE_CACHE: "OrderedDict[bytes, _Structure]" = OrderedDict()
_STRUCTURE_CACHE_SIZE = 32


def _structure(n: int, m: int, P: sp.csc_matrix, A: sp.csc_matrix) -> _Structure:
    key = b"|".join([np.array([n, m], dtype=np.int64).tobytes(),
                     P.indptr.tobytes(), P.indices.tobytes(),
                     A.indptr.tobytes(), A.indices.tobytes()])
    st = _STRUCTURE_CACHE.get(key)
    if st is None:
        st = _Structure(n, m, P, A)
        _STRUCTURE_CACHE[key] = st
        if len(_STRUCTURE_CACHE) > _STRUCTURE_CACHE_SIZE:
            _STRUCTURE_CACHE.popitem(last=False)
    else:
        _STRUCTURE_CACHE.move_to_end(key)
    return st


def _entry_columns(M: sp.csc_matrix) -> np.ndarray:
    return np.repeat(np.arange(M.shape[1], dtype=np.int64), np.diff(M.indptr))


def _canonical(M: sp.csc_matrix) -> sp.csc_matrix:
    if not M.has_sorted_indices:
        M = M.copy()
        M.sort_indices()
    return M


_STATUS = {kern.SOLVED: QpStatus.SOLVED, kern.MAX_ITER: QpStatus.MAX_ITER,
           kern.PRIMAL_INFEASIBLE: QpStatus.PRIMAL_INFEASIBLE}


def solve(prob: QpProblem, settings: Optional[QpSettings] = None,
          warm_start: Optional[tuple[np.ndarray, np.ndarray]] = None) -> QpSolution:
    """Solve ``prob`` by ADMM; ``warm_start`` is an optional ``(z, y)`` pair."""
    st = settings or QpSettings()
    n, m = prob.n, prob.m
    P, A = _canonical(prob.P), _canonical(prob.A)
    Pp, Pi = P.indptr.astype(np.int64), P.indices.astype(np.int64)
    Ap, Ai = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    Px, Ax = np.ascontiguousarray(P.data, dtype=float), np.ascontiguousarray(A.data, dtype=float)
    q, l, u = (np.ascontiguousarray(v, dtype=float) for v in (prob.q, prob.l, prob.u))

    Pxs, Axs, qs = Px.copy(), Ax.copy(), q.copy()
    D, E = np.empty(n), np.empty(m)
    c = kern.ruiz(n, m, Pp, Pi, Pxs, Ap, Ai, Axs, qs, st.scaling_iter, D, E,
                  SCALE_MIN, SCALE_MAX)
    ls = np.where(l <= -INF, -INF, E * l)
    us = np.where(u >= INF, INF, E * u)
    is_eq = (us - ls) <= 1e-12 * np.maximum(1.0, np.abs(us))
    is_free = (ls <= -INF) & (us >= INF)

    if warm_start is not None:
        z0, y0 = (np.asarray(v, dtype=float) for v in warm_start)
        if z0.shape != (n,) or y0.shape != (m,):
            raise QpError("warm start has wrong dimensions")
        x = z0 / D
        y = c * y0 / E
        As = sp.csc_matrix((Axs, Ai, Ap), shape=(m, n))
        s = np.clip(As @ x, ls, us)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        s = np.clip(np.zeros(m), ls, us)
    y_prev = y.copy()

    S = _structure(n, m, P, A)
    Kx = np.empty(S.Ki.size)
    Lp = np.empty(S.nK + 1, dtype=np.int64)
    Li = np.empty(max(S.nnz_L, 0), dtype=np.int64)
    Lx = np.empty(max(S.nnz_L, 0))
    Dl, Dinv = np.empty(S.nK), np.empty(S.nK)

    code, it, r_prim, r_dual, e_prim = kern.admm(
        n, m, Pp, Pi, Px, Ap, Ai, Ax, q, l, u,
        Pxs, Axs, qs, ls, us, D, E, c,
        S.nK, S.Kp, S.Ki, Kx, S.perm, S.pos_P, S.pos_sigma, S.pos_A, S.pos_rho,
        Lp, Li, Lx, Dl, Dinv, S.Lnz, S.parent,
        x, y, s, y_prev,
        st.rho, st.sigma, st.alpha, st.eps_abs, st.eps_rel, st.eps_feas, st.eps_prim_inf,
        st.max_iter,
        st.check_every, st.adaptive_rho, st.adaptive_rho_interval, is_eq, is_free,
        INF, RHO_EQ_FACTOR, RHO_MIN, ADAPT_TRIGGER)
    if code == kern.FACTOR_FAILED:
        raise np.linalg.LinAlgError("KKT factorization failed (zero pivot)")
    status = _STATUS[code]

    z_u = D * x
    y_u = E * (y - y_prev) / c if status is QpStatus.PRIMAL_INFEASIBLE else E * y / c
    return QpSolution(z_u, y_u, status, int(it), float(r_prim), float(r_dual),
                      prob.objective(z_u), float(e_prim))
