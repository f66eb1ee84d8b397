"""Assembly of the per-iteration convex optimal control problem.

Decision vector layout::

    z = [x_0 .. x_N | u_0 .. u_{N-1} | omega_1 .. omega_R]

with one slack per barrier row. ``x_0`` is pinned to the measured state by an
equality row. Constraint rows, in order: initial-state pin, linearized
dynamics, state box on ``x_1..x_N``, input box, barrier rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cbf import HocbfArrays, HocbfRow
from .dynamics import DimensionError, LinearizedDynamics, Trajectory
from .qp import QpProblem, QpSolution, QpStatus


class StepInfeasibleError(RuntimeError):
    """The convex subproblem of a time step has no usable solution."""


def _psd_matrix(M, dim: int, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (dim, dim):
        raise DimensionError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if dim and np.linalg.eigvalsh(M).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    P_term: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    omega_ref: np.ndarray

    def __post_init__(self):
        x_ref = np.asarray(self.x_ref, dtype=float)
        u_ref = np.asarray(self.u_ref, dtype=float)
        omega_ref = np.asarray(self.omega_ref, dtype=float)
        n, q, r = x_ref.size, u_ref.size, omega_ref.size
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "u_ref", u_ref)
        object.__setattr__(self, "omega_ref", omega_ref)
        object.__setattr__(self, "Q", _psd_matrix(self.Q, n, "Q"))
        object.__setattr__(self, "P_term", _psd_matrix(self.P_term, n, "P_term"))
        object.__setattr__(self, "R", _psd_matrix(self.R, q, "R"))
        object.__setattr__(self, "S", _psd_matrix(self.S, r, "S"))


@dataclass(frozen=True)
class Bounds:
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        for name in ("x_min", "x_max", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.x_min.shape != self.x_max.shape or self.u_min.shape != self.u_max.shape:
            raise DimensionError("bound vectors must have matching shapes")
        if np.any(self.x_min > self.x_max) or np.any(self.u_min > self.u_max):
            raise ValueError("bounds require min <= max componentwise")


@dataclass(frozen=True)
class CftocLayout:
    N: int
    state_dim: int
    input_dim: int
    n_slack: int

    @property
    def x_start(self) -> int:
        return 0

    @property
    def u_start(self) -> int:
        return (self.N + 1) * self.state_dim

    @property
    def w_start(self) -> int:
        return self.u_start + self.N * self.input_dim

    @property
    def size(self) -> int:
        return self.w_start + self.n_slack

    def x_index(self, k: int) -> slice:
        return slice(k * self.state_dim, (k + 1) * self.state_dim)

    def u_index(self, k: int) -> slice:
        start = self.u_start + k * self.input_dim
        return slice(start, start + self.input_dim)

    def w_index(self, r: int) -> int:
        return self.w_start + r

    def stack(self, X, U, W) -> np.ndarray:
        return np.concatenate([np.ravel(X), np.ravel(U), np.ravel(W)])


@dataclass
class CftocSolution:
    X: np.ndarray
    U: np.ndarray
    omega: np.ndarray
    objective: float
    qp_status: QpStatus

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.X, self.U)


def cost_constant(w: CostWeights, N: int, rows: Sequence[HocbfRow]) -> float:
    """Part of the cost independent of ``z`` (the reference terms)."""
    xr, ur = w.x_ref, w.u_ref
    const = N * (xr @ w.Q @ xr + ur @ w.R @ ur) + xr @ w.P_term @ xr
    for r in rows:
        wr = w.omega_ref[r.order - 1]
        const += w.S[r.order - 1, r.order - 1] * wr * wr
    for (i, j), pairs in _slack_pairs(rows).items():
        const += len(pairs) * 2.0 * w.S[i, j] * w.omega_ref[i] * w.omega_ref[j]
    return float(const)


def _pairs_from_arrays(obstacle, step, order) -> dict:
    """Index pairs of slacks sharing an (obstacle, step) with different orders."""
    groups: dict[tuple[int, int], dict[int, int]] = {}
    for idx, key in enumerate(zip(obstacle.tolist(), step.tolist())):
        groups.setdefault(key, {})[int(order[idx]) - 1] = idx
    pairs: dict[tuple[int, int], list] = {}
    for g in groups.values():
        orders = sorted(g)
        for a in range(len(orders)):
            for b in range(a + 1, len(orders)):
                i, j = orders[a], orders[b]
                pairs.setdefault((i, j), []).append((g[i], g[j]))
    return pairs


def _slack_pairs(rows: Sequence[HocbfRow]) -> dict:
    """Index pairs of slacks sharing an (obstacle, step) with different orders."""
    arrays = HocbfArrays.from_rows(rows)
    return _pairs_from_arrays(arrays.obstacle, arrays.step, arrays.order)


def evaluate_cost(w: CostWeights, X, U, W, rows: Sequence[HocbfRow]) -> float:
    """Cost of a stacked candidate evaluated term by term."""
    X, U, W = np.asarray(X), np.asarray(U), np.asarray(W)
    N = U.shape[0]
    total = 0.0
    for k in range(N):
        dx = X[k] - w.x_ref
        du = U[k] - w.u_ref
        total += dx @ w.Q @ dx + du @ w.R @ du
    dN = X[N] - w.x_ref
    total += dN @ w.P_term @ dN
    groups: dict[tuple[int, int], dict[int, float]] = {}
    for idx, r in enumerate(rows):
        groups.setdefault((r.obstacle, r.step), {})[r.order - 1] = W[idx] - w.omega_ref[r.order - 1]
    for g in groups.values():
        orders = sorted(g)
        d = np.array([g[i] for i in orders])
        total += d @ w.S[np.ix_(orders, orders)] @ d
    return float(total)


class CftocBuilder:
    """Assembles the convex subproblem for a fixed layout and sparsity pattern.

    The cost, the bounds of the box rows and the constraint sparsity pattern
    depend only on the horizon, weights and barrier row structure, so they
    are built once; :meth:`build` refills the numeric values of the
    dynamics and barrier rows for each linearization. Every structural
    entry is stored, even when its value is zero, so all problems from one
    builder share a sparsity pattern.
    """

    def __init__(self, w: CostWeights, b: Bounds, N: int, n: int, q: int,
                 pattern: HocbfArrays, position_indices=(0, 1)):
        if w.x_ref.size != n or w.u_ref.size != q:
            raise DimensionError("reference dimensions do not match the model")
        if b.x_min.size != n or b.u_min.size != q:
            raise DimensionError("bound dimensions do not match the model")
        R = pattern.n_rows
        layout = CftocLayout(N, n, q, R)
        self.layout = layout
        self.N, self.n, self.q = N, n, q
        self._pattern = (pattern.obstacle, pattern.order, pattern.step,
                         pattern.entry_row, pattern.entry_state)
        self.P, self.q_vec = self._cost(w, layout, pattern)

        # constraint rows: pin, dynamics, state box, input box, barrier rows
        n_dyn = N * n
        self._box0 = box0 = n + n_dyn
        inp0 = box0 + N * n
        self._cbf0 = cbf0 = inp0 + N * q
        m = cbf0 + R
        self._lo = np.empty(m)
        self._hi = np.empty(m)
        self._lo[box0:inp0] = np.tile(b.x_min, N)
        self._hi[box0:inp0] = np.tile(b.x_max, N)
        self._lo[inp0:cbf0] = np.tile(b.u_min, N)
        self._hi[inp0:cbf0] = np.tile(b.u_max, N)
        self._hi[cbf0:] = np.inf

        rk = n + n * np.arange(N)[:, None] + np.arange(n)[None, :]  # (N, n) row ids
        xk = n * np.arange(N)[:, None] + np.arange(n)[None, :]       # (N, n) column ids of x_k
        uk = layout.u_start + q * np.arange(N)[:, None] + np.arange(q)[None, :]
        px, py = position_indices
        e_row, e_state = pattern.entry_row, pattern.entry_state
        # unit entries first, then -A_k, -B_k, barrier positions, slacks
        rows = [np.arange(n), rk.ravel(), box0 + np.arange(N * n), inp0 + np.arange(N * q)]
        cols = [np.arange(n), (xk + n).ravel(), n + np.arange(N * n),
                layout.u_start + np.arange(N * q)]
        self._n_ones = sum(r.size for r in rows)
        rows += [np.repeat(rk, n, axis=1).ravel(), np.repeat(rk, q, axis=1).ravel(),
                 np.repeat(cbf0 + e_row, 2), cbf0 + np.arange(R)]
        cols += [np.repeat(xk[:, None, :], n, axis=1).ravel(),
                 np.repeat(uk[:, None, :], n, axis=1).ravel(),
                 np.stack([e_state * n + px, e_state * n + py], axis=1).ravel(),
                 layout.w_start + np.arange(R)]
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        ids = sp.csc_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)),
                            shape=(m, layout.size))
        if ids.nnz != rows.size:
            raise ValueError("barrier rows repeat a state index")
        self._source = ids.data.astype(np.int64) - 1
        self._indices, self._indptr = ids.indices, ids.indptr
        self._shape = ids.shape
        self._values = np.empty(rows.size)
        self._values[:self._n_ones] = 1.0

    @staticmethod
    def _cost(w: CostWeights, layout: CftocLayout, pattern: HocbfArrays):
        N, n, q, R = layout.N, layout.state_dim, layout.input_dim, layout.n_slack
        nz = layout.size
        blocks = [(0, np.broadcast_to(w.Q, (N, n, n)), w.x_ref),
                  (N * n, w.P_term[None], w.x_ref),
                  (layout.u_start, np.broadcast_to(w.R, (N, q, q)), w.u_ref)]
        P_rows, P_cols, P_vals = [], [], []
        qv = np.zeros(nz)
        for start, M, ref in blocks:
            K, d, _ = M.shape
            base = start + d * np.arange(K)[:, None, None]
            P_rows.append((base + np.arange(d)[None, :, None] + 0 * np.arange(d)).ravel())
            P_cols.append((base + np.arange(d)[None, None, :] + 0 * np.arange(d)[:, None]).ravel())
            P_vals.append(2.0 * M.ravel())
            qv[start:start + K * d] = np.tile(-2.0 * M[0] @ ref, K)
        if R:
            order = pattern.order - 1
            widx = layout.w_start + np.arange(R)
            P_rows.append(widx)
            P_cols.append(widx)
            P_vals.append(2.0 * w.S[order, order])
            qv[widx] = -2.0 * w.S[order, order] * w.omega_ref[order]
            pairs = _pairs_from_arrays(pattern.obstacle, pattern.step, pattern.order)
            for (i, j), idx in pairs.items():
                if w.S[i, j] == 0.0:
                    continue
                a, bb = (layout.w_start + np.array(v) for v in zip(*idx))
                P_rows += [a, bb]
                P_cols += [bb, a]
                P_vals += [np.full(a.size, 2.0 * w.S[i, j])] * 2
                qv[a] += -2.0 * w.S[i, j] * w.omega_ref[j]
                qv[bb] += -2.0 * w.S[i, j] * w.omega_ref[i]
        P = sp.csc_matrix((np.concatenate(P_vals), (np.concatenate(P_rows), np.concatenate(P_cols))),
                          shape=(nz, nz))
        return P, qv

    def matches(self, cbf: HocbfArrays) -> bool:
        """Whether ``cbf`` has the row structure this builder was made for."""
        return all(np.array_equal(a, b) for a, b in zip(
            self._pattern, (cbf.obstacle, cbf.order, cbf.step, cbf.entry_row, cbf.entry_state)))

    def build(self, x_now: np.ndarray, A: np.ndarray, B: np.ndarray, offset: np.ndarray,
              cbf: HocbfArrays) -> QpProblem:
        """QP for linearizations ``x_{k+1} = A_k x_k + B_k u_k + offset_k`` and barrier values."""
        n, N = self.n, self.N
        vals = self._values
        i = self._n_ones
        for block in (-A.ravel(), -B.ravel(), cbf.entry_coef.ravel(), cbf.slack_coeff):
            vals[i:i + block.size] = block
            i += block.size
        Amat = sp.csc_matrix((vals[self._source], self._indices, self._indptr), shape=self._shape)
        lo, hi = self._lo.copy(), self._hi.copy()
        lo[:n] = hi[:n] = x_now
        lo[n:self._box0] = hi[n:self._box0] = offset.ravel()
        lo[self._cbf0:] = -cbf.const
        return QpProblem.trusted(self.P, self.q_vec, Amat, lo, hi)


def assemble(x_now, nominal: Trajectory, lin: Sequence[LinearizedDynamics],
             rows: Sequence[HocbfRow], w: CostWeights, b: Bounds, N: int,
             position_indices=(0, 1)) -> tuple[QpProblem, CftocLayout]:
    """Convex subproblem for one linearization, from per-step and per-row objects."""
    x_now = np.asarray(x_now, dtype=float)
    n, q = nominal.states.shape[1], nominal.inputs.shape[1]
    if nominal.horizon != N or len(lin) != N:
        raise DimensionError(f"nominal trajectory and linearizations must have horizon {N}")
    if x_now.shape != (n,):
        raise DimensionError(f"x_now must have shape ({n},)")
    if not np.array_equal(x_now, nominal.states[0]):
        raise ValueError("x_now must equal the nominal initial state")
    cbf = HocbfArrays.from_rows(rows)
    builder = CftocBuilder(w, b, N, n, q, cbf, position_indices)
    A = np.array([ld.A for ld in lin]).reshape(N, n, n)
    B = np.array([ld.B for ld in lin]).reshape(N, n, q)
    offset = np.array([ld.offset for ld in lin]).reshape(N, n)
    return builder.build(x_now, A, B, offset, cbf), builder.layout


def unpack(sol: QpSolution, layout: CftocLayout) -> CftocSolution:
    if sol.status is not QpStatus.SOLVED:
        raise StepInfeasibleError(f"QP not solved: {sol.status.value}")
    return split(sol.z, layout, sol.objective, sol.status)


def split(z: np.ndarray, layout: CftocLayout, objective: float = float("nan"),
          status: QpStatus = QpStatus.SOLVED) -> CftocSolution:
    X = z[: layout.u_start].reshape(layout.N + 1, layout.state_dim).copy()
    U = z[layout.u_start: layout.w_start].reshape(layout.N, layout.input_dim).copy()
    W = z[layout.w_start: layout.size].copy()
    return CftocSolution(X, U, W, objective, status)
