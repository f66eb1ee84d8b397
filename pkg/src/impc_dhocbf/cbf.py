"""Discrete-time high-order barrier constraints for circular obstacles.

The clearance ``h(p) = |p - c|^2 - r^2`` is replaced at every nominal state by
the tangent line through the nearest boundary point. The order-``i`` barrier
``psi_{i-1}`` is then a linear combination of those tangent values at
consecutive steps, and the slack-relaxed decay condition becomes one linear
row per (obstacle, order, step).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEGENERATE_TOL = 1e-9


class DegenerateProjectionError(ValueError):
    """The point coincides with an obstacle center, so no nearest point exists."""


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 2:
            raise ValueError("obstacle center must have two coordinates")
        if not self.radius > 0:
            raise ValueError("obstacle radius must be strictly positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def h(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return float((p[0] - self.center[0]) ** 2 + (p[1] - self.center[1]) ** 2 - self.radius ** 2)


@dataclass(frozen=True)
class Barrier:
    """Clearance function of one obstacle evaluated on full state vectors."""

    obstacle: CircleObstacle
    position_indices: tuple[int, int] = (0, 1)

    def h(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.obstacle.h(x[list(self.position_indices)])


def nearest_boundary_point(obs: CircleObstacle, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    c = np.asarray(obs.center)
    d = p - c
    dist = float(np.hypot(d[0], d[1]))
    if dist <= DEGENERATE_TOL:
        raise DegenerateProjectionError(f"point {p.tolist()} is at the obstacle center")
    return c + obs.radius * d / dist


@dataclass(frozen=True)
class TangentHalfplane:
    """Affine function ``h_par(q) = a . q + b`` tangent to the obstacle at ``point``."""

    a: np.ndarray
    b: float
    point: np.ndarray

    def __call__(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return float(self.a[0] * q[0] + self.a[1] * q[1] + self.b)


def tangent_halfplane(obs: CircleObstacle, p) -> TangentHalfplane:
    xt, yt = nearest_boundary_point(obs, p)
    x0, y0 = obs.center
    a = np.array([xt - x0, yt - y0])
    b = -(obs.radius ** 2 - x0 ** 2 - y0 ** 2 + xt * x0 + yt * y0)
    return TangentHalfplane(a, float(b), np.array([xt, yt]))


@dataclass(frozen=True)
class CbfSpec:
    """Barrier order, per-order decay parameters and obstacles."""

    m_cbf: int
    gammas: tuple[float, ...]
    obstacles: tuple[CircleObstacle, ...] = ()
    position_indices: tuple[int, int] = (0, 1)

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        if self.m_cbf < 1:
            raise ValueError("m_cbf must be at least 1")
        if len(gammas) != self.m_cbf:
            raise ValueError(f"expected {self.m_cbf} gammas, got {len(gammas)}")
        _check_gammas(gammas)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def barriers(self) -> list[Barrier]:
        return [Barrier(o, self.position_indices) for o in self.obstacles]


def _check_gammas(gammas: Sequence[float]) -> None:
    for g in gammas:
        if not 0.0 < g <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {g}")


def unrolled_coefficients(gammas: Sequence[float]) -> np.ndarray:
    """Coefficients ``c_s`` with ``psi_i(x_k) = sum_s c_s psi_0(x_{k+s})``.

    ``i = len(gammas)``. Each order applies ``psi(x_{k+1}) + (gamma - 1) psi(x_k)``,
    i.e. multiplication by ``(E + gamma - 1)`` in the shift operator ``E``.
    """
    c = np.array([1.0])
    for g in gammas:
        c = np.convolve(c, [g - 1.0, 1.0])
    return c


def z_coefficients(i: int, gammas: Sequence[float]) -> np.ndarray:
    """Return ``[Z_0, ..., Z_i]`` for order ``i`` using ``gammas[:i-1]``.

    ``Z_0`` is the unrolled coefficient of ``psi_0(x_0)`` and ``Z_nu = -c_nu``
    for ``1 <= nu <= i-1``, so that ``omega = 1`` recovers the unrelaxed
    decay ``psi_{i-1}(x_k) >= (1-gamma_i)^k psi_{i-1}(x_0)``. For ``i >= 3``
    the middle signs are negative elementary-symmetric sums.
    """
    if i < 1:
        raise ValueError("order must be at least 1")
    gammas = [float(g) for g in gammas[: i - 1]]
    if len(gammas) != i - 1:
        raise ValueError(f"order {i} needs {i - 1} gammas")
    _check_gammas(gammas)
    c = unrolled_coefficients(gammas)
    z = np.zeros(i + 1)
    z[0] = c[0]
    z[1:i] = -c[1:i]
    return z


def psi_sequence(psi0: Sequence[float], gammas: Sequence[float]) -> list[np.ndarray]:
    """Direct recursion ``psi_i(x_k) = psi_{i-1}(x_{k+1}) + (gamma_i - 1) psi_{i-1}(x_k)``.

    Returns ``[psi_0, psi_1, ..., psi_m]`` where ``m = len(gammas)``; each
    level is one element shorter than the previous one.
    """
    seqs = [np.asarray(psi0, dtype=float)]
    for g in gammas:
        prev = seqs[-1]
        seqs.append(prev[1:] + (g - 1.0) * prev[:-1])
    return seqs


@dataclass(frozen=True)
class HocbfRow:
    """Relaxed order-``order`` constraint at horizon step ``step``.

    The row reads ``sum_s psi0_coeffs[s] * psi0(x_s) + slack_coeff * omega >= 0``
    where ``psi0(x_s)`` is the tangent halfplane of step ``s`` applied to the
    position of state ``s``.
    """

    obstacle: int
    order: int
    step: int
    psi0_coeffs: dict[int, float]
    slack_coeff: float
    halfplanes: dict[int, TangentHalfplane] = field(repr=False)

    def value_from_psi0(self, psi0_values: Sequence[float], omega: float) -> float:
        return sum(c * psi0_values[s] for s, c in self.psi0_coeffs.items()) + self.slack_coeff * omega

    def linear_terms(self) -> tuple[dict[int, np.ndarray], float]:
        """Position coefficients per state index and the constant term."""
        coeffs = {s: c * self.halfplanes[s].a for s, c in self.psi0_coeffs.items()}
        const = sum(c * self.halfplanes[s].b for s, c in self.psi0_coeffs.items())
        return coeffs, float(const)

    def value(self, states: np.ndarray, omega: float, position_indices=(0, 1)) -> float:
        pos = np.asarray(states)[:, list(position_indices)]
        psi0 = {s: self.halfplanes[s](pos[s]) for s in self.psi0_coeffs}
        return self.value_from_psi0(psi0, omega)


def relaxed_row_coefficients(order: int, step: int, gammas: Sequence[float],
                             psi0_initial: float) -> tuple[dict[int, float], float]:
    """Coefficients of the slack-relaxed row over ``psi0`` values.

    Returns ``(psi0_coeffs, slack_coeff)`` for
    ``psi_{i-1}(x_k) + sum_nu Z_nu (1-g_i)^k psi0(x_nu) - omega Z_0 (1-g_i)^k psi0(x_0) >= 0``.
    """
    coeffs, slack_unit = _row_template(int(order), int(step), tuple(float(g) for g in gammas))
    return dict(coeffs), slack_unit * psi0_initial


@functools.lru_cache(maxsize=4096)
def _row_template(i: int, k: int, gammas: tuple[float, ...]):
    """psi0-independent part of a relaxed row: coefficient pairs and slack factor."""
    decay = (1.0 - gammas[i - 1]) ** k
    c = unrolled_coefficients(gammas[: i - 1])
    z = z_coefficients(i, gammas)
    coeffs: dict[int, float] = {}
    for s, cs in enumerate(c):
        coeffs[k + s] = coeffs.get(k + s, 0.0) + cs
    for nu in range(1, i + 1):
        if z[nu] != 0.0:
            coeffs[nu] = coeffs.get(nu, 0.0) + z[nu] * decay
    return tuple(coeffs.items()), -z[0] * decay


def hocbf_rows(nominal_states: np.ndarray, spec: CbfSpec) -> list[HocbfRow]:
    """Rows for every obstacle, order ``i`` and step ``k in 1..N+1-i``.

    ``nominal_states[0]`` must be the measured state: the halfplane of step 0
    evaluated there gives the constant multiplying the slack.
    """
    X = np.asarray(nominal_states, dtype=float)
    N = X.shape[0] - 1
    pos = X[:, list(spec.position_indices)]
    rows: list[HocbfRow] = []
    for o, obs in enumerate(spec.obstacles):
        planes = {s: tangent_halfplane(obs, pos[s]) for s in range(N + 1)}
        psi0_initial = planes[0](pos[0])
        for i in range(1, spec.m_cbf + 1):
            for k in range(1, N + 2 - i):
                coeffs, slack = relaxed_row_coefficients(i, k, spec.gammas, psi0_initial)
                used = {s: planes[s] for s in coeffs}
                rows.append(HocbfRow(o, i, k, coeffs, slack, used))
    return rows


def tangent_halfplanes(obs: CircleObstacle, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`tangent_halfplane`: normals ``(K, 2)`` and offsets ``(K,)``."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    c = np.asarray(obs.center)
    d = p - c
    dist = np.hypot(d[:, 0], d[:, 1])
    bad = np.flatnonzero(dist <= DEGENERATE_TOL)
    if bad.size:
        raise DegenerateProjectionError(f"point {p[bad[0]].tolist()} is at the obstacle center")
    tangent = c + obs.radius * d / dist[:, None]
    a = tangent - c
    b = -(obs.radius ** 2 - c @ c + tangent @ c)
    return a, b


@dataclass(frozen=True)
class HocbfArrays:
    """All barrier rows of one iteration in array form.

    Row ``r`` reads ``sum_e coef[e] . p(x_{state[e]}) + const[r] + slack_coeff[r] * omega_r >= 0``
    over the entries ``e`` with ``entry_row[e] == r``. ``obstacle``, ``order``,
    ``step``, ``entry_row`` and ``entry_state`` describe the sparsity pattern;
    the remaining fields are the numeric values.
    """

    obstacle: np.ndarray
    order: np.ndarray
    step: np.ndarray
    entry_row: np.ndarray
    entry_state: np.ndarray
    entry_coef: np.ndarray
    const: np.ndarray
    slack_coeff: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.order.size

    @classmethod
    def from_rows(cls, rows: Sequence[HocbfRow]) -> "HocbfArrays":
        entry_row, entry_state, entry_coef, const = [], [], [], []
        for idx, r in enumerate(rows):
            coeffs, c = r.linear_terms()
            for s, a in coeffs.items():
                entry_row.append(idx)
                entry_state.append(s)
                entry_coef.append(a)
            const.append(c)
        ints = lambda v: np.asarray(v, dtype=np.int64)
        return cls(ints([r.obstacle for r in rows]), ints([r.order for r in rows]),
                   ints([r.step for r in rows]), ints(entry_row), ints(entry_state),
                   np.asarray(entry_coef, dtype=float).reshape(-1, 2),
                   np.asarray(const, dtype=float),
                   np.asarray([r.slack_coeff for r in rows], dtype=float))


@functools.lru_cache(maxsize=256)
def _rows_template(N: int, m_cbf: int, gammas: tuple[float, ...]):
    """Pattern and psi0 coefficients of the rows of one obstacle, in row order."""
    order, step, entry_row, entry_state, entry_c, slack_unit = [], [], [], [], [], []
    for i in range(1, m_cbf + 1):
        for k in range(1, N + 2 - i):
            coeffs, unit = _row_template(i, k, gammas)
            for s, c in coeffs:
                entry_row.append(len(order))
                entry_state.append(s)
                entry_c.append(c)
            order.append(i)
            step.append(k)
            slack_unit.append(unit)
    ints = lambda v: np.asarray(v, dtype=np.int64)
    return (ints(order), ints(step), ints(entry_row), ints(entry_state),
            np.asarray(entry_c, dtype=float), np.asarray(slack_unit, dtype=float))


def hocbf_arrays(nominal_states: np.ndarray, spec: CbfSpec) -> HocbfArrays:
    """Array form of :func:`hocbf_rows`, with the same row order."""
    X = np.asarray(nominal_states, dtype=float)
    N = X.shape[0] - 1
    pos = X[:, list(spec.position_indices)]
    order, step, e_row, e_state, e_c, unit = _rows_template(N, spec.m_cbf, spec.gammas)
    n_obs, R1 = len(spec.obstacles), order.size
    normals = np.empty((n_obs, N + 1, 2))
    offsets = np.empty((n_obs, N + 1))
    for o, obs in enumerate(spec.obstacles):
        normals[o], offsets[o] = tangent_halfplanes(obs, pos)
    psi0_initial = normals[:, 0] @ pos[0] + offsets[:, 0]
    obstacle = np.repeat(np.arange(n_obs), R1)
    entry_obs = np.repeat(np.arange(n_obs), e_row.size)
    entry_state = np.tile(e_state, n_obs)
    entry_c = np.tile(e_c, n_obs)
    entry_row = np.tile(e_row, n_obs) + R1 * entry_obs
    const = np.bincount(entry_row, weights=entry_c * offsets[entry_obs, entry_state],
                        minlength=n_obs * R1)
    return HocbfArrays(obstacle, np.tile(order, n_obs), np.tile(step, n_obs), entry_row,
                       entry_state, entry_c[:, None] * normals[entry_obs, entry_state],
                       const, np.tile(unit, n_obs) * psi0_initial[obstacle])
