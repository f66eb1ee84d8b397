"""Iterative convex MPC with linearized high-order barrier constraints.

At every time step the dynamics and the barrier rows are linearized around
the current nominal trajectory, the convex subproblem is solved, and the
optimum becomes the next nominal trajectory. Iteration stops once two
successive optimized state trajectories agree (absolute or relative), or
after ``j_max`` solves.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cbf import CbfSpec, DegenerateProjectionError, hocbf_arrays
from .cftoc import Bounds, CftocBuilder, CostWeights, StepInfeasibleError, split, unpack
from .dynamics import ModelSpec, Trajectory, linearize_along, propagate
from .qp import QpSettings, QpStatus, solve

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Invalid scenario or run configuration."""


@dataclass(frozen=True)
class ConvergenceConfig:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    j_max: int = 1000

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("convergence tolerances must be positive")
        if self.j_max < 1:
            raise ValueError("j_max must be at least 1")


@dataclass
class SolveReport:
    t: int
    j_conv: int
    converged: bool
    feasible: bool
    e_abs: float
    e_rel: float
    wall_time: float
    h_min: float = float("nan")
    min_slack: float = float("nan")
    message: str = ""


@dataclass(frozen=True)
class Scenario:
    """Everything a closed-loop run needs."""

    model: ModelSpec
    cbf: CbfSpec
    weights: CostWeights
    bounds: Bounds
    convergence: ConvergenceConfig
    x0: np.ndarray
    N: int
    t_sim: int = 100
    qp_settings: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.N < 1:
            raise ConfigurationError("horizon N must be at least 1")
        if self.t_sim < 0:
            raise ConfigurationError("t_sim must be non-negative")

    def h_min(self, x) -> float:
        bs = self.cbf.barriers()
        return min((b.h(x) for b in bs), default=float("inf"))


def convergence_error(X_star, X_prev) -> tuple[float, float]:
    X_star = np.asarray(X_star, dtype=float)
    X_prev = np.asarray(X_prev, dtype=float)
    if X_star.shape != X_prev.shape:
        raise ValueError("trajectories must have equal shapes")
    e_abs = float(np.linalg.norm(X_star - X_prev))
    ref = float(np.linalg.norm(X_prev))
    e_rel = e_abs / ref if ref > 0 else float("inf")
    return e_abs, e_rel


def zero_warm_start(model: ModelSpec, x0, N: int) -> Trajectory:
    U = np.zeros((N, model.input_dim))
    return Trajectory(propagate(model, x0, U), U)


def warm_start_next(U_star, model: ModelSpec, x_next) -> Trajectory:
    """Shift inputs left, repeat the last one, and roll out from ``x_next``."""
    U_star = np.asarray(U_star, dtype=float)
    U = np.vstack([U_star[1:], U_star[-1:]])
    return Trajectory(propagate(model, x_next, U), U)


@dataclass
class StepResult:
    u_apply: Optional[np.ndarray]
    trajectory: Optional[Trajectory]
    report: SolveReport
    omega: Optional[np.ndarray] = None


def impc_step(scn: Scenario, x_now, warm: Trajectory, t: int = 0) -> StepResult:
    """Iterate linearize/solve at one time step.

    Always performs at least one solve. On QP failure or a degenerate
    projection the step is infeasible and ``u_apply`` is ``None``.
    """
    x_now = np.asarray(x_now, dtype=float)
    conv = scn.convergence
    N = scn.N
    if warm.horizon != N:
        raise ValueError(f"warm start horizon {warm.horizon} != N={N}")
    if not np.array_equal(warm.states[0], x_now):
        raise ValueError("warm start must begin at the current state")

    start = time.perf_counter()
    nominal = warm
    X_prev = warm.states
    qp_warm = None
    e_abs = e_rel = float("inf")
    converged = False
    sol = None
    builder = None
    j = 0
    try:
        for j in range(1, conv.j_max + 1):
            A, B, offset = linearize_along(scn.model, nominal.states, nominal.inputs)
            cbf = hocbf_arrays(nominal.states, scn.cbf)
            if builder is None:
                builder = CftocBuilder(scn.weights, scn.bounds, N, scn.model.state_dim,
                                       scn.model.input_dim, cbf, scn.cbf.position_indices)
            qp = builder.build(x_now, A, B, offset, cbf)
            layout = builder.layout
            if qp_warm is not None and (qp_warm[0].size != qp.n or qp_warm[1].size != qp.m):
                qp_warm = None
            qsol = solve(qp, scn.qp_settings, warm_start=qp_warm)
            if qsol.status is QpStatus.MAX_ITER and qsol.primal_feasible:
                # slow dual convergence only; the iterate satisfies the constraints
                log.debug("t=%d j=%d: QP hit max_iter with a feasible iterate", t, j)
                sol = split(qsol.z, layout, qsol.objective, qsol.status)
            else:
                sol = unpack(qsol, layout)
            qp_warm = (qsol.z, qsol.y)
            e_abs, e_rel = convergence_error(sol.X, X_prev)
            X_prev = sol.X
            # the optimized states already start at x_now exactly up to solver tolerance
            sol.X[0] = x_now
            nominal = Trajectory(sol.X, sol.U)
            if e_abs < conv.eps_abs or e_rel < conv.eps_rel:
                converged = True
                break
    except (StepInfeasibleError, DegenerateProjectionError) as exc:
        elapsed = time.perf_counter() - start
        rep = SolveReport(t, j, False, False, e_abs, e_rel, elapsed, message=str(exc))
        return StepResult(None, None, rep)

    elapsed = time.perf_counter() - start
    u = sol.U[0].copy()
    min_slack = float(sol.omega.min()) if sol.omega.size else float("nan")
    rep = SolveReport(t, j, converged, True, e_abs, e_rel, elapsed, min_slack=min_slack)
    return StepResult(u, nominal, rep, sol.omega)


@dataclass
class ClosedLoopResult:
    states: np.ndarray
    inputs: np.ndarray
    reports: list[SolveReport]

    @property
    def completed(self) -> bool:
        return all(r.feasible for r in self.reports)


def closed_loop(scn: Scenario, t_sim: Optional[int] = None) -> ClosedLoopResult:
    """Run the receding-horizon loop for ``t_sim`` steps.

    Stops early, keeping the prefix, when a step is infeasible; the last
    report then has ``feasible=False``.
    """
    t_sim = scn.t_sim if t_sim is None else t_sim
    x = scn.x0.copy()
    for o in scn.cbf.obstacles:
        if o.h(x[list(scn.cbf.position_indices)]) <= 0:
            raise ConfigurationError(
                f"unsafe initial state: h(x0) <= 0 for obstacle at {o.center} with radius {o.radius}")
    states = [x]
    inputs = []
    reports: list[SolveReport] = []
    warm = zero_warm_start(scn.model, x, scn.N)
    for t in range(t_sim):
        res = impc_step(scn, x, warm, t)
        if res.u_apply is None:
            reports.append(res.report)
            log.info("t=%d: step infeasible (%s), stopping", t, res.report.message)
            break
        x_next = scn.model.step(x, res.u_apply)
        res.report.h_min = scn.h_min(x_next)
        reports.append(res.report)
        inputs.append(res.u_apply)
        states.append(x_next)
        warm = warm_start_next(res.trajectory.inputs, scn.model, x_next)
        x = x_next
    U = np.array(inputs).reshape(len(inputs), scn.model.input_dim)
    return ClosedLoopResult(np.array(states), U, reports)
