"""Discrete-time system models, Jacobians and local linearization.

A model maps ``(x_t, u_t) -> x_{t+1}``. Heading angles are never wrapped:
the state box keeps them bounded and wrapping would make successive
linearizations discontinuous.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

StepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]
BatchStepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
BatchJacobianFn = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]

FD_STEP = 1e-6


class DimensionError(ValueError):
    """Raised when a vector does not match the model dimensions."""


def _as_vector(v, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (dim,):
        raise DimensionError(f"{name} must have shape ({dim},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """A discrete-time model ``x+ = f(x, u)``.

    ``jacobian_fn`` is optional; without it the Jacobians are computed with
    central differences of ``step_fn``. ``batch_step_fn`` and
    ``batch_jacobian_fn`` optionally evaluate a whole trajectory at once
    (rows of ``X`` and ``U``); they are used together or not at all.
    """

    state_dim: int
    input_dim: int
    dt: float
    step_fn: StepFn = field(repr=False)
    jacobian_fn: Optional[JacobianFn] = field(default=None, repr=False)
    name: str = "model"
    batch_step_fn: Optional[BatchStepFn] = field(default=None, repr=False)
    batch_jacobian_fn: Optional[BatchJacobianFn] = field(default=None, repr=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state_dim and input_dim must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def step(self, x, u) -> np.ndarray:
        x = _as_vector(x, self.state_dim, "x")
        u = _as_vector(u, self.input_dim, "u")
        return np.asarray(self.step_fn(x, u), dtype=float)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        x = _as_vector(x, self.state_dim, "x")
        u = _as_vector(u, self.input_dim, "u")
        if self.jacobian_fn is not None:
            A, B = self.jacobian_fn(x, u)
            return np.asarray(A, dtype=float), np.asarray(B, dtype=float)
        return finite_difference_jacobians(self.step_fn, x, u, FD_STEP)


def finite_difference_jacobians(step_fn: StepFn, x: np.ndarray, u: np.ndarray,
                                eps: float = FD_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians of ``step_fn`` at ``(x, u)``."""
    n, q = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, q))
    for i in range(n):
        d = np.zeros(n)
        d[i] = eps
        A[:, i] = (step_fn(x + d, u) - step_fn(x - d, u)) / (2 * eps)
    for i in range(q):
        d = np.zeros(q)
        d[i] = eps
        B[:, i] = (step_fn(x, u + d) - step_fn(x, u - d)) / (2 * eps)
    return A, B


def unicycle_model(dt: float = 0.1) -> ModelSpec:
    """Unicycle with state ``[x, y, theta, v]`` and input ``[omega, accel]``."""

    def step_fn(x, u):
        px, py, th, v = x
        return np.array([
            px + v * np.cos(th) * dt,
            py + v * np.sin(th) * dt,
            th + u[0] * dt,
            v + u[1] * dt,
        ])

    def jacobian_fn(x, u):
        th, v = x[2], x[3]
        c, s = np.cos(th), np.sin(th)
        A = np.array([
            [1.0, 0.0, -v * s * dt, c * dt],
            [0.0, 1.0, v * c * dt, s * dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])
        B = np.array([
            [0.0, 0.0],
            [0.0, 0.0],
            [dt, 0.0],
            [0.0, dt],
        ])
        return A, B

    def batch_step_fn(X, U):
        th, v = X[:, 2], X[:, 3]
        out = X.copy()
        out[:, 0] += v * np.cos(th) * dt
        out[:, 1] += v * np.sin(th) * dt
        out[:, 2] += U[:, 0] * dt
        out[:, 3] += U[:, 1] * dt
        return out

    B_const = np.array([[0.0, 0.0], [0.0, 0.0], [dt, 0.0], [0.0, dt]])

    def batch_jacobian_fn(X, U):
        th, v = X[:, 2], X[:, 3]
        c, s = np.cos(th), np.sin(th)
        A = np.tile(np.eye(4), (X.shape[0], 1, 1))
        A[:, 0, 2] = -v * s * dt
        A[:, 0, 3] = c * dt
        A[:, 1, 2] = v * c * dt
        A[:, 1, 3] = s * dt
        return A, np.tile(B_const, (X.shape[0], 1, 1))

    return ModelSpec(4, 2, dt, step_fn, jacobian_fn, name="unicycle",
                     batch_step_fn=batch_step_fn, batch_jacobian_fn=batch_jacobian_fn)


def step(model: ModelSpec, x, u) -> np.ndarray:
    return model.step(x, u)


def jacobians(model: ModelSpec, x, u) -> tuple[np.ndarray, np.ndarray]:
    return model.jacobians(x, u)


def propagate(model: ModelSpec, x0, inputs: Sequence) -> np.ndarray:
    """Roll the model forward; returns an ``(N+1, n)`` array with ``X[0] = x0``."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim != 2 or U.shape[0] < 1 or U.shape[1] != model.input_dim:
        raise DimensionError(f"inputs must have shape (N, {model.input_dim}) with N >= 1")
    X = np.empty((U.shape[0] + 1, model.state_dim))
    X[0] = _as_vector(x0, model.state_dim, "x0")
    for k in range(U.shape[0]):
        X[k + 1] = model.step(X[k], U[k])
    return X


@dataclass(frozen=True)
class LinearizedDynamics:
    """Affine model ``x+ - x_next = A (x - x_bar) + B (u - u_bar)``."""

    A: np.ndarray
    B: np.ndarray
    x_next: np.ndarray
    x_bar: np.ndarray
    u_bar: np.ndarray

    def predict(self, x, u) -> np.ndarray:
        return self.x_next + self.A @ (np.asarray(x) - self.x_bar) + self.B @ (np.asarray(u) - self.u_bar)

    @property
    def offset(self) -> np.ndarray:
        """Constant ``c`` such that ``x+ = A x + B u + c``."""
        return self.x_next - self.A @ self.x_bar - self.B @ self.u_bar


def linearize(model: ModelSpec, x_bar, u_bar) -> LinearizedDynamics:
    x_bar = _as_vector(x_bar, model.state_dim, "x_bar")
    u_bar = _as_vector(u_bar, model.input_dim, "u_bar")
    A, B = model.jacobians(x_bar, u_bar)
    return LinearizedDynamics(A, B, model.step(x_bar, u_bar), x_bar.copy(), u_bar.copy())


@dataclass(frozen=True)
class Trajectory:
    """Open-loop state sequence (N+1 states) and input sequence (N inputs)."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.states, dtype=float)
        U = np.asarray(self.inputs, dtype=float)
        if X.ndim != 2 or U.ndim != 2 or X.shape[0] != U.shape[0] + 1:
            raise DimensionError(
                f"trajectory needs N+1 states and N inputs, got {X.shape} and {U.shape}")
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "inputs", U)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


def linearize_along(model: ModelSpec, states, inputs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linearize at every ``(states[k], inputs[k])``, ``k < N``.

    Returns stacked ``A (N, n, n)``, ``B (N, n, q)`` and offsets ``c (N, n)``
    with ``x_{k+1} = A_k x_k + B_k u_k + c_k``.
    """
    U = np.asarray(inputs, dtype=float)
    N = U.shape[0]
    X = np.asarray(states, dtype=float)[:N]
    if X.shape != (N, model.state_dim) or U.shape != (N, model.input_dim):
        raise DimensionError("states and inputs do not match the model dimensions")
    if model.batch_step_fn is not None and model.batch_jacobian_fn is not None:
        A, B = model.batch_jacobian_fn(X, U)
        X_next = model.batch_step_fn(X, U)
    else:
        lins = [linearize(model, X[k], U[k]) for k in range(N)]
        A = np.array([ld.A for ld in lins])
        B = np.array([ld.B for ld in lins])
        X_next = np.array([ld.x_next for ld in lins])
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    offset = X_next - np.einsum("kij,kj->ki", A, X) - np.einsum("kij,kj->ki", B, U)
    return A, B, offset
