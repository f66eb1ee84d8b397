"""Randomized one-step feasibility and timing benchmark.

Every trial samples a safe state uniformly from the state box, builds the
zero-input warm start and runs a single :func:`impc_step`. The same sampled
states are reused for every (N, m_cbf, gammas) setting, and each trial has its
own generator spawned from the master seed, so results do not depend on the
order (or parallelism) in which trials run.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cbf import CbfSpec, CircleObstacle
from .cftoc import Bounds
from .impc import ConfigurationError, Scenario, impc_step, zero_warm_start

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10 ** 6


@dataclass(frozen=True)
class BenchConfig:
    trials: int = 1000
    seed: int = 0
    horizons: tuple[int, ...] = (4, 8, 12, 16, 20, 24)
    m_cbf_values: tuple[int, ...] = (2,)
    gammas: Optional[tuple[float, ...]] = None  # None: use the scenario's gammas

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not self.horizons or any(n < 1 for n in self.horizons):
            raise ConfigurationError("horizons must be positive integers")
        if not self.m_cbf_values or any(m < 1 for m in self.m_cbf_values):
            raise ConfigurationError("m_cbf values must be positive integers")


@dataclass(frozen=True)
class BenchRow:
    N: int
    m_cbf: int
    gammas: tuple[float, ...]
    trials: int
    feasible: int
    mean_s: float
    std_s: float

    @property
    def infeasible(self) -> int:
        return self.trials - self.feasible

    @property
    def infeas_rate(self) -> float:
        return self.infeasible / self.trials


@dataclass
class BenchResult:
    rows: list[BenchRow]

    def row(self, N: int, m_cbf: int) -> BenchRow:
        for r in self.rows:
            if r.N == N and r.m_cbf == m_cbf:
                return r
        raise KeyError((N, m_cbf))


def sample_safe_state(rng: np.random.Generator, bounds: Bounds,
                      obstacles: Sequence[CircleObstacle] = (),
                      position_indices=(0, 1)) -> np.ndarray:
    """Uniform sample from the state box with ``h > 0`` for every obstacle."""
    px, py = position_indices
    for _ in range(MAX_REJECTIONS):
        x = rng.uniform(bounds.x_min, bounds.x_max)
        if all(o.h((x[px], x[py])) > 0 for o in obstacles):
            return x
    raise ConfigurationError(
        f"no safe state found after {MAX_REJECTIONS} samples; obstacles cover the state box")


def sample_states(cfg: BenchConfig, scn: Scenario) -> np.ndarray:
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    return np.array([
        sample_safe_state(np.random.default_rng(c), scn.bounds, scn.cbf.obstacles,
                          scn.cbf.position_indices)
        for c in children
    ])


def _settings(cfg: BenchConfig, scn: Scenario):
    base = cfg.gammas if cfg.gammas is not None else scn.cbf.gammas
    for m in cfg.m_cbf_values:
        gammas = tuple(base[:m]) if len(base) >= m else tuple(base) + (base[-1],) * (m - len(base))
        for N in cfg.horizons:
            yield N, m, gammas


def run_bench(cfg: BenchConfig, scn: Scenario) -> BenchResult:
    states = sample_states(cfg, scn)
    rows = []
    for N, m, gammas in _settings(cfg, scn):
        cbf = CbfSpec(m, gammas, scn.cbf.obstacles, scn.cbf.position_indices)
        s = dataclasses.replace(scn, cbf=cbf, N=N,
                                weights=_weights_for(scn, m))
        times = []
        for i, x in enumerate(states):
            warm = zero_warm_start(s.model, x, N)
            res = impc_step(s, x, warm, t=i)
            if res.report.feasible:
                times.append(res.report.wall_time)
        t = np.array(times)
        rows.append(BenchRow(N, m, gammas, cfg.trials, len(times),
                             float(t.mean()) if t.size else float("nan"),
                             float(t.std()) if t.size else float("nan")))
        log.info("N=%d m_cbf=%d: infeasibility %.3f", N, m, rows[-1].infeas_rate)
    return BenchResult(rows)


def _weights_for(scn: Scenario, m: int):
    """Slack weights and references sized for order ``m``."""
    w = scn.weights
    if w.omega_ref.size == m:
        return w
    k = w.omega_ref.size
    idx = [min(i, k - 1) for i in range(m)]
    S = np.diag(np.diag(w.S)[idx])
    return dataclasses.replace(w, S=S, omega_ref=w.omega_ref[idx])
