"""JSON scenario files: schema, validation and conversion to a :class:`Scenario`."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .cbf import CbfSpec, CircleObstacle
from .cftoc import Bounds, CostWeights
from .dynamics import unicycle_model
from .impc import ConfigurationError, ConvergenceConfig, Scenario
from .qp import QpSettings

STATE_DIM = 4
INPUT_DIM = 2


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    type: Literal["unicycle"]
    dt: float = Field(gt=0)


class ObstacleSection(_Strict):
    center: list[float]
    radius: float


class MpcSection(_Strict):
    N: int
    m_cbf: int
    gammas: list[float]
    Q_diag: list[float]
    R_diag: list[float]
    S_diag: list[float]
    P_diag: list[float]


class BoundsSection(_Strict):
    x_min: list[float]
    x_max: list[float]
    u_min: list[float]
    u_max: list[float]


class ConvergenceSection(_Strict):
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    j_max: int = 1000


class QpSection(_Strict):
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_feas: float = 1e-5
    max_iter: int = 20000


class ScenarioFile(_Strict):
    model: ModelSection
    initial_state: list[float]
    target_state: list[float]
    input_ref: list[float]
    omega_ref: list[float]
    obstacles: list[ObstacleSection] = []
    mpc: MpcSection
    bounds: BoundsSection
    convergence: ConvergenceSection = ConvergenceSection()
    qp: QpSection = QpSection()
    t_sim: int = 100


def _fail(key: str, msg: str):
    raise ConfigurationError(f"{key}: {msg}")


def _check_len(key: str, arr, n: int):
    if len(arr) != n:
        _fail(key, f"expected {n} values, got {len(arr)}")


def _check_semantics(sf: ScenarioFile) -> None:
    m = sf.mpc
    for key, arr, n in [
        ("initial_state", sf.initial_state, STATE_DIM),
        ("target_state", sf.target_state, STATE_DIM),
        ("input_ref", sf.input_ref, INPUT_DIM),
        ("mpc.Q_diag", m.Q_diag, STATE_DIM),
        ("mpc.P_diag", m.P_diag, STATE_DIM),
        ("mpc.R_diag", m.R_diag, INPUT_DIM),
        ("bounds.x_min", sf.bounds.x_min, STATE_DIM),
        ("bounds.x_max", sf.bounds.x_max, STATE_DIM),
        ("bounds.u_min", sf.bounds.u_min, INPUT_DIM),
        ("bounds.u_max", sf.bounds.u_max, INPUT_DIM),
    ]:
        _check_len(key, arr, n)
    if m.N < 1:
        _fail("mpc.N", "horizon must be at least 1")
    if m.m_cbf < 1:
        _fail("mpc.m_cbf", "order must be at least 1")
    _check_len("mpc.gammas", m.gammas, m.m_cbf)
    for g in m.gammas:
        if not 0.0 < g <= 1.0:
            _fail("mpc.gammas", f"gamma {g} outside the range (0,1]")
    _check_len("mpc.S_diag", m.S_diag, m.m_cbf)
    _check_len("omega_ref", sf.omega_ref, m.m_cbf)
    for key, arr in [("mpc.Q_diag", m.Q_diag), ("mpc.P_diag", m.P_diag),
                     ("mpc.R_diag", m.R_diag), ("mpc.S_diag", m.S_diag)]:
        if any(v < 0 for v in arr):
            _fail(key, "weights must be non-negative")
    b = sf.bounds
    if any(lo > hi for lo, hi in zip(b.x_min, b.x_max)):
        _fail("bounds", "x_min exceeds x_max in some component")
    if any(lo > hi for lo, hi in zip(b.u_min, b.u_max)):
        _fail("bounds", "u_min exceeds u_max in some component")
    for i, o in enumerate(sf.obstacles):
        _check_len(f"obstacles[{i}].center", o.center, 2)
        if not o.radius > 0:
            _fail(f"obstacles[{i}].radius", "radius must be strictly positive")
    c = sf.convergence
    if not (c.eps_abs > 0 and c.eps_rel > 0):
        _fail("convergence", "tolerances must be positive")
    if c.j_max < 1:
        _fail("convergence.j_max", "must be at least 1")
    if not (sf.qp.eps_abs > 0 and sf.qp.eps_rel > 0 and sf.qp.eps_feas > 0
            and sf.qp.max_iter >= 1):
        _fail("qp", "tolerances and max_iter must be positive")
    if sf.t_sim < 0:
        _fail("t_sim", "must be non-negative")
    x0 = sf.initial_state
    for i, o in enumerate(sf.obstacles):
        if (x0[0] - o.center[0]) ** 2 + (x0[1] - o.center[1]) ** 2 - o.radius ** 2 <= 0:
            _fail("initial_state", f"unsafe initial state: h(x0) <= 0 for obstacles[{i}]")


def parse_scenario(data: Union[dict, str]) -> ScenarioFile:
    """Validate a decoded JSON document (or raw JSON text)."""
    try:
        if isinstance(data, str):
            sf = ScenarioFile.model_validate_json(data)
        else:
            sf = ScenarioFile.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigurationError(f"{key}: {err['msg']}") from None
    _check_semantics(sf)
    return sf


def load_scenario_file(path: Union[str, Path]) -> ScenarioFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_scenario(text)


def case_study_path() -> Path:
    return Path(str(resources.files("impc_dhocbf") / "data" / "case_study.json"))


def to_scenario(sf: ScenarioFile, t_sim: Optional[int] = None,
                N: Optional[int] = None) -> Scenario:
    m = sf.mpc
    cbf = CbfSpec(m.m_cbf, tuple(m.gammas),
                  tuple(CircleObstacle(tuple(o.center), o.radius) for o in sf.obstacles))
    weights = CostWeights(np.diag(m.Q_diag), np.diag(m.R_diag), np.diag(m.S_diag),
                          np.diag(m.P_diag), sf.target_state, sf.input_ref, sf.omega_ref)
    b = sf.bounds
    bounds = Bounds(b.x_min, b.x_max, b.u_min, b.u_max)
    c = sf.convergence
    return Scenario(
        model=unicycle_model(sf.model.dt),
        cbf=cbf,
        weights=weights,
        bounds=bounds,
        convergence=ConvergenceConfig(c.eps_abs, c.eps_rel, c.j_max),
        x0=np.array(sf.initial_state, dtype=float),
        N=m.N if N is None else N,
        t_sim=sf.t_sim if t_sim is None else t_sim,
        qp_settings=QpSettings(eps_abs=sf.qp.eps_abs, eps_rel=sf.qp.eps_rel,
                               eps_feas=sf.qp.eps_feas, max_iter=sf.qp.max_iter),
    )


def load_scenario(path: Union[str, Path, None] = None, **overrides) -> Scenario:
    """Load a scenario file (default: the bundled case-study scenario)."""
    sf = load_scenario_file(case_study_path() if path is None else path)
    return to_scenario(sf, **overrides)


def normalized_json(sf: ScenarioFile) -> str:
    return json.dumps(sf.model_dump(), indent=2, sort_keys=True)
