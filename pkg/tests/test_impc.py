import dataclasses

import numpy as np
import pytest

from impc_dhocbf.cbf import CbfSpec, CircleObstacle
from impc_dhocbf.config import load_scenario
from impc_dhocbf.dynamics import propagate, unicycle_model
from impc_dhocbf.qp import QpSettings
from impc_dhocbf.impc import (ConfigurationError, ConvergenceConfig, closed_loop, convergence_error,
                              impc_step, warm_start_next, zero_warm_start)

M = unicycle_model()


def test_convergence_error_examples():
    X = np.arange(20.0).reshape(5, 4)
    assert convergence_error(X, X) == (0.0, 0.0)
    assert convergence_error(2 * X, X)[1] == pytest.approx(1.0)
    Xp = np.zeros((5, 4))
    Xp[2, 1] = 10.0
    Xs = Xp.copy()
    Xs[0, 0] = 1.0
    assert convergence_error(Xs, Xp) == pytest.approx((1.0, 0.1))


def test_convergence_error_zero_reference():
    e_abs, e_rel = convergence_error(np.ones((2, 4)), np.zeros((2, 4)))
    assert e_abs == pytest.approx(np.sqrt(8)) and e_rel == np.inf
    with pytest.raises(ValueError):
        convergence_error(np.ones((2, 4)), np.ones((3, 4)))


def test_convergence_config_validation():
    with pytest.raises(ValueError):
        ConvergenceConfig(j_max=0)
    with pytest.raises(ValueError):
        ConvergenceConfig(eps_abs=0)


def test_warm_start_next_examples():
    U = np.tile([0.3, -0.2], (5, 1))
    w = warm_start_next(U, M, np.array([1.0, 2, 0.1, 0.5]))
    np.testing.assert_array_equal(w.inputs, U)
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    w = warm_start_next(np.array([a, b]), M, np.zeros(4))
    np.testing.assert_array_equal(w.inputs, [b, b])
    x_next = np.array([0.5, -1, 2, 1])
    w = warm_start_next(np.array([a, b]), M, x_next)
    assert np.array_equal(w.states[0], x_next)
    np.testing.assert_array_equal(w.states, propagate(M, x_next, w.inputs))


def _scenario(obstacles=(), **kw):
    """Case-study scenario with custom obstacles and the QP solver's default tolerances."""
    scn = load_scenario()
    cbf = CbfSpec(scn.cbf.m_cbf, scn.cbf.gammas, tuple(obstacles))
    kw.setdefault("qp_settings", QpSettings())
    return dataclasses.replace(scn, cbf=cbf, **kw)


def test_far_obstacle_at_reference_gives_zero_input():
    scn = _scenario((CircleObstacle((100, 100), 1),))
    x = scn.weights.x_ref.copy()
    res = impc_step(scn, x, zero_warm_start(M, x, scn.N))
    assert res.report.feasible and res.report.j_conv >= 1
    assert np.linalg.norm(res.u_apply) <= 1e-4


def test_at_least_one_solve():
    scn = _scenario()
    x = np.array([-3.0, 0, 0, 0])
    res = impc_step(scn, x, zero_warm_start(M, x, scn.N))
    assert res.report.j_conv >= 1
    assert res.report.converged
    assert res.report.e_abs < 1e-4 or res.report.e_rel < 1e-2


def test_j_max_cap_keeps_last_iterate():
    scn = _scenario(convergence=ConvergenceConfig(eps_abs=1e-12, eps_rel=1e-12, j_max=2))
    x = np.array([-3.0, 0, 0, 0])
    res = impc_step(scn, x, zero_warm_start(M, x, scn.N))
    assert res.report.j_conv == 2 and not res.report.converged and res.report.feasible
    assert res.u_apply is not None


def test_warm_start_must_match_state():
    scn = _scenario()
    with pytest.raises(ValueError):
        impc_step(scn, np.zeros(4), zero_warm_start(M, np.ones(4), scn.N))
    with pytest.raises(ValueError):
        impc_step(scn, np.zeros(4), zero_warm_start(M, np.zeros(4), scn.N + 1))


def test_regulation_fixed_point_without_obstacle():
    scn = _scenario(t_sim=20)
    scn = dataclasses.replace(scn, x0=scn.weights.x_ref.copy())
    res = closed_loop(scn)
    assert res.completed and len(res.reports) == 20
    assert np.abs(res.states - scn.weights.x_ref).max() <= 1e-3


def test_unsafe_initial_state():
    scn = _scenario((CircleObstacle((-3, 0), 0.5),))
    with pytest.raises(ConfigurationError, match="unsafe initial state"):
        closed_loop(scn)


def test_infeasible_step_truncates_run():
    # speed at the box edge heading out of the box: no input keeps x_1 inside
    scn = _scenario(t_sim=5)
    scn = dataclasses.replace(scn, x0=np.array([9.9, 0.0, 0.0, 10.0]))
    res = closed_loop(scn)
    assert not res.completed
    assert len(res.reports) == 1 and not res.reports[0].feasible
    assert res.states.shape == (1, 4) and res.inputs.shape == (0, 2)


def test_short_case_study_run_consistency_and_determinism():
    scn = load_scenario(t_sim=8)
    a, b = closed_loop(scn), closed_loop(scn)
    assert a.completed
    for t in range(8):
        assert np.array_equal(a.states[t + 1], M.step(a.states[t], a.inputs[t]))
        assert a.reports[t].j_conv <= scn.convergence.j_max
        if a.reports[t].converged:
            assert a.reports[t].e_abs < 1e-4 or a.reports[t].e_rel < 1e-2
    assert np.array_equal(a.states, b.states)
    assert [r.j_conv for r in a.reports] == [r.j_conv for r in b.reports]
    assert min(r.h_min for r in a.reports) >= 0
