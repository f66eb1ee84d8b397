import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from impc_dhocbf.qp import QpError, QpProblem, QpSettings, QpStatus, solve

from oracles import active_set_qp, random_qp

TIGHT = QpSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=200000)


def test_projection_example():
    sol = solve(QpProblem([[1.0]], [0.0], [[1.0]], [1.0], [np.inf]))
    assert sol.status is QpStatus.SOLVED
    assert sol.z[0] == pytest.approx(1.0, abs=1e-5)


def test_unconstrained_example():
    q = np.array([1.0, -2.0, 0.5])
    sol = solve(QpProblem(np.eye(3), q, None, np.zeros(0), np.zeros(0)))
    assert sol.solved
    np.testing.assert_allclose(sol.z, -q, atol=1e-6)


def test_primal_infeasible_example():
    sol = solve(QpProblem([[1.0]], [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0]))
    assert sol.status is QpStatus.PRIMAL_INFEASIBLE
    assert not sol.primal_feasible


def test_max_iter_returns_last_iterate():
    P, q, A, l, u = random_qp(np.random.default_rng(0))
    sol = solve(QpProblem(P, q, A, l, u), QpSettings(max_iter=3, check_every=1, adaptive_rho_interval=1))
    assert sol.status is QpStatus.MAX_ITER and sol.iterations == 3
    assert np.all(np.isfinite(sol.z))


@pytest.mark.parametrize("bad", [
    dict(P=np.eye(2), q=np.zeros(3)),
    dict(P=[[1.0, 1.0], [0.0, 1.0]]),
    dict(l=[1.0], u=[0.0]),
    dict(l=[np.nan], u=[1.0]),
])
def test_malformed_problems(bad):
    args = dict(P=np.eye(2), q=np.zeros(2), A=[[1.0, 0.0]], l=[0.0], u=[1.0])
    args.update(bad)
    with pytest.raises(QpError):
        QpProblem(**args)


def test_settings_validation():
    for kw in [dict(rho=0), dict(alpha=2.0), dict(alpha=0.0), dict(eps_abs=-1), dict(max_iter=0)]:
        with pytest.raises(ValueError):
            QpSettings(**kw)


def test_matches_active_set_oracle():
    rng = np.random.default_rng(42)
    for _ in range(60):
        P, q, A, l, u = random_qp(rng)
        _, f_ref = active_set_qp(P, q, A, l, u)
        sol = solve(QpProblem(P, q, A, l, u), TIGHT)
        assert sol.solved
        assert sol.objective == pytest.approx(f_ref, abs=1e-6)
        Az = A @ sol.z
        assert np.all(Az >= l - 1e-5) and np.all(Az <= u + 1e-5)


def test_solved_residuals_within_tolerance():
    rng = np.random.default_rng(7)
    for _ in range(30):
        prob = QpProblem(*random_qp(rng))
        s = QpSettings()
        sol = solve(prob, s)
        assert sol.solved
        Az = prob.A @ sol.z
        proj = np.clip(Az, prob.l, prob.u)
        r_prim = np.abs(Az - proj).max()
        r_dual = np.abs(prob.P @ sol.z + prob.q + prob.A.T @ sol.y).max()
        # the solver measures |Az - s| with s in [l, u], an upper bound on the box distance
        assert r_prim <= sol.primal_residual * (1 + 1e-9) + 1e-15
        assert r_prim <= sol.primal_tolerance
        assert r_dual == pytest.approx(sol.dual_residual, rel=1e-6, abs=1e-12)
        assert np.all(Az >= prob.l - 1e-5) and np.all(Az <= prob.u + 1e-5)


def test_warm_start_not_slower():
    rng = np.random.default_rng(9)
    for _ in range(20):
        prob = QpProblem(*random_qp(rng))
        cold = solve(prob)
        warm = solve(prob, warm_start=(cold.z, cold.y))
        assert warm.solved and warm.iterations <= cold.iterations


def test_deterministic():
    prob = QpProblem(*random_qp(np.random.default_rng(3)))
    a, b = solve(prob), solve(prob)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.y, b.y) and a.iterations == b.iterations


def test_equality_constrained_sparse():
    # min |z|^2 s.t. z1 + z2 + z3 = 3  ->  z = 1
    prob = QpProblem(sp.identity(3, format="csc") * 2, np.zeros(3),
                     sp.csc_matrix(np.ones((1, 3))), [3.0], [3.0])
    sol = solve(prob, TIGHT)
    np.testing.assert_allclose(sol.z, 1.0, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_solved_implies_feasible(seed):
    prob = QpProblem(*random_qp(np.random.default_rng(seed)))
    sol = solve(prob)
    if sol.solved:
        Az = prob.A @ sol.z
        assert np.all(Az >= prob.l - 1e-5) and np.all(Az <= prob.u + 1e-5)


def _quasi_definite(rng, n, m):
    M = rng.normal(size=(n, n))
    H = M.T @ M + 0.5 * np.eye(n)
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.5)
    rho = rng.uniform(0.01, 10, size=m)
    K = np.block([[H, A.T], [A, -np.diag(1 / rho)]])
    return H, A, rho, K


@pytest.mark.parametrize("seed", range(5))
def test_ldl_kernel_matches_dense_solve(seed):
    from impc_dhocbf import _kernels as kern
    from impc_dhocbf.qp import _structure

    rng = np.random.default_rng(seed)
    n, m = 7, 9
    H, A, rho, K = _quasi_definite(rng, n, m)
    P = sp.csc_matrix(H)
    Am = sp.csc_matrix(A)
    S = _structure(n, m, P, Am)
    Kx = np.empty(S.Ki.size)
    kern.kkt_values(Kx, P.data, S.pos_P, 0.0, S.pos_sigma, Am.data, S.pos_A, rho, S.pos_rho)
    Lp = np.empty(S.nK + 1, dtype=np.int64)
    Li = np.empty(S.nnz_L, dtype=np.int64)
    Lx, D, Dinv = np.empty(S.nnz_L), np.empty(S.nK), np.empty(S.nK)
    positive = kern.ldl_factor(S.nK, S.Kp, S.Ki, Kx, Lp, Li, Lx, D, Dinv, S.Lnz, S.parent)
    assert positive == n  # quasi-definite: n positive and m negative pivots
    b = rng.normal(size=n + m)
    x = b[S.perm].copy()
    kern.ldl_solve(S.nK, Lp, Li, Lx, Dinv, x)
    sol = np.empty(n + m)
    sol[S.perm] = x
    np.testing.assert_allclose(sol, np.linalg.solve(K, b), rtol=1e-9, atol=1e-10)


def test_structure_is_cached_per_pattern():
    from impc_dhocbf.qp import _structure

    rng = np.random.default_rng(4)
    prob = QpProblem(*random_qp(rng))
    P2 = prob.P.copy()
    P2.data *= 3.0
    assert _structure(prob.n, prob.m, prob.P, prob.A) is _structure(prob.n, prob.m, P2, prob.A)


def test_trusted_constructor_matches_validated():
    rng = np.random.default_rng(8)
    P, q, A, l, u = random_qp(rng)
    checked = QpProblem(P, q, A, l, u)
    fast = QpProblem.trusted(checked.P, checked.q, checked.A, checked.l, checked.u)
    a, b = solve(checked), solve(fast)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.iterations == b.iterations


def test_unsorted_indices_are_accepted():
    # [[2, 0.5], [0.5, 2]] with each column's row indices stored in reverse order
    P = sp.csc_matrix((np.array([0.5, 2.0, 2.0, 0.5]), np.array([1, 0, 1, 0]),
                       np.array([0, 2, 4])), shape=(2, 2))
    assert not P.has_sorted_indices
    q = np.array([-2.0, -4.0])
    sol = solve(QpProblem(P, q, sp.csc_matrix(np.eye(2)), [-10, -10], [10, 10]))
    expected = np.linalg.solve([[2.0, 0.5], [0.5, 2.0]], -q)
    np.testing.assert_allclose(sol.z, expected, atol=1e-5)
