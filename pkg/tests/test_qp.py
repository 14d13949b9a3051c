from __future__ import annotations

import numpy as np
import pytest

from mftwbc.qp import QpProblem, QpSolver, QpStatus, kkt_residual, solve

cp = pytest.importorskip("cvxpy")


def random_qp(rng, n=None):
    n = int(rng.integers(2, 31)) if n is None else n
    m = int(rng.integers(0, 41))
    me = int(rng.integers(0, min(n - 1, 5) + 1))
    L = rng.normal(size=(n, n))
    H = L @ L.T + 1e-2 * np.eye(n)
    g = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    lo = A @ x0 - rng.uniform(0, 1, m)
    hi = A @ x0 + rng.uniform(0, 1, m)
    lo[rng.random(m) < 0.5] = -np.inf
    Ae = rng.normal(size=(me, n))
    return QpProblem(H, g, Ae, Ae @ x0, A, lo, hi, x0 - 2, x0 + 2)


def reference_solve(p: QpProblem) -> np.ndarray:
    x = cp.Variable(p.n)
    cons = [x >= p.lb, x <= p.ub]
    if p.A_eq.shape[0]:
        cons.append(p.A_eq @ x == p.b_eq)
    if p.A_in.shape[0]:
        cons.append(p.A_in @ x <= p.upper)
        f = np.isfinite(p.lower)
        if f.any():
            cons.append(p.A_in[f] @ x >= p.lower[f])
    cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(p.H)) + p.g @ x), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return x.value


def test_unconstrained_scalar():
    s = solve(QpProblem(np.array([[2.0]]), np.array([-2.0])))
    assert s.ok and s.x[0] == pytest.approx(1.0, abs=1e-14)


def test_active_upper_bound_multiplier():
    p = QpProblem(np.array([[2.0]]), np.array([-2.0]), A_in=np.array([[1.0]]), upper=np.array([0.0]))
    s = solve(p)
    assert s.x[0] == pytest.approx(0.0, abs=1e-14)
    assert s.z_in[0] == pytest.approx(2.0, abs=1e-12)
    assert kkt_residual(p, s) < 1e-12
    s.x = s.x + 1e-3
    assert kkt_residual(p, s) > 1e-4


def test_random_suite_matches_reference():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(500):
        p = random_qp(rng)
        s = solve(p)
        assert s.ok
        ref = reference_solve(p)
        worst = max(worst, float(np.abs(s.x - ref).max()))
        assert kkt_residual(p, s) < 1e-8
    assert worst < 1e-6


def test_reference_solution_residual():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = random_qp(rng)
        s = solve(p)
        ref = reference_solve(p)
        s.x = ref
        # multipliers from our solver are near-exact at the reference point too
        assert kkt_residual(p, s) < 1e-6


def test_infeasible_problem():
    p = QpProblem(np.eye(2), np.zeros(2), A_in=np.array([[1.0, 0.0], [-1.0, 0.0]]),
                  upper=np.array([-1.0, -1.0]))
    s = solve(p)
    assert s.status is QpStatus.INFEASIBLE and not s.ok


def test_indefinite_hessian_rejected():
    with pytest.raises(ValueError):
        QpProblem(np.diag([1.0, -1.0]), np.zeros(2))


def test_semidefinite_hessian_regularized():
    p = QpProblem(np.diag([1.0, 0.0]), np.array([0.0, 1.0]), lb=np.array([-1.0, -1.0]), ub=np.array([1.0, 1.0]))
    assert np.linalg.eigvalsh(p.H)[0] >= 1e-10 - 1e-16
    s = solve(p)
    assert s.ok and s.x[1] == pytest.approx(-1.0)


def test_warm_start_identical_resolve():
    rng = np.random.default_rng(2)
    solver = QpSolver()
    for _ in range(50):
        p = random_qp(rng)
        first = solver.solve(p)
        again = solver.solve(p)
        assert again.iterations <= 1
        np.testing.assert_allclose(again.x, first.x, atol=1e-9)
        solver.reset()


def test_problem_file_round_trip(tmp_path):
    p = random_qp(np.random.default_rng(3))
    p.save(tmp_path / "p.npz")
    q = QpProblem.load(tmp_path / "p.npz")
    np.testing.assert_array_equal(solve(p).x, solve(q).x)


def test_deterministic():
    p = random_qp(np.random.default_rng(4))
    assert np.array_equal(solve(p).x, solve(p).x)
