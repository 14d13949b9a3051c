"""Small dense convex QP solver with warm starts.

    minimize    1/2 x^T H x + g^T x
    subject to  A_eq x = b_eq,  lower <= A_in x <= upper,  lb <= x <= ub

Primal active-set method.  Each iteration solves the equality-constrained
subproblem on the working set through its full KKT system, which tolerates a
Hessian that is only positive definite on the null space of the active rows.
A feasible starting point comes from the previous working set when one is
supplied, and otherwise from a linear-programming feasibility solve.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

EIG_FLOOR = 1e-10
FEAS_TOL = 1e-9
DUAL_TOL = 1e-10


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    regularization: float = field(default=0.0, init=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError("Hessian must be square")
        H = 0.5 * (H + H.T)
        lam = float(np.linalg.eigvalsh(H)[0])
        if lam < -1e-8 * max(1.0, np.abs(H).max()):
            raise ValueError(f"Hessian is indefinite (min eigenvalue {lam:.3g})")
        if lam < EIG_FLOOR:
            self.regularization = EIG_FLOOR - lam
            H = H + self.regularization * np.eye(n)
        self.H = H
        self.g = np.asarray(self.g, dtype=float).reshape(n)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_in = np.zeros((0, n)) if self.A_in is None else np.atleast_2d(np.asarray(self.A_in, dtype=float))
        m = self.A_in.shape[0]
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(m)
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(m)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n)
        if self.A_eq.shape[1] != n or self.A_in.shape[1] != n or self.b_eq.size != self.A_eq.shape[0]:
            raise ValueError("constraint dimensions do not match the Hessian")
        if np.any(self.lower > self.upper) or np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def save(self, path: str | Path) -> None:
        """One-file dump for offline replay."""
        np.savez(path, H=self.H - self.regularization * np.eye(self.n), g=self.g, A_eq=self.A_eq,
                 b_eq=self.b_eq, A_in=self.A_in, lower=self.lower, upper=self.upper, lb=self.lb, ub=self.ub)

    @classmethod
    def load(cls, path: str | Path) -> QpProblem:
        d = np.load(path)
        return cls(**{k: d[k] for k in ("H", "g", "A_eq", "b_eq", "A_in", "lower", "upper", "lb", "ub")})


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    y_eq: np.ndarray
    z_in: np.ndarray
    z_bound: np.ndarray
    iterations: int
    solve_time: float
    working_set: tuple = ()
    phase1_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class _Rows:
    """All one-sided inequalities ``G x <= h`` plus the equality rows, with bookkeeping."""

    def __init__(self, p: QpProblem):
        n = p.n
        G, h, src = [], [], []
        eqA, eqb = [p.A_eq], [p.b_eq]
        self.eq_src = [("eq", i, 1.0) for i in range(p.A_eq.shape[0])]
        for kind, A, lo, hi in (("in", p.A_in, p.lower, p.upper), ("bd", None, p.lb, p.ub)):
            eq = lo == hi
            up = np.flatnonzero(np.isfinite(hi) & ~eq)
            dn = np.flatnonzero(np.isfinite(lo) & ~eq)
            ie = np.flatnonzero(eq)
            rows = (lambda idx: A[idx]) if A is not None else (lambda idx: np.eye(n)[idx])
            eqA.append(rows(ie)); eqb.append(hi[ie])
            self.eq_src += [(kind, int(i), 1.0) for i in ie]
            G += [rows(up), -rows(dn)]
            h += [hi[up], -lo[dn]]
            src += [(kind, int(i), 1.0) for i in up] + [(kind, int(i), -1.0) for i in dn]
        self.E = np.vstack(eqA)
        self.e = np.concatenate(eqb)
        self.n_user_eq = p.A_eq.shape[0]
        self.G = np.vstack(G).reshape(-1, n)
        self.h = np.concatenate(h)
        self.src = src
        self.norms = np.linalg.norm(self.G, axis=1)
        self.key = {s: j for j, s in enumerate(src)}

    def violation(self, x) -> float:
        v = 0.0
        if self.E.shape[0]:
            v = float(np.max(np.abs(self.E @ x - self.e)))
        if self.G.shape[0]:
            v = max(v, float(np.max(self.G @ x - self.h)))
        return v


def _feas_scale(rows: _Rows, x) -> float:
    return 1.0 + max(np.max(np.abs(rows.h), initial=0.0), np.max(np.abs(rows.e), initial=0.0),
                     float(np.max(np.abs(x), initial=0.0)))


def _phase1(p: QpProblem, rows: _Rows) -> tuple[np.ndarray | None, float]:
    """A feasible vertex, or ``None`` and the minimal total constraint violation."""
    n = p.n
    res = linprog(np.zeros(n), A_ub=rows.G if rows.G.size else None, b_ub=rows.h if rows.G.size else None,
                  A_eq=rows.E if rows.E.size else None, b_eq=rows.e if rows.E.size else None,
                  bounds=[(None, None)] * n, method="highs")
    if res.status == 0:
        return res.x, 0.0
    # elastic program: the optimum is a certificate of infeasibility when positive
    me, mi = rows.E.shape[0], rows.G.shape[0]
    c = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    A_ub = np.hstack([rows.G, np.zeros((mi, 2 * me)), -np.eye(mi)]) if mi else None
    A_eq = np.hstack([rows.E, np.eye(me), -np.eye(me), np.zeros((me, mi))]) if me else None
    el = linprog(c, A_ub=A_ub, b_ub=rows.h if mi else None, A_eq=A_eq, b_eq=rows.e if me else None,
                 bounds=[(None, None)] * n + [(0, None)] * (2 * me + mi), method="highs")
    return None, float(el.fun) if el.status == 0 else float("inf")


def _independent_active(rows: _Rows, x, candidates, tol) -> list[int]:
    """Greedy subset of active rows that keeps ``[E; G_W]`` full row rank."""
    W: list[int] = []
    base = rows.E
    r = np.linalg.matrix_rank(base) if base.shape[0] else 0
    for j in candidates:
        if rows.h[j] - rows.G[j] @ x > tol:
            continue
        trial = np.vstack([base, rows.G[j]])
        rt = np.linalg.matrix_rank(trial, tol=1e-9)
        if rt > r:
            W.append(j)
            base, r = trial, rt
    return W


def _kkt_solve(H, A, rhs_x, rhs_c):
    k = A.shape[0]
    n = H.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    sol = np.linalg.solve(K, np.concatenate([rhs_x, rhs_c]))
    return sol[:n], sol[n:]


class QpSolver:
    """Stateful solver: remembers the last working set for warm starts."""

    def __init__(self, max_iter: int = 200):
        self.max_iter = max_iter
        self._warm: tuple | None = None

    def reset(self) -> None:
        self._warm = None

    def solve(self, p: QpProblem, warm: bool = True) -> QpSolution:
        sol = solve(p, self._warm if warm else None, self.max_iter)
        if sol.ok:
            self._warm = (sol.working_set, sol.x)
        return sol


def _independent(rows: _Rows, W: list[int]) -> list[int]:
    if not W:
        return W
    A = np.vstack([rows.E, rows.G[W]])
    if np.linalg.matrix_rank(A, tol=1e-9) == A.shape[0]:
        return W
    return _independent_active(rows, np.zeros(rows.G.shape[1]), W, np.inf)


def _start_point(p: QpProblem, rows: _Rows, warm_start):
    """Feasible start and working set from a warm start, or ``None``."""
    keys, x_prev = warm_start
    Wp = _independent(rows, [rows.key[k] for k in keys if k in rows.key])
    A = np.vstack([rows.E, rows.G[Wp]]) if Wp else rows.E
    try:
        xw, _ = _kkt_solve(p.H, A, -p.g, np.concatenate([rows.e, rows.h[Wp]]))
        if np.all(np.isfinite(xw)) and rows.violation(xw) <= FEAS_TOL * _feas_scale(rows, xw):
            return xw, Wp
    except np.linalg.LinAlgError:
        pass
    if x_prev is not None and np.size(x_prev) == p.n:
        x_prev = np.asarray(x_prev, dtype=float)
        if rows.violation(x_prev) <= FEAS_TOL * _feas_scale(rows, x_prev):
            mG = rows.G.shape[0]
            order = Wp + [j for j in range(mG) if j not in set(Wp)]
            return x_prev.copy(), _independent_active(rows, x_prev, order, FEAS_TOL * _feas_scale(rows, x_prev))
    return None


def _iterate(p: QpProblem, rows: _Rows, x, W: list[int], max_iter: int):
    ne = rows.E.shape[0]
    mG = rows.G.shape[0]
    it = 0
    status = QpStatus.MAX_ITER
    stationary = False
    while it <= max_iter:
        A = np.vstack([rows.E, rows.G[W]]) if W else rows.E
        grad = p.H @ x + p.g
        step, mult = _kkt_solve(p.H, A, -grad, np.zeros(A.shape[0]))
        if not np.all(np.isfinite(step)):
            raise np.linalg.LinAlgError("non-finite step")
        # after a full step x already minimizes on W; the fresh step is only roundoff
        if stationary or np.max(np.abs(step)) <= 1e-10 * (1.0 + np.max(np.abs(x))):
            lam = mult[ne:]
            if lam.size == 0 or lam.min() >= -DUAL_TOL * (1.0 + np.max(np.abs(grad))):
                status = QpStatus.OPTIMAL
                break
            # drop the most negative multiplier; smallest index on ties
            W.pop(int(np.argmin(lam)))
            stationary = False
            it += 1
            continue
        alpha, block = 1.0, -1
        if mG:
            Gp = rows.G @ step
            slack = rows.h - rows.G @ x
            inW = np.zeros(mG, dtype=bool)
            inW[W] = True
            # rows in the span of the working set give G p at roundoff level only
            tol = 1e-11 * rows.norms * np.linalg.norm(step)
            cand = np.flatnonzero(~inW & (Gp > tol))
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / Gp[cand]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    alpha, block = float(ratios[k]), int(cand[k])
        x = x + alpha * step
        if block >= 0:
            W.append(block)
        stationary = block < 0
        it += 1
    return x, W, it, status


def solve(p: QpProblem, warm_start: tuple | None = None, max_iter: int = 200) -> QpSolution:
    """Solve ``p``; ``warm_start`` is ``(working_set_keys, x)`` from an earlier solution."""
    t0 = time.perf_counter()
    rows = _Rows(p)
    n = p.n
    mG = rows.G.shape[0]
    result = None
    if warm_start is not None:
        start = _start_point(p, rows, warm_start)
        if start is not None:
            try:
                result = _iterate(p, rows, start[0], list(start[1]), max_iter)
            except np.linalg.LinAlgError:
                result = None
    if result is None:
        x, resid = _phase1(p, rows)
        if x is None:
            return QpSolution(np.full(n, np.nan), QpStatus.INFEASIBLE, np.zeros(p.A_eq.shape[0]),
                              np.zeros(p.A_in.shape[0]), np.zeros(n), 0, time.perf_counter() - t0,
                              (), resid)
        W = _independent_active(rows, x, range(mG), FEAS_TOL * _feas_scale(rows, x))
        try:
            result = _iterate(p, rows, x, W, max_iter)
        except np.linalg.LinAlgError:
            return QpSolution(np.full(n, np.nan), QpStatus.MAX_ITER, np.zeros(p.A_eq.shape[0]),
                              np.zeros(p.A_in.shape[0]), np.zeros(n), 0, time.perf_counter() - t0)
    x, W, it, status = result
    ne = rows.E.shape[0]

    x = x.copy()
    # final multipliers from the converged working set
    A = np.vstack([rows.E, rows.G[W]]) if W else rows.E
    grad = p.H @ x + p.g
    if A.shape[0]:
        mult, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
    else:
        mult = np.zeros(0)
    y_eq = np.zeros(p.A_eq.shape[0])
    z_in = np.zeros(p.A_in.shape[0])
    z_b = np.zeros(n)
    for (kind, i, sgn), v in list(zip(rows.eq_src, mult[:ne])) + \
            [(rows.src[j], v) for j, v in zip(W, mult[ne:])]:
        if kind == "eq":
            y_eq[i] += v
        elif kind == "in":
            z_in[i] += sgn * v
        else:
            z_b[i] += sgn * v
    return QpSolution(x, status, y_eq, z_in, z_b, it, time.perf_counter() - t0,
                      tuple(rows.src[j] for j in W))


def kkt_residual(p: QpProblem, s: QpSolution) -> float:
    """Largest scaled violation among stationarity, feasibility, dual sign and complementarity."""
    x = s.x
    if not np.all(np.isfinite(x)):
        return float("inf")
    grad = p.H @ x + p.g
    stat = grad + p.A_eq.T @ s.y_eq + p.A_in.T @ s.z_in + s.z_bound
    scale = 1.0 + max(np.max(np.abs(p.g), initial=0.0), np.max(np.abs(p.H @ x), initial=0.0))
    r = float(np.max(np.abs(stat), initial=0.0)) / scale

    def side(Ax, lo, hi, z):
        viol = max(np.max(lo - Ax, initial=0.0), np.max(Ax - hi, initial=0.0))
        # positive multipliers belong to the upper side, negative to the lower
        dual = 0.0
        comp = 0.0
        up = z > 0
        lo_ = z < 0
        if np.any(up):
            dual = max(dual, float(np.max(np.where(np.isfinite(hi[up]), 0.0, np.abs(z[up])))))
            comp = max(comp, float(np.max(np.abs(z[up] * np.where(np.isfinite(hi[up]), hi[up] - Ax[up], 0.0)))))
        if np.any(lo_):
            dual = max(dual, float(np.max(np.where(np.isfinite(lo[lo_]), 0.0, np.abs(z[lo_])))))
            comp = max(comp, float(np.max(np.abs(z[lo_] * np.where(np.isfinite(lo[lo_]), Ax[lo_] - lo[lo_], 0.0)))))
        return viol, dual, comp

    fs = 1.0 + float(np.max(np.abs(x), initial=0.0))
    feas = float(np.max(np.abs(p.A_eq @ x - p.b_eq), initial=0.0))
    v1, d1, c1 = side(p.A_in @ x, p.lower, p.upper, s.z_in)
    v2, d2, c2 = side(x, p.lb, p.ub, s.z_bound)
    feas = max(feas, v1, v2) / fs
    return max(r, feas, max(d1, d2) / scale, max(c1, c2) / (scale * fs))


__all__ = ["QpProblem", "QpSolution", "QpStatus", "QpSolver", "solve", "kkt_residual"]
