"""Weighted QP whole-body controllers.

Decision vector ``[qdd (11); f_c (4); eps (12)]``.  The MFT controller keeps
the predicted actuated joint position inside the preferable polyhedron as a
soft constraint relaxed by ``eps``; the SA baseline replaces it with hard
bounds on the predicted passive joint positions and pins ``eps`` to zero.
Optimal accelerations and forces are mapped to actuator torques through the
affine torque map of the constrained dynamics.
"""
from __future__ import annotations

import csv
import enum
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics
from .dynamics import DynamicsTerms
from .exceptions import InconsistentPhase, MftWbcError
from .model import ACTUATED, NQ, PASSIVE, Phase, RobotModel
from .qp import QpProblem, QpSolver, QpStatus
from .wsmap import Polyhedron, Space

N_QDD = NQ
N_FC = 4
N_EPS = 12
N_VAR = N_QDD + N_FC + N_EPS
S_UA = np.zeros((4, NQ))
S_UA[np.arange(4), PASSIVE] = 1.0


class ControllerKind(enum.Enum):
    MFT = "MFT"
    SA = "SA"


@dataclass(frozen=True)
class WbcConfig:
    w_z: float = 1.0
    w_theta: float = 1.0
    w_foot_sw: float = 1.0
    w_foot_st: float = 1e2
    w_fc: float = 1e-3
    w_dfc: float = 5e-2
    w_eps: float = 1e3
    eps_linear: float = 1.0
    mu: float = 0.6
    dt_predict: float = 0.05
    qdd_joint_max: float = 500.0
    qdd_base_max: float = 50.0
    tau_max: float | None = None
    kp_base: float = 100.0
    kd_base: float = 20.0
    kp_swing: float = 400.0
    kd_swing: float = 40.0
    kp_stance: float = 0.0
    kd_stance: float = 20.0
    closure_equality: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> WbcConfig:
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Task:
    """Operational-space task ``J qdd + Jdot_qd -> xdd_des`` with a PD law on its error."""

    name: str
    J: np.ndarray
    Jdot_qd: np.ndarray
    x_ref: np.ndarray
    xd_ref: np.ndarray
    xdd_ref: np.ndarray
    x_est: np.ndarray
    xd_est: np.ndarray
    kp: float
    kd: float
    weight: float
    foot: int | None = None
    phase: Phase | None = None

    def __post_init__(self):
        if self.weight < 0 or self.kp < 0 or self.kd < 0:
            raise ValueError("task weights and gains must be non-negative")


def desired_task_accel(task: Task) -> np.ndarray:
    return (np.asarray(task.xdd_ref, dtype=float)
            + task.kp * (np.asarray(task.x_ref, dtype=float) - task.x_est)
            + task.kd * (np.asarray(task.xd_ref, dtype=float) - task.xd_est))


@dataclass
class TaskSet:
    tasks: list

    def __iter__(self):
        return iter(self.tasks)

    def by_name(self, name: str) -> Task:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)


def build_tasks(q, qd, terms: DynamicsTerms, feet_pos, feet_vel, refs, config: WbcConfig) -> TaskSet:
    """Base height, base pitch and one task per foot from planner references."""
    e = np.eye(NQ)
    tasks = [
        Task("base_z", e[1:2], np.zeros(1), [refs.height], [0.0], [0.0], q[1:2], qd[1:2],
             config.kp_base, config.kd_base, config.w_z),
        Task("base_pitch", e[2:3], np.zeros(1), [refs.pitch], [0.0], [0.0], q[2:3], qd[2:3],
             config.kp_base, config.kd_base, config.w_theta),
    ]
    for i in range(2):
        r = refs.feet[i]
        swing = refs.phases[i] is Phase.SWING
        tasks.append(Task(f"foot{i}", terms.J_c[2 * i:2 * i + 2], terms.Jdot_c_qd[2 * i:2 * i + 2],
                          r.pos, r.vel, r.acc, np.asarray(feet_pos[i]), np.asarray(feet_vel[i]),
                          config.kp_swing if swing else config.kp_stance,
                          config.kd_swing if swing else config.kd_stance,
                          config.w_foot_sw if swing else config.w_foot_st, i, refs.phases[i]))
    return TaskSet(tasks)


@dataclass
class MftConstraint:
    """``C qdd <= d`` (before relaxation) predicted over ``dt``."""

    C: np.ndarray
    d: np.ndarray
    source: Polyhedron
    dt: float


def build_mft_constraint(poly: Polyhedron, qa, qa_dot, dt: float) -> MftConstraint:
    """Second-order prediction of the actuated joints kept inside ``poly``."""
    if dt <= 0:
        raise ValueError("prediction horizon must be positive")
    if poly.space is not Space.ACTUATED_JOINT:
        raise ValueError("joint-space constraint needs an actuated-joint polyhedron")
    qa = np.asarray(qa, dtype=float)
    qa_dot = np.asarray(qa_dot, dtype=float)
    S_a = dynamics.S_A
    C = 0.5 * dt * dt * poly.A @ S_a
    d = poly.b - poly.A @ (qa + qa_dot * dt)
    return MftConstraint(C, d, poly, dt)


def build_cartesian_constraint(poly: Polyhedron, p, J, qd, Jdot_qd, dt: float) -> MftConstraint:
    """Same prediction for a task-space polyhedron: ``p + J qd dt + (J qdd + Jdot qd) dt^2 / 2``."""
    if dt <= 0:
        raise ValueError("prediction horizon must be positive")
    p = np.asarray(p, dtype=float)
    J = np.asarray(J, dtype=float)
    C = 0.5 * dt * dt * poly.A @ J
    d = poly.b - poly.A @ (p + J @ np.asarray(qd, dtype=float) * dt
                           + 0.5 * dt * dt * np.asarray(Jdot_qd, dtype=float))
    return MftConstraint(C, d, poly, dt)


def sa_constraint(q, qd, dt: float, q_min, q_max) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows ``lower <= G qdd <= upper`` keeping the predicted passive joints inside their range."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    G = 0.5 * dt * dt * S_UA
    pred = S_UA @ (q + qd * dt)
    return G, np.asarray(q_min, dtype=float) - pred, np.asarray(q_max, dtype=float) - pred


def static_force_distribution(terms: DynamicsTerms, phases) -> np.ndarray:
    """Minimum-norm contact forces balancing the base at rest."""
    stance = [j for i in range(2) if phases[i] is Phase.STANCE for j in (2 * i, 2 * i + 1)]
    f = np.zeros(N_FC)
    if not stance:
        return f
    A = terms.S_f @ terms.N_h.T @ terms.J_c.T[:, stance]
    b = terms.S_f @ terms.N_h.T @ terms.H
    f[stance] = np.linalg.lstsq(A, b, rcond=None)[0]
    return f


def _friction_rows(mu: float) -> np.ndarray:
    """``+-f_x - mu f_z <= 0`` for both feet (swing-foot forces are pinned to zero anyway)."""
    A = np.zeros((4, N_VAR))
    for i in range(2):
        for r, s in enumerate((1.0, -1.0)):
            A[2 * i + r, N_QDD + 2 * i] = s
            A[2 * i + r, N_QDD + 2 * i + 1] = -mu
    return A


def assemble_problem(terms: DynamicsTerms, qd, tasks: TaskSet, config: WbcConfig, phases,
                     mft: MftConstraint | None = None, sa_rows=None, f_prev=None,
                     torque_map=None, tau_max=None) -> QpProblem:
    """Problem over ``[qdd; f_c; eps]`` with the weighted task cost and all constraints."""
    for t in tasks:
        if t.foot is not None and t.phase is not phases[t.foot]:
            raise InconsistentPhase(f"task {t.name} is {t.phase.value} but the contact set says "
                                    f"{phases[t.foot].value}")
    iq = slice(0, N_QDD)
    iF = slice(N_QDD, N_QDD + N_FC)
    iE = slice(N_QDD + N_FC, N_VAR)
    H = np.zeros((N_VAR, N_VAR))
    g = np.zeros(N_VAR)
    for t in tasks:
        if t.weight == 0:
            continue
        r = np.asarray(t.Jdot_qd, dtype=float) - desired_task_accel(t)
        H[iq, iq] += 2.0 * t.weight * t.J.T @ t.J
        g[iq] += 2.0 * t.weight * t.J.T @ r
    f_prev = np.zeros(N_FC) if f_prev is None else np.asarray(f_prev, dtype=float)
    # w_fc acts on tangential forces: the slip-reducing part that does not bias weight support
    H[iF, iF] += 2.0 * np.diag([config.w_fc, 0.0, config.w_fc, 0.0]) + 2.0 * config.w_dfc * np.eye(N_FC)
    g[iF] += -2.0 * config.w_dfc * f_prev
    # slack cost w_eps (|eps|^2 + eps_linear * sum(eps)) with eps >= 0: the linear part is an
    # exact penalty, so eps stays zero unless a row's multiplier exceeds w_eps * eps_linear
    H[iE, iE] += 2.0 * config.w_eps * np.eye(N_EPS)
    g[iE] += config.w_eps * config.eps_linear

    # floating-base rows of the projected dynamics
    NT = terms.N_h.T
    A_eq = [np.hstack([terms.S_f @ terms.M, -terms.S_f @ NT @ terms.J_c.T, np.zeros((3, N_EPS))])]
    b_eq = [-terms.S_f @ NT @ terms.H]
    if config.closure_equality:
        A_eq.append(np.hstack([terms.J_h, np.zeros((4, N_FC + N_EPS))]))
        b_eq.append(-terms.Jdot_h_qd)

    # fixed row layout (friction, torque, MFT or SA) so warm starts survive phase changes
    blocks, lo, hi = [_friction_rows(config.mu)], [np.full(4, -np.inf)], [np.zeros(4)]
    T_q, T_f, t0 = torque_map if torque_map is not None else dynamics.torque_map(terms)
    if tau_max is not None:
        blocks.append(np.hstack([T_q, T_f, np.zeros((4, N_EPS))]))
        lo.append(-tau_max - t0)
        hi.append(tau_max - t0)
    lb = np.full(N_VAR, -np.inf)
    ub = np.full(N_VAR, np.inf)
    lb[:3], ub[:3] = -config.qdd_base_max, config.qdd_base_max
    lb[3:N_QDD], ub[3:N_QDD] = -config.qdd_joint_max, config.qdd_joint_max
    for i in range(2):
        if phases[i] is Phase.SWING:
            lb[N_QDD + 2 * i:N_QDD + 2 * i + 2] = 0.0
            ub[N_QDD + 2 * i:N_QDD + 2 * i + 2] = 0.0
        else:
            lb[N_QDD + 2 * i + 1] = 0.0
    if mft is not None:
        k = mft.C.shape[0]
        blk = np.zeros((k, N_VAR))
        blk[:, iq] = mft.C
        blk[:, N_QDD + N_FC:N_QDD + N_FC + k] = -np.eye(k)
        blocks.append(blk)
        lo.append(np.full(k, -np.inf))
        hi.append(mft.d)
        lb[iE] = 0.0
    else:
        lb[iE] = 0.0
        ub[iE] = 0.0
    if sa_rows is not None:
        G, glo, ghi = sa_rows
        blk = np.zeros((G.shape[0], N_VAR))
        blk[:, iq] = G
        blocks.append(blk)
        lo.append(glo)
        hi.append(ghi)
    A_in = np.vstack(blocks)
    lo, hi = np.concatenate(lo), np.concatenate(hi)
    return QpProblem(H, g, np.vstack(A_eq), np.concatenate(b_eq), A_in, lo, hi, lb, ub)


@dataclass
class TickResult:
    tau: np.ndarray
    qdd: np.ndarray
    f_c: np.ndarray
    eps: np.ndarray
    status: QpStatus
    iterations: int
    solve_time: float
    tick_time: float
    fault: bool = False
    problem: QpProblem | None = field(default=None, repr=False)
    solution: object = field(default=None, repr=False)


TICK_LOG_HEADER = (["t"] + [f"q{i}" for i in range(NQ)] + [f"qd{i}" for i in range(NQ)]
                   + [f"tau{i}" for i in range(4)] + [f"f{i}" for i in range(4)]
                   + [f"eps{i}" for i in range(N_EPS)] + ["iterations", "solve_time", "fault"])


class WholeBodyController:
    """One controller per robot; ticks must be called sequentially."""

    def __init__(self, model: RobotModel, config: WbcConfig | None = None,
                 kind: ControllerKind = ControllerKind.MFT, polyhedron: Polyhedron | None = None,
                 passive_bounds: tuple | None = None, keep_problems: bool = False):
        self.model = model
        self.config = config or WbcConfig()
        self.kind = ControllerKind(kind)
        if self.kind is ControllerKind.MFT and polyhedron is None:
            raise ValueError("the MFT controller needs a preferable polyhedron")
        if self.kind is ControllerKind.SA and passive_bounds is None:
            raise ValueError("the SA controller needs passive joint bounds")
        self.polyhedron = polyhedron
        self.passive_bounds = passive_bounds
        self.tau_max = self.config.tau_max if self.config.tau_max is not None else model.actuator.tau_max
        self.solver = QpSolver()
        self.f_prev: np.ndarray | None = None
        self.tau_prev = np.zeros(4)
        self.keep_problems = keep_problems
        self.log_rows: list[list[float]] = []
        self.log_enabled = False

    def reset(self) -> None:
        self.solver.reset()
        self.f_prev = None
        self.tau_prev = np.zeros(4)

    def control_tick(self, q, qd, refs, t: float = 0.0) -> TickResult:
        t_start = time.perf_counter()
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        cfg = self.config
        phases = refs.phases
        try:
            terms = dynamics.compute_terms(self.model, q, qd)
            tmap = dynamics.torque_map(terms)
        except MftWbcError:
            return self._hold(q, qd, t, t_start)
        from . import _kernels

        pos, vel, _, _ = _kernels.foot_terms(q, qd, self.model.limb_array)
        tasks = build_tasks(q, qd, terms, pos, vel, refs, cfg)
        if self.f_prev is None:
            self.f_prev = static_force_distribution(terms, phases)
        mft = sa = None
        if self.kind is ControllerKind.MFT:
            mft = build_mft_constraint(self.polyhedron, q[ACTUATED], qd[ACTUATED], cfg.dt_predict)
        else:
            sa = sa_constraint(q, qd, cfg.dt_predict, *self.passive_bounds)
        prob = assemble_problem(terms, qd, tasks, cfg, phases, mft, sa, self.f_prev, tmap, self.tau_max)
        sol = self.solver.solve(prob)
        if not sol.ok:
            res = self._hold(q, qd, t, t_start)
            res.status, res.iterations, res.solve_time = sol.status, sol.iterations, sol.solve_time
            return res
        x = sol.x
        qdd, f = x[:N_QDD], x[N_QDD:N_QDD + N_FC]
        T_q, T_f, t0 = tmap
        tau = T_q @ qdd + T_f @ f + t0
        self.f_prev = f.copy()
        self.tau_prev = tau.copy()
        res = TickResult(tau, qdd.copy(), f.copy(), x[N_QDD + N_FC:].copy(), sol.status, sol.iterations,
                         sol.solve_time, time.perf_counter() - t_start)
        if self.keep_problems:
            res.problem, res.solution = prob, sol
        self._log(t, q, qd, res)
        return res

    def _hold(self, q, qd, t, t_start) -> TickResult:
        res = TickResult(self.tau_prev.copy(), np.zeros(NQ), np.zeros(N_FC), np.zeros(N_EPS),
                         QpStatus.INFEASIBLE, 0, 0.0, time.perf_counter() - t_start, fault=True)
        self._log(t, q, qd, res)
        return res

    def _log(self, t, q, qd, r: TickResult) -> None:
        if self.log_enabled:
            self.log_rows.append([t, *q, *qd, *r.tau, *r.f_c, *r.eps, r.iterations, r.solve_time,
                                  float(r.fault)])

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TICK_LOG_HEADER)
            for row in self.log_rows:
                w.writerow([repr(float(v)) for v in row])
