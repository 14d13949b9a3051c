"""Deterministic simulation of the closed-chain biped on the ground.

Contact is a penalty spring-damper under each foot with a stick-slip friction
spring anchored where the foot touched down.  Loop closures are enforced as
acceleration-level constraints with Baumgarte stabilization.  Every physics
step is one classical Runge-Kutta step of the constrained dynamics, which
keeps free flight exact for constant acceleration and the energy drift of
passive motion negligible.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import _kernels
from .exceptions import NumericalBlowup
from .model import NQ, GeneralizedState, Phase, RobotModel

PHYSICS_DT = 2e-4
CONTROL_DECIMATION = 5
QD_LIMIT = 1e3


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 5e4
    damping: float = 1e3
    tangential_stiffness: float = 5e4
    tangential_damping: float = 1e3
    baumgarte_omega: float = 200.0
    baumgarte_zeta: float = 1.0

    def packed(self) -> np.ndarray:
        return np.array([self.stiffness, self.damping, self.tangential_stiffness,
                         self.tangential_damping, self.baumgarte_omega, self.baumgarte_zeta])


@dataclass(frozen=True)
class Terrain:
    """Piecewise-linear ground height ``h(x)`` with a friction coefficient per segment.

    Outside the breakpoints the end segments extend flat.
    """

    xs: tuple = (-1e3, 1e3)
    heights: tuple = (0.0, 0.0)
    friction: tuple = (0.8,)

    def __post_init__(self):
        if len(self.xs) != len(self.heights) or len(self.friction) != len(self.xs) - 1:
            raise ValueError("terrain needs n breakpoints, n heights and n-1 friction values")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("terrain breakpoints must be strictly increasing")

    @classmethod
    def flat(cls, mu: float = 0.8, height: float = 0.0) -> Terrain:
        return cls((-1e3, 1e3), (height, height), (mu,))

    def arrays(self):
        return (np.asarray(self.xs, dtype=float), np.asarray(self.heights, dtype=float),
                np.asarray(self.friction, dtype=float))

    def height(self, x: float) -> float:
        xs, hs, _ = self.arrays()
        return float(_terrain_at(x, xs, hs, np.zeros(len(xs) - 1))[0])


@dataclass(frozen=True)
class PushEvent:
    """Sagittal impulse on the base, spread as a constant force.

    ``trigger`` is either a time in seconds or the string ``"liftoff"`` (the
    first foot lift-off at or after ``after``).
    """

    impulse: float
    trigger: float | str = "liftoff"
    spread: float = 0.01
    after: float = 0.0

    def __post_init__(self):
        if self.spread <= 0:
            raise ValueError("push spread duration must be positive")

    @property
    def force(self) -> float:
        return self.impulse / self.spread


def apply_push(event: PushEvent, start: float | None, t: float) -> np.ndarray:
    """Generalized external force at time ``t`` for a push that started at ``start``."""
    f = np.zeros(NQ)
    if start is not None and start <= t < start + event.spread:
        f[0] = event.force
    return f


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0
    anchors: np.ndarray = field(default_factory=lambda: np.zeros(2))
    anchored: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=bool))
    f_c: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def copy(self) -> SimState:
        return SimState(self.q.copy(), self.qd.copy(), self.t, self.anchors.copy(),
                        self.anchored.copy(), self.f_c.copy())

    @property
    def contact(self) -> tuple[Phase, Phase]:
        return tuple(Phase.STANCE if self.f_c[2 * i + 1] > 0 else Phase.SWING for i in range(2))

    def generalized(self) -> GeneralizedState:
        return GeneralizedState(self.q.copy(), self.qd.copy(), self.contact, self.t)


# -- compiled core ---------------------------------------------------------------

@njit(cache=True)
def _terrain_at(x, xs, hs, mus):
    n = xs.size
    if x <= xs[0]:
        return hs[0], mus[0] if mus.size else 0.0
    if x >= xs[n - 1]:
        return hs[n - 1], mus[mus.size - 1] if mus.size else 0.0
    i = 0
    while xs[i + 1] < x:
        i += 1
    w = (x - xs[i]) / (xs[i + 1] - xs[i])
    return hs[i] + w * (hs[i + 1] - hs[i]), mus[i]


@njit(cache=True)
def _contact(pos, vel, anchors, anchored, xs, hs, mus, cp):
    """Foot forces (fx, fz per foot) for given anchors; no state is modified."""
    f = np.zeros(4)
    for i in range(2):
        h, mu = _terrain_at(pos[i, 0], xs, hs, mus)
        pen = h - pos[i, 1]
        if pen <= 0.0:
            continue
        fz = cp[0] * pen - cp[1] * vel[i, 1]
        if fz < 0.0:
            fz = 0.0
        a = anchors[i] if anchored[i] else pos[i, 0]
        fx = -cp[2] * (pos[i, 0] - a) - cp[3] * vel[i, 0]
        lim = mu * fz
        if fx > lim:
            fx = lim
        elif fx < -lim:
            fx = -lim
        f[2 * i] = fx
        f[2 * i + 1] = fz
    return f


@njit(cache=True)
def _accel(q, qd, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp):
    M = _kernels.crba(q, limb, torso)
    H = _kernels.rnea(q, qd, np.zeros(NQ), limb, torso, g)
    phi, Jh, dh = _kernels.closure_terms(q, qd, limb)
    pos, vel, Jc, _ = _kernels.foot_terms(q, qd, limb)
    fc = _contact(pos, vel, anchors, anchored, xs, hs, mus, cp)
    rhs = Jc.T @ fc - H + fext
    rhs[3] += tau[0]
    rhs[5] += tau[1]
    rhs[7] += tau[2]
    rhs[9] += tau[3]
    w = cp[4]
    z = cp[5]
    K = np.zeros((NQ + 4, NQ + 4))
    K[:NQ, :NQ] = M
    K[:NQ, NQ:] = -Jh.T
    K[NQ:, :NQ] = Jh
    b = np.empty(NQ + 4)
    b[:NQ] = rhs
    b[NQ:] = -dh - 2.0 * z * w * (Jh @ qd) - w * w * phi
    sol = np.linalg.solve(K, b)
    return sol[:NQ], fc


@njit(cache=True)
def _rk4(q, qd, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp, dt):
    a1, fc = _accel(q, qd, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp)
    q2 = q + 0.5 * dt * qd
    v2 = qd + 0.5 * dt * a1
    a2, _ = _accel(q2, v2, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp)
    q3 = q + 0.5 * dt * v2
    v3 = qd + 0.5 * dt * a2
    a3, _ = _accel(q3, v3, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp)
    q4 = q + dt * v3
    v4 = qd + dt * a3
    a4, _ = _accel(q4, v4, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp)
    qn = q + dt / 6.0 * (qd + 2.0 * v2 + 2.0 * v3 + v4)
    vn = qd + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return qn, vn, fc


@njit(cache=True)
def _update_anchors(q, qd, anchors, anchored, limb, xs, hs, mus, cp):
    pos, vel, _, _ = _kernels.foot_terms(q, qd, limb)
    for i in range(2):
        h, mu = _terrain_at(pos[i, 0], xs, hs, mus)
        pen = h - pos[i, 1]
        if pen <= 0.0:
            anchored[i] = False
            continue
        if not anchored[i]:
            anchors[i] = pos[i, 0]
            anchored[i] = True
            continue
        fz = max(0.0, cp[0] * pen - cp[1] * vel[i, 1])
        spring = -cp[2] * (pos[i, 0] - anchors[i])
        lim = mu * fz
        # slipping: drag the anchor so the spring sits on the friction limit
        if spring > lim:
            anchors[i] = pos[i, 0] + lim / cp[2]
        elif spring < -lim:
            anchors[i] = pos[i, 0] - lim / cp[2]


@njit(cache=True)
def advance(q, qd, anchors, anchored, tau, push_force, push_steps, n_steps, limb, torso, g,
            xs, hs, mus, cp, dt, qd_limit):
    """Run ``n_steps`` physics steps with constant torque; the first ``push_steps`` carry the push.

    Returns the final ``(q, qd, f_c)`` and a status flag (0 ok, 1 blow-up).
    """
    fc = np.zeros(4)
    fext = np.zeros(NQ)
    for k in range(n_steps):
        fext[0] = push_force if k < push_steps else 0.0
        q, qd, fc = _rk4(q, qd, tau, fext, anchors, anchored, limb, torso, g, xs, hs, mus, cp, dt)
        _update_anchors(q, qd, anchors, anchored, limb, xs, hs, mus, cp)
        bad = False
        for j in range(NQ):
            if not math.isfinite(qd[j]) or abs(qd[j]) > qd_limit:
                bad = True
        if bad:
            return q, qd, fc, 1
    return q, qd, fc, 0


@njit(cache=True)
def _foot_forces_now(q, qd, anchors, anchored, limb, xs, hs, mus, cp):
    pos, vel, _, _ = _kernels.foot_terms(q, qd, limb)
    return _contact(pos, vel, anchors, anchored, xs, hs, mus, cp)


# -- Python surface ----------------------------------------------------------------

class Simulator:
    """Owns the physics state; the controller drives it tick by tick."""

    def __init__(self, model: RobotModel, state: SimState, terrain: Terrain | None = None,
                 contact: ContactParams | None = None, dt: float = PHYSICS_DT):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.state = state
        self.terrain = terrain or Terrain.flat()
        self.contact = contact or ContactParams()
        self.dt = dt
        self._cp = self.contact.packed()
        self._xs, self._hs, self._mus = self.terrain.arrays()
        self.state.f_c = self.contact_forces()

    def contact_forces(self) -> np.ndarray:
        s = self.state
        return _foot_forces_now(s.q, s.qd, s.anchors, s.anchored, self.model.limb_array,
                                self._xs, self._hs, self._mus, self._cp)

    def advance(self, tau, n_steps: int, push_force: float = 0.0, push_steps: int = 0) -> SimState:
        s = self.state
        q, qd, fc, flag = advance(s.q.copy(), s.qd.copy(), s.anchors, s.anchored,
                                  np.asarray(tau, dtype=float), float(push_force), int(push_steps),
                                  int(n_steps), self.model.limb_array, self.model.torso_array,
                                  self.model.gravity, self._xs, self._hs, self._mus, self._cp,
                                  self.dt, QD_LIMIT)
        if flag:
            raise NumericalBlowup(f"generalized velocity left the sanity bound near t={s.t:.4f} s")
        s.q, s.qd = q, qd
        s.t = s.t + n_steps * self.dt
        s.f_c = self.contact_forces()
        return s


def step(model: RobotModel, state: SimState, tau, terrain: Terrain | None = None,
         dt: float = PHYSICS_DT, contact: ContactParams | None = None, f_push: float = 0.0) -> SimState:
    """One physics step from a copy of ``state``."""
    sim = Simulator(model, state.copy(), terrain, contact, dt)
    return sim.advance(tau, 1, f_push, 1 if f_push else 0)


def contact_forces(model: RobotModel, state: SimState, terrain: Terrain | None = None,
                   contact: ContactParams | None = None) -> tuple[np.ndarray, tuple[bool, bool]]:
    terrain = terrain or Terrain.flat()
    cp = (contact or ContactParams()).packed()
    xs, hs, mus = terrain.arrays()
    f = _foot_forces_now(state.q, state.qd, state.anchors, state.anchored, model.limb_array, xs, hs, mus, cp)
    return f, (bool(f[1] > 0), bool(f[3] > 0))


def total_energy(model: RobotModel, q, qd) -> float:
    M = _kernels.crba(np.asarray(q, dtype=float), model.limb_array, model.torso_array)
    com = _kernels.center_of_mass(np.asarray(q, dtype=float), model.limb_array, model.torso_array)
    return float(0.5 * qd @ M @ qd + model.total_mass * model.gravity * com[1])


def settle_on_ground(model: RobotModel, q, terrain: Terrain | None = None,
                     contact: ContactParams | None = None) -> np.ndarray:
    """Lower the base so the static penetration under both feet carries the weight."""
    q = np.array(q, dtype=float)
    k = (contact or ContactParams()).stiffness
    pos, _, _, _ = _kernels.foot_terms(q, np.zeros(NQ), model.limb_array)
    terrain = terrain or Terrain.flat()
    ground = max(terrain.height(p[0]) for p in pos)
    pen = model.total_mass * model.gravity / (2 * k)
    q[1] += ground - pos[:, 1].min() - pen
    return q


LOG_HEADER = (["t"] + [f"q{i}" for i in range(NQ)] + [f"qd{i}" for i in range(NQ)]
              + ["fx0", "fz0", "fx1", "fz1", "contact0", "contact1", "push"])


class TrajectoryLog:
    def __init__(self):
        self.rows: list[list[float]] = []

    def record(self, s: SimState, push: float = 0.0) -> None:
        self.rows.append([s.t, *s.q, *s.qd, *s.f_c, float(s.f_c[1] > 0), float(s.f_c[3] > 0), push])

    def array(self) -> np.ndarray:
        return np.array(self.rows).reshape(-1, len(LOG_HEADER))

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            for r in self.rows:
                w.writerow([repr(float(v)) for v in r])
