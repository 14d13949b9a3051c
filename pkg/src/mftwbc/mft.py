"""Motion/force transmissibility indices of a planar five-bar leg.

Every limb transmits a pure force along its distal link.  The input
transmission of a limb compares the power of that force on a unit rotation of
the limb's hip with its best possible value; the output transmission compares
its power on the foot motion permitted when the other limb's hip is locked.
The local transmission index is the worst of all of these.

The acceleration capacity index reports the worst hip torque needed to give
the foot an acceleration of a fixed magnitude in any direction, normalized by
the square root of the leg mass.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import SingularLimb, ZeroVector
from .model import LEG_JOINTS, NQ, REAR, RobotModel

SINGULAR_TOL = 1e-9


class ScrewKind(enum.Enum):
    TWIST = "twist"
    WRENCH = "wrench"


@dataclass(frozen=True)
class PlanarScrew:
    """Planar screw ``(w, x, z)`` at the origin.

    For a twist ``w`` is the angular rate and ``(x, z)`` the velocity of the
    body point at the origin; for a wrench ``w`` is the moment about the
    origin and ``(x, z)`` the force.
    """

    kind: ScrewKind
    w: float
    x: float
    z: float

    @classmethod
    def rotation(cls, center, rate: float = 1.0) -> PlanarScrew:
        return cls(ScrewKind.TWIST, rate, rate * center[1], -rate * center[0])

    @classmethod
    def force(cls, point, direction) -> PlanarScrew:
        return cls(ScrewKind.WRENCH, point[0] * direction[1] - point[1] * direction[0],
                   direction[0], direction[1])

    def reciprocal(self, other: PlanarScrew) -> float:
        if {self.kind, other.kind} != {ScrewKind.TWIST, ScrewKind.WRENCH}:
            raise ValueError("reciprocal product needs one twist and one wrench")
        return self.w * other.w + self.x * other.x + self.z * other.z


def power_efficiency(f, v) -> float:
    """``|f . v| / (|f| |v|)``: the sine of the transmission angle."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    nf, nv = np.linalg.norm(f), np.linalg.norm(v)
    if nf == 0.0 or nv == 0.0:
        raise ZeroVector("power efficiency is undefined for a zero vector")
    return float(min(1.0, abs(f @ v) / (nf * nv)))


@dataclass(frozen=True)
class LimbTransmission:
    wrench: PlanarScrew
    input_twist: PlanarScrew
    output_twist: PlanarScrew
    P_I: float
    P_O: float
    P_I_max: float
    P_O_max: float

    @property
    def input_ratio(self) -> float:
        return self.P_I / self.P_I_max

    @property
    def output_ratio(self) -> float:
        return self.P_O / self.P_O_max


@dataclass(frozen=True)
class MftIndices:
    gamma_I: float
    gamma_O: float
    gamma_LTI: float
    gamma_RACI: float = float("nan")
    singular: bool = False


def _leg_geometry(model: RobotModel, cfg, leg: int):
    """Hip anchors, knees and distal endpoints of a leg (base frame)."""
    q = np.zeros(NQ)
    q[LEG_JOINTS[leg]] = cfg
    knee, end = _kernels.limb_points_base(q, model.limb_array)
    hips = np.array([model.limbs[2 * leg + s].hip_anchor for s in range(2)], dtype=float)
    return hips, knee[2 * leg:2 * leg + 2], end[2 * leg:2 * leg + 2]


def limb_transmission(model: RobotModel, cfg, limb: int, leg: int = 0) -> LimbTransmission:
    """Transmission wrench, permitted twists and powers of one limb (``REAR`` or ``FORE``)."""
    hips, knees, ends = _leg_geometry(model, cfg, leg)
    other = 1 - limb
    d = ends[limb] - knees[limb]
    nd = math.hypot(d[0], d[1])
    if nd < 1e-12:
        raise SingularLimb("distal link line is undefined")
    e = d / nd
    foot = 0.5 * (ends[0] + ends[1])
    T = PlanarScrew.force(knees[limb], e)
    I = PlanarScrew.rotation(hips[limb])
    O = PlanarScrew.rotation(knees[other])
    # maxima over the phase of the force line at fixed magnitudes: force normal to the radius
    P_I_max = float(np.linalg.norm(knees[limb] - hips[limb]))
    P_O_max = float(np.linalg.norm(foot - knees[other]))
    if P_I_max < 1e-12 or P_O_max < 1e-12:
        raise SingularLimb("zero lever arm for the permitted twist")
    return LimbTransmission(T, I, O, abs(T.reciprocal(I)), abs(T.reciprocal(O)), P_I_max, P_O_max)


def lti(model: RobotModel, cfg, leg: int = 0) -> MftIndices:
    """Input, output and local transmission indices of a leg configuration ``[a_r, k_r, a_f, k_f]``."""
    try:
        limbs = [limb_transmission(model, cfg, s, leg) for s in range(2)]
    except SingularLimb:
        return MftIndices(0.0, 0.0, 0.0, singular=True)
    g_i = min(1.0, min(t.input_ratio for t in limbs))
    g_o = min(1.0, min(t.output_ratio for t in limbs))
    g = min(g_i, g_o)
    return MftIndices(g_i, g_o, g, singular=g <= SINGULAR_TOL)


def leg_torque_map(model: RobotModel, cfg, leg: int = 0) -> np.ndarray:
    """2x2 map from foot acceleration to hip torques ``(rear, fore)``.

    Leg-only inverse dynamics with the base fixed, zero joint velocity and no
    gravity.  Raises ``SingularLimb`` where the map is unbounded.
    """
    idx = LEG_JOINTS[leg]
    q = np.zeros(NQ)
    q[idx] = cfg
    M = _kernels.crba(q, model.limb_array, model.torso_array)[np.ix_(idx, idx)]
    _, Jh, _ = _kernels.closure_terms(q, np.zeros(NQ), model.limb_array)
    _, _, Jc, _ = _kernels.foot_terms(q, np.zeros(NQ), model.limb_array)
    Jh = Jh[2 * leg:2 * leg + 2][:, idx]
    Jf = Jc[2 * leg:2 * leg + 2][:, idx]
    K = np.vstack([Jh, Jf])
    if np.linalg.cond(K) > 1e12:
        raise SingularLimb("foot acceleration is not realizable at this configuration")
    # joint accelerations for unit foot accelerations, closure held
    Qdd = np.linalg.solve(K, np.vstack([np.zeros((2, 2)), np.eye(2)]))
    # M qdd = J_h^T f_h + S^T tau  ->  [J_h^T  S^T] [f_h; tau] = M qdd
    S = np.zeros((2, 4))
    S[0, 0] = S[1, 2] = 1.0
    B = np.hstack([Jh.T, S.T])
    sol = np.linalg.solve(B, M @ Qdd)
    return sol[2:]


def raci(model: RobotModel, cfg, a_max: float, leg: int = 0) -> float:
    """Worst-case normalized hip torque for a foot acceleration of magnitude ``a_max`` (N/sqrt(kg))."""
    value, _ = raci_worst_direction(model, cfg, a_max, leg)
    return value


def raci_worst_direction(model: RobotModel, cfg, a_max: float, leg: int = 0) -> tuple[float, np.ndarray]:
    try:
        T = leg_torque_map(model, cfg, leg)
    except SingularLimb:
        return math.inf, np.array([0.0, 1.0])
    norms = np.linalg.norm(T, axis=1)
    j = int(np.argmax(norms))
    m_leg = model.leg_masses[leg]
    direction = T[j] / norms[j] if norms[j] > 0 else np.array([1.0, 0.0])
    return float(a_max * norms[j] / math.sqrt(m_leg)), direction


def indices(model: RobotModel, cfg, a_max: float, leg: int = 0) -> MftIndices:
    base = lti(model, cfg, leg)
    g_r = math.inf if base.singular else raci(model, cfg, a_max, leg)
    return MftIndices(base.gamma_I, base.gamma_O, base.gamma_LTI, g_r, base.singular)


__all__ = [
    "PlanarScrew", "ScrewKind", "LimbTransmission", "MftIndices", "power_efficiency",
    "limb_transmission", "lti", "raci", "raci_worst_direction", "leg_torque_map", "indices", "REAR",
]
