"""Planar parallel-legged biped: parameters, state and kinematics.

Each leg is a five-bar linkage: a rear and a fore limb hang from hip anchors
on the torso, each made of an actuated proximal link and a passive distal
link.  The two distal endpoints meet at the foot.  The dynamics work on the
tree obtained by cutting each loop at the foot; the loops come back through
the closure constraint ``phi(q) = 0``.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import _kernels
from .exceptions import NoClosure, OutOfReach, SchemaMismatch

SCHEMA_VERSION = 1

NQ = 11
BASE = np.array([0, 1, 2])
ACTUATED = np.array([3, 5, 7, 9])
PASSIVE = np.array([4, 6, 8, 10])
LEG_JOINTS = (np.array([3, 4, 5, 6]), np.array([7, 8, 9, 10]))
REAR, FORE = 0, 1

CLOSURE_TOL = 1e-6

_DATA = Path(__file__).parent / "data"
REFERENCE_MODEL_PATH = _DATA / "reference_model.yaml"


class Phase(enum.Enum):
    SWING = "swing"
    STANCE = "stance"


@dataclass(frozen=True)
class LimbParams:
    hip_anchor: tuple[float, float]
    proximal_length: float
    distal_length: float
    proximal_mass: float
    distal_mass: float
    proximal_inertia: float
    distal_inertia: float
    proximal_com: float
    distal_com: float

    def as_row(self) -> list[float]:
        return [
            self.hip_anchor[0], self.hip_anchor[1],
            self.proximal_length, self.distal_length,
            self.proximal_com, self.distal_com,
            self.proximal_mass, self.distal_mass,
            self.proximal_inertia, self.distal_inertia,
        ]


@dataclass(frozen=True)
class ActuatorSpec:
    tau_max: float
    rated_speed: float


@dataclass(frozen=True)
class RobotModel:
    """Geometry, inertia and actuation of the planar biped.

    ``limbs`` holds four entries ordered leg0-rear, leg0-fore, leg1-rear,
    leg1-fore.  Joint limits are per generalized coordinate; the base entries
    are unbounded.
    """

    name: str
    torso_mass: float
    torso_inertia: float
    torso_com: tuple[float, float]
    limbs: tuple[LimbParams, LimbParams, LimbParams, LimbParams]
    actuator: ActuatorSpec
    q_min: tuple[float, ...]
    q_max: tuple[float, ...]
    gravity: float = 9.81
    boom_planar: bool = True

    def __post_init__(self):
        lengths = [v for lp in self.limbs for v in (lp.proximal_length, lp.distal_length)]
        masses = [v for lp in self.limbs for v in (lp.proximal_mass, lp.distal_mass)]
        if min(lengths) <= 0 or min(masses) <= 0 or self.torso_mass <= 0:
            raise ValueError("link lengths and masses must be strictly positive")
        if len(self.q_min) != NQ or len(self.q_max) != NQ:
            raise ValueError("joint limits need one entry per generalized coordinate")

    # -- derived quantities -------------------------------------------------
    @cached_property
    def limb_array(self) -> np.ndarray:
        return np.array([lp.as_row() for lp in self.limbs], dtype=float)

    @cached_property
    def torso_array(self) -> np.ndarray:
        return np.array([self.torso_mass, self.torso_inertia, *self.torso_com], dtype=float)

    @property
    def leg_masses(self) -> tuple[float, float]:
        m = [lp.proximal_mass + lp.distal_mass for lp in self.limbs]
        return m[0] + m[1], m[2] + m[3]

    @property
    def total_mass(self) -> float:
        return self.torso_mass + sum(self.leg_masses)

    @property
    def leg_mass_ratio(self) -> float:
        return sum(self.leg_masses) / self.torso_mass

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array(self.q_min, dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array(self.q_max, dtype=float)

    @property
    def tau_limits(self) -> np.ndarray:
        return np.full(4, self.actuator.tau_max)

    def with_gravity(self, g: float) -> RobotModel:
        return replace(self, gravity=g)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        def limb(lp: LimbParams) -> dict:
            return {
                "hip_anchor": list(lp.hip_anchor),
                "proximal": {"length": lp.proximal_length, "mass": lp.proximal_mass,
                             "inertia": lp.proximal_inertia, "com": lp.proximal_com},
                "distal": {"length": lp.distal_length, "mass": lp.distal_mass,
                           "inertia": lp.distal_inertia, "com": lp.distal_com},
            }

        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "gravity": self.gravity,
            "torso": {"mass": self.torso_mass, "inertia": self.torso_inertia,
                      "com": list(self.torso_com), "boom_planar": self.boom_planar},
            "legs": [
                {"rear": limb(self.limbs[2 * i]), "fore": limb(self.limbs[2 * i + 1])}
                for i in range(2)
            ],
            "actuator": {"tau_max": self.actuator.tau_max,
                         "rated_speed": self.actuator.rated_speed},
            "joint_limits": {"q_min": [_num(v) for v in self.q_min],
                             "q_max": [_num(v) for v in self.q_max]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> RobotModel:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported model schema_version {d.get('schema_version')!r}")
        try:
            def limb(e: dict) -> LimbParams:
                return LimbParams(
                    hip_anchor=tuple(float(v) for v in e["hip_anchor"]),
                    proximal_length=float(e["proximal"]["length"]),
                    distal_length=float(e["distal"]["length"]),
                    proximal_mass=float(e["proximal"]["mass"]),
                    distal_mass=float(e["distal"]["mass"]),
                    proximal_inertia=float(e["proximal"]["inertia"]),
                    distal_inertia=float(e["distal"]["inertia"]),
                    proximal_com=float(e["proximal"]["com"]),
                    distal_com=float(e["distal"]["com"]),
                )

            legs = d["legs"]
            limbs = tuple(limb(legs[i][side]) for i in range(2) for side in ("rear", "fore"))
            lim = d["joint_limits"]
            return cls(
                name=str(d.get("name", "model")),
                torso_mass=float(d["torso"]["mass"]),
                torso_inertia=float(d["torso"]["inertia"]),
                torso_com=tuple(float(v) for v in d["torso"]["com"]),
                limbs=limbs,
                actuator=ActuatorSpec(float(d["actuator"]["tau_max"]),
                                      float(d["actuator"]["rated_speed"])),
                q_min=tuple(_parse_num(v) for v in lim["q_min"]),
                q_max=tuple(_parse_num(v) for v in lim["q_max"]),
                gravity=float(d.get("gravity", 9.81)),
                boom_planar=bool(d["torso"].get("boom_planar", True)),
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise SchemaMismatch(f"malformed model config: {exc}") from exc

    @cached_property
    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> RobotModel:
        data = yaml.safe_load(Path(path).read_text())
        if not isinstance(data, dict):
            raise SchemaMismatch(f"{path}: not a mapping")
        return cls.from_dict(data)


def _num(v: float):
    return v if math.isfinite(v) else (".inf" if v > 0 else "-.inf")


def _parse_num(v) -> float:
    # YAML writes infinite limits as the strings ".inf" / "-.inf"
    return float(v.replace(".inf", "inf")) if isinstance(v, str) else float(v)


def reference_model() -> RobotModel:
    return RobotModel.load(REFERENCE_MODEL_PATH)


@dataclass
class GeneralizedState:
    q: np.ndarray
    qd: np.ndarray
    contact: tuple[Phase, Phase] = (Phase.STANCE, Phase.STANCE)
    t: float = 0.0

    def copy(self) -> GeneralizedState:
        return GeneralizedState(self.q.copy(), self.qd.copy(), self.contact, self.t)

    def closure_residual(self, model: RobotModel) -> float:
        phi, _, _ = _kernels.closure_terms(self.q, self.qd, model.limb_array)
        return float(np.max(np.abs(phi)))

    def is_consistent(self, model: RobotModel, tol: float = CLOSURE_TOL) -> bool:
        return self.closure_residual(model) <= tol


# -- leg-level kinematics (base frame) ---------------------------------------

def _angle(vx: float, vz: float) -> float:
    return math.atan2(vx, -vz)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _limbs(model: RobotModel, leg: int) -> tuple[LimbParams, LimbParams]:
    return model.limbs[2 * leg], model.limbs[2 * leg + 1]


def knee_points(model: RobotModel, hips, leg: int = 0) -> np.ndarray:
    out = np.empty((2, 2))
    for side, lp in enumerate(_limbs(model, leg)):
        a = hips[side]
        out[side] = (lp.hip_anchor[0] + lp.proximal_length * math.sin(a),
                     lp.hip_anchor[1] - lp.proximal_length * math.cos(a))
    return out


def solve_passive_joints(model: RobotModel, hips, leg: int = 0, branch: int = 1) -> np.ndarray:
    """Close the five-bar loop for given hip angles ``(rear, fore)``.

    ``branch = +1`` is the working assembly mode (foot below the line through
    the knees); ``-1`` is its mirror.  Returns ``(rear knee, fore knee)``.
    """
    rear, fore = _limbs(model, leg)
    K = knee_points(model, hips, leg)
    e = K[1] - K[0]
    d = math.hypot(e[0], e[1])
    r0, r1 = rear.distal_length, fore.distal_length
    if d < 1e-12 and r0 == r1 and rear.hip_anchor == fore.hip_anchor:
        # coincident knees: the working branch tends to both limbs stretched
        return np.zeros(2)
    if d == 0.0 or d > r0 + r1 or d < abs(r0 - r1):
        raise NoClosure(f"distal circles do not intersect (knee gap {d:.6g} m)")
    e = e / d
    a = (r0 * r0 - r1 * r1 + d * d) / (2 * d)
    h = math.sqrt(max(r0 * r0 - a * a, 0.0))
    n = np.array([-e[1], e[0]])
    foot = K[0] + a * e - branch * h * n
    knees = np.empty(2)
    for side in range(2):
        v = foot - K[side]
        knees[side] = _wrap(_angle(v[0], v[1]) - hips[side])
    return knees


def leg_config_from_hips(model: RobotModel, hips, leg: int = 0, branch: int = 1) -> np.ndarray:
    knees = solve_passive_joints(model, hips, leg, branch)
    return np.array([hips[0], knees[0], hips[1], knees[1]])


def leg_foot(model: RobotModel, cfg, leg: int = 0) -> np.ndarray:
    """Foot point (mean of both distal endpoints) for a leg config ``[a_r, k_r, a_f, k_f]``."""
    p = np.zeros(2)
    for side, lp in enumerate(_limbs(model, leg)):
        a, k = cfg[2 * side], cfg[2 * side + 1]
        p += 0.5 * np.array([
            lp.hip_anchor[0] + lp.proximal_length * math.sin(a) + lp.distal_length * math.sin(a + k),
            lp.hip_anchor[1] - lp.proximal_length * math.cos(a) - lp.distal_length * math.cos(a + k),
        ])
    return p


def leg_inverse_config(model: RobotModel, foot, leg: int = 0, check_limits: bool = True) -> np.ndarray:
    """Full leg config ``[a_r, k_r, a_f, k_f]`` on the working branch for a base-frame foot point."""
    foot = np.asarray(foot, dtype=float)
    cfg = np.empty(4)
    for side, lp in enumerate(_limbs(model, leg)):
        v = foot - np.asarray(lp.hip_anchor)
        D = math.hypot(v[0], v[1])
        l1, l2 = lp.proximal_length, lp.distal_length
        if D > l1 + l2 or D < abs(l1 - l2) or D == 0.0:
            raise OutOfReach(f"foot {foot} outside limb reach (distance {D:.6g} m)")
        c = (l1 * l1 + D * D - l2 * l2) / (2 * l1 * D)
        alpha = math.acos(min(1.0, max(-1.0, c)))
        # knees point outward: rear limb rotates clockwise from the hip-foot line
        sign = -1.0 if side == REAR else 1.0
        a = _angle(v[0], v[1]) + sign * alpha
        knee = np.array([lp.hip_anchor[0] + l1 * math.sin(a), lp.hip_anchor[1] - l1 * math.cos(a)])
        w = foot - knee
        cfg[2 * side] = _wrap(a)
        cfg[2 * side + 1] = _wrap(_angle(w[0], w[1]) - a)
    K = knee_points(model, cfg[[0, 2]], leg)
    e = K[1] - K[0]
    f = foot - K[0]
    if e[0] * f[1] - e[1] * f[0] >= 0.0:
        raise OutOfReach(f"foot {foot} is not on the working assembly branch")
    if check_limits:
        idx = LEG_JOINTS[leg]
        if np.any(cfg < model.lower[idx]) or np.any(cfg > model.upper[idx]):
            raise OutOfReach(f"foot {foot} needs joint angles outside the limits")
    return cfg


def leg_inverse_kinematics(model: RobotModel, foot, leg: int = 0) -> np.ndarray:
    """Hip angles ``(rear, fore)`` that place the foot at a base-frame point."""
    cfg = leg_inverse_config(model, foot, leg)
    return cfg[[0, 2]]


def leg_forward_kinematics(model: RobotModel, hips, leg: int = 0) -> np.ndarray:
    return leg_foot(model, leg_config_from_hips(model, hips, leg), leg)


def mirror_leg_config(cfg) -> np.ndarray:
    """Reflect a leg configuration across the vertical through the hip midpoint."""
    a_r, k_r, a_f, k_f = cfg
    return np.array([-a_f, -k_f, -a_r, -k_r])


def mirror_state(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[0] = -q[0]
    out[2] = -q[2]
    for idx in LEG_JOINTS:
        out[idx] = mirror_leg_config(q[idx])
    return out


# -- whole-robot kinematics --------------------------------------------------

def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def assemble_q(model: RobotModel, base_pose, feet_base) -> np.ndarray:
    """Generalized coordinates from a base pose and base-frame foot points."""
    q = np.zeros(NQ)
    q[:3] = base_pose
    for leg in range(2):
        q[LEG_JOINTS[leg]] = leg_inverse_config(model, feet_base[leg], leg)
    return q


def standing_q(model: RobotModel, height: float, stance_x: float = 0.0,
               pitch: float = 0.0, x: float = 0.0) -> np.ndarray:
    """Level standing pose with both feet on the ground below the hips."""
    R = rotation(pitch)
    feet = []
    for _ in range(2):
        world = np.array([stance_x, -height])
        feet.append(R.T @ world)
    return assemble_q(model, [x, height, pitch], feet)


def forward_kinematics(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """World foot points ``(2, 2)`` and the base pose ``(x, z, pitch)``."""
    q = np.asarray(q, dtype=float)
    pos, _, _, _ = _kernels.foot_terms(q, np.zeros(NQ), model.limb_array)
    return pos, q[:3].copy()


@dataclass
class TaskKinematics:
    """Task values, Jacobians and drift terms ``Jdot qd`` at one state."""

    base_height: float
    base_pitch: float
    feet: np.ndarray
    feet_vel: np.ndarray
    J_height: np.ndarray = field(repr=False)
    J_pitch: np.ndarray = field(repr=False)
    J_feet: np.ndarray = field(repr=False)
    drift_feet: np.ndarray = field(repr=False)

    @property
    def J_c(self) -> np.ndarray:
        return self.J_feet

    def foot_rows(self, leg: int) -> slice:
        return slice(2 * leg, 2 * leg + 2)


def task_jacobians(model: RobotModel, q, qd=None) -> TaskKinematics:
    q = np.asarray(q, dtype=float)
    qd = np.zeros(NQ) if qd is None else np.asarray(qd, dtype=float)
    pos, vel, J, drift = _kernels.foot_terms(q, qd, model.limb_array)
    Jz = np.zeros(NQ)
    Jz[1] = 1.0
    Jt = np.zeros(NQ)
    Jt[2] = 1.0
    return TaskKinematics(q[1], q[2], pos, vel, Jz, Jt, J, drift)


def loop_constraints(model: RobotModel, q, qd=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closure gap ``phi`` (4), its Jacobian ``J_h`` (4x11) and ``Jdot_h qd`` (4)."""
    q = np.asarray(q, dtype=float)
    qd = np.zeros(NQ) if qd is None else np.asarray(qd, dtype=float)
    return _kernels.closure_terms(q, qd, model.limb_array)


def link_frames(model: RobotModel, q) -> list[dict]:
    """Per-body world COM and absolute angle, used for energy bookkeeping and plots."""
    q = np.asarray(q, dtype=float)
    R = rotation(q[2])
    base = q[:2]
    out = [{"name": "torso", "mass": model.torso_mass, "inertia": model.torso_inertia,
            "com": base + R @ np.asarray(model.torso_com), "angle": q[2]}]
    for l, lp in enumerate(model.limbs):
        a = q[2] + q[3 + 2 * l]
        b = a + q[4 + 2 * l]
        hip = base + R @ np.asarray(lp.hip_anchor)
        u = np.array([math.sin(a), -math.cos(a)])
        v = np.array([math.sin(b), -math.cos(b)])
        knee = hip + lp.proximal_length * u
        out.append({"name": f"limb{l}_proximal", "mass": lp.proximal_mass,
                    "inertia": lp.proximal_inertia, "com": hip + lp.proximal_com * u, "angle": a})
        out.append({"name": f"limb{l}_distal", "mass": lp.distal_mass,
                    "inertia": lp.distal_inertia, "com": knee + lp.distal_com * v, "angle": b})
    return out


def center_of_mass(model: RobotModel, q, qd=None, h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Whole-body CoM position and velocity (velocity by central difference along ``qd``)."""
    q = np.asarray(q, dtype=float)

    def com(qq):
        frames = link_frames(model, qq)
        m = sum(f["mass"] for f in frames)
        return sum(f["mass"] * f["com"] for f in frames) / m

    c = com(q)
    if qd is None:
        return c, np.zeros(2)
    qd = np.asarray(qd, dtype=float)
    v = (com(q + h * qd) - com(q - h * qd)) / (2 * h)
    return c, v
