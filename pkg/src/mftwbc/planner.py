"""Gait timing and reference generation for stepping and walking.

The base is only planned in height and pitch; its sagittal motion is left to
the passive dynamics and regulated through the landing position of the swing
foot.  The landing position follows a discrete P-type law on the predicted
pre-impact CoM state, and the swing foot follows cubic splines towards it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Phase


@dataclass(frozen=True)
class Command:
    height: float
    speed: float = 0.0


@dataclass(frozen=True)
class PlannerConfig:
    step_duration: float = 0.35
    apex: float = 0.06
    k_v: float = 0.16
    k_p: float = 0.08
    touchdown_force: float = 5.0
    touchdown_hold: float = 0.002
    min_swing_fraction: float = 0.5
    late_descent_speed: float = 0.2
    max_step: float = 1.0
    speed_map: str = "constant"

    def __post_init__(self):
        if self.speed_map not in ("constant", "lip"):
            raise ValueError("speed_map must be 'constant' or 'lip'")

    @classmethod
    def from_dict(cls, d: dict | None) -> PlannerConfig:
        return cls(**(d or {}))


def base_reference(command: Command) -> tuple[float, float]:
    """Base height and pitch references; the sagittal position is left unplanned."""
    return command.height, 0.0


def _lip_omega(height: float, gravity: float) -> float:
    return math.sqrt(max(gravity, 0.0) / height) if height > 0 else 0.0


def lip_flow(x: float, xd: float, omega: float, T: float) -> tuple[float, float]:
    """Linear inverted pendulum flow of ``(x, xd)`` about the origin for ``T`` seconds."""
    if T <= 0.0:
        return x, xd
    wt = omega * T
    if wt < 1e-8:
        return x + xd * T, xd
    c, s = math.cosh(wt), math.sinh(wt)
    return x * c + xd / omega * s, x * omega * s + xd * c


def predict_preimpact_com(com_x: float, com_xd: float, support_x: float, com_height: float,
                          remaining: float, gravity: float = 9.81) -> tuple[float, float]:
    """CoM state at the scheduled touch-down under the pendulum model about the support foot."""
    x, xd = lip_flow(com_x - support_x, com_xd, _lip_omega(com_height, gravity), max(remaining, 0.0))
    return support_x + x, xd


def foot_placement(x_pre: float, xd_pre: float, xd_target: float, k_v: float = 0.16,
                   k_p: float = 0.08) -> float:
    return x_pre + k_v * xd_pre + k_p * (xd_pre - xd_target)


def desired_preimpact_speed(v_cmd: float, height: float, step_duration: float = 0.35,
                            gravity: float = 9.81, speed_map: str = "lip") -> float:
    """Pre-impact speed target for an average walking speed ``v_cmd``.

    ``"lip"`` uses the symmetric pendulum orbit whose average is ``v_cmd``;
    ``"constant"`` assumes a flat speed profile and returns ``v_cmd``.
    """
    if speed_map == "constant":
        return v_cmd
    h = 0.5 * _lip_omega(height, gravity) * step_duration
    if h < 1e-8:
        return v_cmd
    return v_cmd * h / math.tanh(h)


@dataclass(frozen=True)
class CubicSegment:
    """Cubic on ``[0, T]`` matching position and velocity at both ends."""

    p0: float
    v0: float
    p1: float
    v1: float
    T: float

    def coefficients(self) -> tuple[float, float, float, float]:
        T = self.T
        d = self.p1 - self.p0
        a2 = (3 * d - (2 * self.v0 + self.v1) * T) / T ** 2
        a3 = (-2 * d + (self.v0 + self.v1) * T) / T ** 3
        return self.p0, self.v0, a2, a3

    def __call__(self, t: float) -> tuple[float, float, float]:
        t = min(max(t, 0.0), self.T)
        a0, a1, a2, a3 = self.coefficients()
        return (a0 + a1 * t + a2 * t * t + a3 * t ** 3,
                a1 + 2 * a2 * t + 3 * a3 * t * t,
                2 * a2 + 6 * a3 * t)


@dataclass
class SwingPlan:
    """Swing-foot path from a lift-off pose to a landing target.

    ``x`` is one cubic from the last re-plan instant to touch-down; ``z`` rises
    to the apex at mid-swing and returns to the ground height.
    """

    liftoff: np.ndarray
    target_x: float
    ground_z: float
    apex: float
    duration: float
    x_seg: CubicSegment = field(init=False)
    x_start: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.liftoff = np.asarray(self.liftoff, dtype=float)
        self.x_seg = CubicSegment(float(self.liftoff[0]), 0.0, self.target_x, 0.0, self.duration)
        self.x_start = 0.0

    def retarget(self, t: float, target_x: float) -> None:
        """New landing target; the path stays C1 at ``t``."""
        t = min(max(t, 0.0), self.duration)
        if self.duration - t < 1e-9:
            return
        p, v, _ = self.x_at(t)
        self.x_seg = CubicSegment(p, v, target_x, 0.0, self.duration - t)
        self.x_start = t
        self.target_x = target_x

    def x_at(self, t: float) -> tuple[float, float, float]:
        return self.x_seg(t - self.x_start)

    def z_at(self, t: float) -> tuple[float, float, float]:
        half = 0.5 * self.duration
        top = max(self.liftoff[1], self.ground_z) + self.apex
        if t <= half:
            return CubicSegment(float(self.liftoff[1]), 0.0, top, 0.0, half)(t)
        return CubicSegment(top, 0.0, self.ground_z, 0.0, half)(t - half)

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, xd, xdd = self.x_at(t)
        z, zd, zdd = self.z_at(t)
        return np.array([x, z]), np.array([xd, zd]), np.array([xdd, zdd])


def swing_trajectory(liftoff, target_x: float, apex: float, duration: float, t: float,
                     ground_z: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not 0.0 <= t <= duration:
        raise ValueError("t must lie inside the swing")
    return SwingPlan(liftoff, target_x, ground_z, apex, duration)(t)


@dataclass
class FootReference:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray


@dataclass
class References:
    height: float
    pitch: float
    feet: list
    phases: tuple


class GaitState:
    """Stand / walk state machine with debounced touch-down detection.

    While walking exactly one foot swings.  A step ends when the swing foot's
    vertical force stays above the threshold for the hold time (and at least
    ``min_swing_fraction`` of the nominal duration has passed); the other foot
    lifts off at that instant.
    """

    def __init__(self, config: PlannerConfig | None = None, gravity: float = 9.81):
        self.config = config or PlannerConfig()
        self.gravity = gravity
        self.walking = False
        self.phases = (Phase.STANCE, Phase.STANCE)
        self.step_timer = 0.0
        self.step_count = 0
        self.swing_plan: SwingPlan | None = None
        self.support_pos = [np.zeros(2), np.zeros(2)]
        self._td_time = 0.0
        self.liftoff_event = False
        self.touchdown_event = False
        self.events: list[tuple[float, str, int]] = []

    @property
    def swing_foot(self) -> int | None:
        for i, p in enumerate(self.phases):
            if p is Phase.SWING:
                return i
        return None

    def stand(self, feet_pos) -> None:
        self.walking = False
        self.phases = (Phase.STANCE, Phase.STANCE)
        self.support_pos = [np.array(p, dtype=float) for p in feet_pos]
        self.swing_plan = None

    def start_walking(self, t: float, feet_pos, first_swing: int = 0) -> None:
        self.walking = True
        self.support_pos = [np.array(p, dtype=float) for p in feet_pos]
        self._lift(t, first_swing, feet_pos[first_swing])

    def _lift(self, t: float, foot: int, pos) -> None:
        ph = [Phase.STANCE, Phase.STANCE]
        ph[foot] = Phase.SWING
        self.phases = tuple(ph)
        self.step_timer = 0.0
        self._td_time = 0.0
        pos = np.asarray(pos, dtype=float)
        self.swing_plan = SwingPlan(pos, float(pos[0]), float(self.support_pos[1 - foot][1]),
                                    self.config.apex, self.config.step_duration)
        self.liftoff_event = True
        self.events.append((t, "liftoff", foot))

    def update(self, t: float, dt: float, f_c, feet_pos, com, com_vel, command: Command) -> None:
        """Advance timers, detect touch-down, and re-plan the landing target."""
        self.liftoff_event = False
        self.touchdown_event = False
        if not self.walking:
            return
        cfg = self.config
        self.step_timer += dt
        sw = self.swing_foot
        if f_c[2 * sw + 1] > cfg.touchdown_force and self.step_timer >= cfg.min_swing_fraction * cfg.step_duration:
            self._td_time += dt
        else:
            self._td_time = 0.0
        if self._td_time >= cfg.touchdown_hold - 1e-12:
            self.support_pos[sw] = np.array(feet_pos[sw], dtype=float)
            self.step_count += 1
            self.touchdown_event = True
            self.events.append((t, "touchdown", sw))
            self._lift(t, 1 - sw, feet_pos[1 - sw])
            sw = 1 - sw
        st = 1 - sw
        remaining = cfg.step_duration - self.step_timer
        if remaining > 0.02 * cfg.step_duration:
            x_pre, xd_pre = predict_preimpact_com(com[0], com_vel[0], self.support_pos[st][0], com[1],
                                                  remaining, self.gravity)
            xd_star = desired_preimpact_speed(command.speed, com[1], cfg.step_duration, self.gravity,
                                              cfg.speed_map)
            target = foot_placement(x_pre, xd_pre, xd_star, cfg.k_v, cfg.k_p)
            target = float(np.clip(target, self.support_pos[st][0] - cfg.max_step,
                                   self.support_pos[st][0] + cfg.max_step))
            self.swing_plan.retarget(self.step_timer, target)

    def references(self, command: Command) -> References:
        z, th = base_reference(command)
        feet = []
        for i in range(2):
            if self.phases[i] is Phase.SWING:
                T = self.config.step_duration
                t = self.step_timer
                if t <= T:
                    p, v, a = self.swing_plan(t)
                else:
                    # late touch-down: keep descending slowly
                    p, _, _ = self.swing_plan(T)
                    p = p - np.array([0.0, self.config.late_descent_speed * (t - T)])
                    v = np.array([0.0, -self.config.late_descent_speed])
                    a = np.zeros(2)
                feet.append(FootReference(p, v, a))
            else:
                feet.append(FootReference(self.support_pos[i].copy(), np.zeros(2), np.zeros(2)))
        return References(z, th, feet, self.phases)
