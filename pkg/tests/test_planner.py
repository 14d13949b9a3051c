from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mftwbc.model import Phase
from mftwbc.planner import (Command, CubicSegment, GaitState, PlannerConfig, SwingPlan, base_reference,
                            desired_preimpact_speed, foot_placement, lip_flow, predict_preimpact_com,
                            swing_trajectory)


@pytest.mark.parametrize("h", [0.40, 0.44])
def test_base_reference(h):
    assert base_reference(Command(h, 0.3)) == (h, 0.0)


def test_prediction_limits():
    assert predict_preimpact_com(0.1, 0.0, 0.1, 0.4, 0.0) == (0.1, 0.0)
    x, xd = predict_preimpact_com(0.2, 0.5, 0.0, 0.4, 0.3, gravity=0.0)
    assert (x, xd) == pytest.approx((0.2 + 0.5 * 0.3, 0.5))


def test_lip_flow_matches_ode():
    from scipy.integrate import solve_ivp
    w = math.sqrt(9.81 / 0.4)
    sol = solve_ivp(lambda t, y: [y[1], w * w * y[0]], (0, 0.3), [0.02, -0.1], rtol=1e-12, atol=1e-14)
    assert lip_flow(0.02, -0.1, w, 0.3) == pytest.approx(tuple(sol.y[:, -1]), abs=1e-9)


def test_foot_placement():
    assert PlannerConfig().k_v == 0.16 and PlannerConfig().k_p == 0.08
    assert foot_placement(0.3, 0.0, 0.0) == 0.3
    assert foot_placement(0.3, 1.0, 1.0) == pytest.approx(0.46)


def test_desired_speed():
    assert desired_preimpact_speed(0.0, 0.4) == 0.0
    v = [desired_preimpact_speed(s, 0.4) for s in np.linspace(-0.5, 0.5, 21)]
    assert np.all(np.diff(v) > 0)


def test_swing_boundaries():
    lift = np.array([0.05, 0.0])
    p, v, _ = swing_trajectory(lift, 0.25, 0.06, 0.35, 0.0)
    np.testing.assert_allclose(p, lift)
    assert v[0] == 0.0
    p, v, _ = swing_trajectory(lift, 0.25, 0.06, 0.35, 0.35)
    np.testing.assert_allclose(p, [0.25, 0.0], atol=1e-15)
    assert v[0] == pytest.approx(0.0, abs=1e-12)
    p, _, _ = swing_trajectory(lift, 0.25, 0.06, 0.35, 0.175)
    assert p[1] == pytest.approx(0.06)
    with pytest.raises(ValueError):
        swing_trajectory(lift, 0.25, 0.06, 0.35, 0.4)


def test_retarget_continuity():
    plan = SwingPlan(np.array([0.0, 0.0]), 0.2, 0.0, 0.06, 0.35)
    before = plan.x_at(0.175)
    plan.retarget(0.175, 0.35)
    after = plan.x_at(0.175)
    assert after[0] == pytest.approx(before[0], abs=1e-15)
    assert after[1] == pytest.approx(before[1], abs=1e-12)
    assert plan.x_at(0.35)[0] == pytest.approx(0.35)


@settings(max_examples=100, deadline=None)
@given(p0=st.floats(-1, 1), v0=st.floats(-2, 2), p1=st.floats(-1, 1), v1=st.floats(-2, 2),
       T=st.floats(0.05, 1.0))
def test_cubic_boundary_conditions(p0, v0, p1, v1, T):
    c = CubicSegment(p0, v0, p1, v1, T)
    a = c(0.0)
    b = c(T)
    assert a[0] == pytest.approx(p0, abs=1e-12) and a[1] == pytest.approx(v0, abs=1e-12)
    assert b[0] == pytest.approx(p1, abs=1e-9) and b[1] == pytest.approx(v1, abs=1e-9)


def _feet():
    return [np.array([0.0, 0.0]), np.array([0.0, 0.0])]


def test_gait_phases_and_touchdown():
    g = GaitState()
    g.stand(_feet())
    assert g.phases == (Phase.STANCE, Phase.STANCE) and g.swing_foot is None
    g.start_walking(0.0, _feet(), 0)
    assert g.phases == (Phase.SWING, Phase.STANCE)
    cmd = Command(0.4)
    com, vel = np.array([0.0, 0.4]), np.zeros(2)
    dt = 1e-3
    t = 0.0
    # early contact is ignored, the debounced one after half the step is accepted
    for _ in range(100):
        t += dt
        g.update(t, dt, [0.0, 50.0, 0.0, 100.0], _feet(), com, vel, cmd)
    assert g.swing_foot == 0 and g.step_count == 0
    for _ in range(100):
        t += dt
        g.update(t, dt, [0.0, 50.0, 0.0, 100.0], _feet(), com, vel, cmd)
        if g.touchdown_event:
            break
    assert g.step_count == 1 and g.swing_foot == 1
    assert sum(p is Phase.SWING for p in g.phases) == 1


def test_late_touchdown_keeps_descending():
    g = GaitState()
    g.start_walking(0.0, _feet(), 0)
    cmd = Command(0.4)
    t, dt = 0.0, 1e-3
    for _ in range(400):
        t += dt
        g.update(t, dt, np.zeros(4), _feet(), np.array([0.0, 0.4]), np.zeros(2), cmd)
    r = g.references(cmd)
    assert r.feet[0].pos[1] < 0.0 and r.feet[0].vel[1] == -PlannerConfig().late_descent_speed


def test_stepping_in_place_targets_under_com():
    g = GaitState()
    g.start_walking(0.0, _feet(), 0)
    g.update(0.01, 0.01, np.zeros(4), _feet(), np.array([0.0, 0.4]), np.zeros(2), Command(0.4))
    assert g.swing_plan.target_x == pytest.approx(0.0, abs=1e-15)
