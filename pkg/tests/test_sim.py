from __future__ import annotations

import numpy as np
import pytest

from mftwbc import _kernels, sim
from mftwbc.exceptions import NumericalBlowup
from mftwbc.model import NQ, loop_constraints, standing_q

from helpers import consistent_state

FAR_BELOW = sim.Terrain.flat(height=-100.0)


def _airborne(model, qd=None):
    q = standing_q(model, 0.4)
    q[1] = 1.0
    return sim.SimState(q, np.zeros(NQ) if qd is None else qd)


def test_free_fall(model):
    s = sim.Simulator(model, _airborne(model), FAR_BELOW)
    z0 = s.state.q[1]
    for k in range(1, 6):
        s.advance(np.zeros(4), 500)
        t = k * 0.1
        assert abs(s.state.q[1] - (z0 - 0.5 * model.gravity * t * t)) < 1e-6


def _swing_state(model):
    rng = np.random.default_rng(0)
    q, qd = consistent_state(model, rng, speed=1.5)
    q[1] = 5.0
    return sim.SimState(q, qd)


def test_passive_swing_energy_and_closure(model):
    st = _swing_state(model)
    E0 = sim.total_energy(model, st.q, st.qd)
    s = sim.Simulator(model, st, FAR_BELOW)
    for _ in range(10):
        s.advance(np.zeros(4), 500)
        phi, _, _ = loop_constraints(model, s.state.q)
        assert np.abs(phi).max() < 1e-5
    assert abs(sim.total_energy(model, s.state.q, s.state.qd) - E0) < 1e-3


def test_step_refinement(model):
    ends = []
    for dt in (2e-4, 1e-4):
        s = sim.Simulator(model, _swing_state(model), FAR_BELOW, dt=dt)
        s.advance(np.zeros(4), int(round(1.0 / dt)))
        ends.append(s.state.q.copy())
    assert np.abs(ends[0] - ends[1])[:2].max() < 1e-4


def test_step_function_is_pure(model):
    st = _airborne(model)
    q0 = st.q.copy()
    nxt = sim.step(model, st, np.zeros(4), FAR_BELOW)
    assert np.array_equal(st.q, q0) and nxt.t == pytest.approx(sim.PHYSICS_DT)


def test_contact_above_ground_is_zero(model):
    f, flags = sim.contact_forces(model, _airborne(model))
    assert np.all(f == 0.0) and flags == (False, False)


def test_static_penetration(model):
    q = standing_q(model, 0.4)
    delta = 1e-3
    q[1] -= delta
    f, flags = sim.contact_forces(model, sim.SimState(q, np.zeros(NQ)))
    k = sim.ContactParams().stiffness
    assert f[1] == pytest.approx(k * delta, rel=1e-12) and f[3] == pytest.approx(k * delta, rel=1e-12)
    assert flags == (True, True)


def test_sliding_friction_saturates(model):
    q = standing_q(model, 0.4)
    q[1] -= 1e-3
    qd = np.zeros(NQ)
    qd[0] = 5.0
    st = sim.SimState(q, qd)
    # anchors a long way behind the feet: the tangential spring is saturated
    pos, _, _, _ = _kernels.foot_terms(q, qd, model.limb_array)
    st.anchors = pos[:, 0] - 1.0
    st.anchored = np.ones(2, dtype=bool)
    mu = 0.8
    f, _ = sim.contact_forces(model, st, sim.Terrain.flat(mu))
    for i in range(2):
        assert abs(f[2 * i]) == pytest.approx(mu * f[2 * i + 1], rel=1e-3)
        assert f[2 * i] < 0


def test_no_attraction(model):
    q = standing_q(model, 0.4)
    q[1] -= 1e-4
    qd = np.zeros(NQ)
    qd[1] = 3.0
    f, _ = sim.contact_forces(model, sim.SimState(q, qd))
    assert f[1] >= 0.0 and f[3] >= 0.0


def test_push_event():
    ev = sim.PushEvent(3.0, spread=0.01)
    assert ev.force == pytest.approx(300.0)
    assert sim.apply_push(ev, 1.0, 1.005)[0] == pytest.approx(300.0)
    assert sim.apply_push(ev, 1.0, 1.011)[0] == 0.0
    with pytest.raises(ValueError):
        sim.PushEvent(1.0, spread=0.0)


def test_push_momentum(model):
    st = _airborne(model)
    s = sim.Simulator(model, st, FAR_BELOW)
    I = 3.0
    steps = int(round(0.01 / s.dt))
    force = I / (steps * s.dt)
    p0 = (_kernels.crba(st.q, model.limb_array, model.torso_array)[0] @ st.qd)
    s.advance(np.zeros(4), steps, force, steps)
    p1 = (_kernels.crba(s.state.q, model.limb_array, model.torso_array)[0] @ s.state.qd)
    assert force * steps * s.dt == pytest.approx(I, abs=1e-9)
    assert p1 - p0 == pytest.approx(I, abs=1e-6)


def test_blowup_detected(model):
    st = _airborne(model)
    s = sim.Simulator(model, st, FAR_BELOW)
    with pytest.raises(NumericalBlowup):
        s.advance(np.full(4, 1e9), 50)


def test_deterministic(model):
    out = []
    for _ in range(2):
        s = sim.Simulator(model, _swing_state(model), sim.Terrain.flat())
        s.advance(np.array([1.0, -1.0, 0.5, 0.0]), 2000)
        out.append(s.state.q.copy())
    assert np.array_equal(out[0], out[1])


def test_terrain_validation_and_height():
    t = sim.Terrain((0.0, 1.0, 2.0), (0.0, 0.1, 0.1), (0.8, 0.5))
    assert t.height(0.5) == pytest.approx(0.05)
    assert t.height(-3.0) == 0.0 and t.height(5.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        sim.Terrain((0.0, 1.0), (0.0,), (0.8,))


def test_trajectory_log(model, tmp_path):
    log = sim.TrajectoryLog()
    log.record(_airborne(model), 0.0)
    log.write(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == sim.LOG_HEADER and len(lines) == 2
