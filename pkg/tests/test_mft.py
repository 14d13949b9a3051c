from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mftwbc import mft
from mftwbc.exceptions import ZeroVector
from mftwbc.model import (LEG_JOINTS, NQ, knee_points, leg_inverse_config, loop_constraints,
                          mirror_leg_config)

from helpers import reachable_feet


@pytest.mark.parametrize("f,v,expected", [((1, 0), (2, 0), 1.0), ((1, 0), (0, 3), 0.0),
                                          ((1, 1), (1, 0), math.sqrt(2) / 2)])
def test_power_efficiency_examples(f, v, expected):
    assert mft.power_efficiency(f, v) == pytest.approx(expected, abs=1e-15)


def test_power_efficiency_zero_vector():
    with pytest.raises(ZeroVector):
        mft.power_efficiency((0, 0), (1, 0))


def test_reciprocal_needs_twist_and_wrench():
    t = mft.PlanarScrew.rotation((0.0, 0.0))
    with pytest.raises(ValueError):
        t.reciprocal(t)


def test_right_angle_transmission(model):
    lp = model.limbs[0]
    foot = [0.0, -math.hypot(lp.proximal_length, lp.distal_length)]
    cfg = leg_inverse_config(model, foot)
    assert abs(cfg[1]) == pytest.approx(math.pi / 2, abs=1e-9)
    for limb in range(2):
        t = mft.limb_transmission(model, cfg, limb)
        assert t.P_I == pytest.approx(t.P_I_max, rel=1e-12)


def test_zero_moment_arm(model):
    t = mft.limb_transmission(model, [0.3, 0.0, 0.3, 0.0], mft.REAR)
    assert t.P_I == pytest.approx(0.0, abs=1e-14)


def test_input_power_virtual_work(model):
    rng = np.random.default_rng(0)
    h = 1e-6
    for p in reachable_feet(model, rng, 200):
        cfg = leg_inverse_config(model, p)
        hips = cfg[[0, 2]]
        for limb in range(2):
            t = mft.limb_transmission(model, cfg, limb)
            # knee velocity for a unit hip rate, by differencing the knee position
            dh = np.zeros(2)
            dh[limb] = h
            v_knee = (knee_points(model, hips + dh)[limb] - knee_points(model, hips - dh)[limb]) / (2 * h)
            q = np.zeros(NQ)
            q[LEG_JOINTS[0]] = cfg
            d = np.array([math.sin(cfg[2 * limb] + cfg[2 * limb + 1]), -math.cos(cfg[2 * limb] + cfg[2 * limb + 1])])
            assert t.P_I == pytest.approx(abs(d @ v_knee), rel=1e-8, abs=1e-12)


def _closure_det(model, cfg):
    q = np.zeros(NQ)
    q[LEG_JOINTS[0]] = cfg
    _, J, _ = loop_constraints(model, q)
    return abs(np.linalg.det(J[0:2][:, [4, 6]]))


def test_lti_zero_exactly_at_closure_singularity(model):
    for a in np.linspace(-0.8, 0.8, 9):
        cfg = [a, 0.0, a, 0.0]
        assert _closure_det(model, cfg) < 1e-12
        ind = mft.lti(model, cfg)
        assert ind.gamma_LTI == 0.0 and ind.singular
    rng = np.random.default_rng(1)
    for p in reachable_feet(model, rng, 300):
        cfg = leg_inverse_config(model, p)
        if _closure_det(model, cfg) > 1e-6:
            ind = mft.lti(model, cfg)
            assert ind.gamma_LTI > 0 and not ind.singular


def test_lti_range_on_grid(workspace):
    f = workspace.field
    vals = f.lti[f.reachable]
    assert np.all(vals >= 0.0) and np.all(vals <= 1.0)


@settings(max_examples=80, deadline=None)
@given(x=st.floats(-0.3, 0.3), z=st.floats(-0.52, -0.25))
def test_lti_mirror_symmetry(model, x, z):
    try:
        cfg = leg_inverse_config(model, [x, z])
    except Exception:
        return
    a = mft.lti(model, cfg)
    b = mft.lti(model, mirror_leg_config(cfg))
    assert a.gamma_LTI == pytest.approx(b.gamma_LTI, abs=1e-12)


def test_raci_zero_demand(model):
    cfg = leg_inverse_config(model, [0.0, -0.4])
    assert mft.raci(model.with_gravity(0.0), cfg, 0.0) == 0.0


def test_raci_monotone_in_demand(model, workspace):
    X, _ = workspace.field.joint_samples()
    rng = np.random.default_rng(2)
    for hips in X[rng.choice(len(X), 300, replace=False)]:
        cfg = leg_inverse_config(model, mft_foot(model, hips))
        assert mft.raci(model, cfg, 120.0) >= mft.raci(model, cfg, 60.0)


def mft_foot(model, hips):
    from mftwbc.model import leg_forward_kinematics
    return leg_forward_kinematics(model, hips)


def test_raci_brute_force_directions(model):
    rng = np.random.default_rng(3)
    th = np.linspace(0, 2 * np.pi, 3600, endpoint=False)
    dirs = np.stack([np.cos(th), np.sin(th)])
    m = math.sqrt(model.leg_masses[0])
    for p in reachable_feet(model, rng, 100):
        cfg = leg_inverse_config(model, p)
        T = mft.leg_torque_map(model, cfg)
        brute = 60.0 * np.abs(T @ dirs).max() / m
        assert mft.raci(model, cfg, 60.0) == pytest.approx(brute, rel=1e-3)
