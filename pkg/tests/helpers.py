from __future__ import annotations

import numpy as np

from mftwbc.model import LEG_JOINTS, NQ, leg_inverse_config, loop_constraints, standing_q


def reachable_feet(model, rng, n, leg=0):
    """Random base-frame foot points on the working branch inside the joint limits."""
    out = []
    while len(out) < n:
        p = np.array([rng.uniform(-0.35, 0.35), rng.uniform(-0.55, -0.2)])
        try:
            leg_inverse_config(model, p, leg)
        except Exception:
            continue
        out.append(p)
    return np.array(out)


def consistent_state(model, rng, speed=1.0):
    """Random closure-consistent ``(q, qd)`` around a standing pose."""
    q = standing_q(model, rng.uniform(0.36, 0.46), stance_x=rng.uniform(-0.05, 0.05),
                   pitch=rng.uniform(-0.2, 0.2), x=rng.uniform(-1, 1))
    for leg in range(2):
        foot = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.45, -0.33)])
        q[LEG_JOINTS[leg]] = leg_inverse_config(model, foot, leg)
    _, J, _ = loop_constraints(model, q)
    r = rng.normal(size=NQ) * speed
    qd = r - np.linalg.pinv(J) @ (J @ r)
    return q, qd
