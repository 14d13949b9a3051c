"""Compiled kernels for the planar floating-base tree.

Coordinates are ``[x, z, pitch, hip_0, knee_0, ..., hip_3, knee_3]`` where
limb ``l`` (``0 = leg0 rear, 1 = leg0 fore, 2 = leg1 rear, 3 = leg1 fore``)
owns joints ``3 + 2l`` (hip, actuated) and ``4 + 2l`` (knee, passive).

Angles are counter-clockwise in the (x, z) plane.  A link at absolute angle
``phi`` points along ``u(phi) = (sin phi, -cos phi)`` so zero is straight down.

Spatial quantities use planar Plucker coordinates expressed in the world
frame at the world origin: motion ``(omega, vx, vz)``, force ``(n, fx, fz)``.

Parameter packing (see ``RobotModel.packed``):
    limb[l] = [hx, hz, l1, l2, c1, c2, m1, m2, I1, I2]
    torso   = [m, I, cx, cz]
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NQ = 11
PARENT = np.array([-1, 0, 1, 2, 3, 2, 5, 2, 7, 2, 9], dtype=np.int64)


@njit(cache=True)
def _u(phi):
    return math.sin(phi), -math.cos(phi)


@njit(cache=True)
def limb_points_base(q, limb):
    """Knee and distal endpoint of every limb in the base frame (no pitch)."""
    knee = np.empty((4, 2))
    end = np.empty((4, 2))
    for l in range(4):
        a = q[3 + 2 * l]
        k = q[4 + 2 * l]
        ux, uz = _u(a)
        vx, vz = _u(a + k)
        knee[l, 0] = limb[l, 0] + limb[l, 2] * ux
        knee[l, 1] = limb[l, 1] + limb[l, 2] * uz
        end[l, 0] = knee[l, 0] + limb[l, 3] * vx
        end[l, 1] = knee[l, 1] + limb[l, 3] * vz
    return knee, end


@njit(cache=True)
def frames(q, limb, torso):
    """Joint motion subspaces S (11x3) and body inertias at the origin (11x3x3)."""
    S = np.zeros((NQ, 3))
    Ib = np.zeros((NQ, 3, 3))
    x, z, th = q[0], q[1], q[2]
    c, s = math.cos(th), math.sin(th)
    S[0, 1] = 1.0
    S[1, 2] = 1.0
    S[2, 0] = 1.0
    S[2, 1] = z
    S[2, 2] = -x
    tcx = x + c * torso[2] - s * torso[3]
    tcz = z + s * torso[2] + c * torso[3]
    _inertia(Ib[2], torso[0], torso[1], tcx, tcz)
    for l in range(4):
        hx = x + c * limb[l, 0] - s * limb[l, 1]
        hz = z + s * limb[l, 0] + c * limb[l, 1]
        p1 = th + q[3 + 2 * l]
        p2 = p1 + q[4 + 2 * l]
        ux, uz = _u(p1)
        vx, vz = _u(p2)
        kx = hx + limb[l, 2] * ux
        kz = hz + limb[l, 2] * uz
        ih = 3 + 2 * l
        ik = 4 + 2 * l
        S[ih, 0] = 1.0
        S[ih, 1] = hz
        S[ih, 2] = -hx
        S[ik, 0] = 1.0
        S[ik, 1] = kz
        S[ik, 2] = -kx
        _inertia(Ib[ih], limb[l, 6], limb[l, 8], hx + limb[l, 4] * ux, hz + limb[l, 4] * uz)
        _inertia(Ib[ik], limb[l, 7], limb[l, 9], kx + limb[l, 5] * vx, kz + limb[l, 5] * vz)
    return S, Ib


@njit(cache=True)
def _inertia(out, m, I, cx, cz):
    out[0, 0] = I + m * (cx * cx + cz * cz)
    out[0, 1] = -m * cz
    out[1, 0] = -m * cz
    out[0, 2] = m * cx
    out[2, 0] = m * cx
    out[1, 1] = m
    out[2, 2] = m


@njit(cache=True)
def crba(q, limb, torso):
    S, Ib = frames(q, limb, torso)
    Ic = Ib.copy()
    for i in range(NQ - 1, 0, -1):
        Ic[PARENT[i]] += Ic[i]
    M = np.zeros((NQ, NQ))
    for i in range(NQ):
        F = Ic[i] @ S[i]
        M[i, i] = S[i] @ F
        j = i
        while PARENT[j] >= 0:
            j = PARENT[j]
            v = S[j] @ F
            M[i, j] = v
            M[j, i] = v
    return M


@njit(cache=True)
def _crm(v, m):
    return np.array([0.0, -v[0] * m[2] + m[0] * v[2], v[0] * m[1] - m[0] * v[1]])


@njit(cache=True)
def _crf(v, f):
    return np.array([-v[2] * f[1] + v[1] * f[2], -v[0] * f[2], v[0] * f[1]])


@njit(cache=True)
def rnea(q, qd, qdd, limb, torso, gravity):
    S, Ib = frames(q, limb, torso)
    V = np.zeros((NQ, 3))
    A = np.zeros((NQ, 3))
    f = np.zeros((NQ, 3))
    a0 = np.array([0.0, 0.0, gravity])
    for i in range(NQ):
        p = PARENT[i]
        vs = S[i] * qd[i]
        if p < 0:
            V[i] = vs
            A[i] = a0 + S[i] * qdd[i]
        else:
            V[i] = V[p] + vs
            A[i] = A[p] + _crm(V[i], vs) + S[i] * qdd[i]
        f[i] = Ib[i] @ A[i] + _crf(V[i], Ib[i] @ V[i])
    tau = np.zeros(NQ)
    for i in range(NQ - 1, -1, -1):
        tau[i] = S[i] @ f[i]
        p = PARENT[i]
        if p >= 0:
            f[p] += f[i]
    return tau


@njit(cache=True)
def closure_terms(q, qd, limb):
    """phi (4), J_h (4x11), Jdot_h qd (4); each leg's fore endpoint minus rear endpoint."""
    phi = np.zeros(4)
    J = np.zeros((4, NQ))
    bias = np.zeros(4)
    for leg in range(2):
        for side in range(2):
            l = 2 * leg + side
            sign = 1.0 if side == 1 else -1.0
            ia = 3 + 2 * l
            a = q[ia]
            k = q[ia + 1]
            ux, uz = _u(a)
            vx, vz = _u(a + k)
            l1 = limb[l, 2]
            l2 = limb[l, 3]
            r = 2 * leg
            phi[r] += sign * (limb[l, 0] + l1 * ux + l2 * vx)
            phi[r + 1] += sign * (limb[l, 1] + l1 * uz + l2 * vz)
            # du/dphi = (cos phi, sin phi) = (-uz, ux)
            J[r, ia] = sign * (-l1 * uz - l2 * vz)
            J[r + 1, ia] = sign * (l1 * ux + l2 * vx)
            J[r, ia + 1] = sign * (-l2 * vz)
            J[r + 1, ia + 1] = sign * (l2 * vx)
            w1 = qd[ia]
            w2 = qd[ia] + qd[ia + 1]
            bias[r] += sign * (-w1 * w1 * l1 * ux - w2 * w2 * l2 * vx)
            bias[r + 1] += sign * (-w1 * w1 * l1 * uz - w2 * w2 * l2 * vz)
    return phi, J, bias


@njit(cache=True)
def foot_terms(q, qd, limb):
    """World foot points (2x2), velocities (2x2), J_c (4x11), Jdot_c qd (4).

    The foot is the midpoint of the two distal endpoints of a leg, which is
    the closure point whenever the loop is closed.
    """
    x, z, th = q[0], q[1], q[2]
    c, s = math.cos(th), math.sin(th)
    pos = np.zeros((2, 2))
    vel = np.zeros((2, 2))
    J = np.zeros((4, NQ))
    bias = np.zeros(4)
    for leg in range(2):
        mx = 0.0
        mz = 0.0
        # base-frame midpoint, its rate and its quadratic-velocity acceleration
        dmx = 0.0
        dmz = 0.0
        bmx = 0.0
        bmz = 0.0
        jm = np.zeros((2, NQ))
        for side in range(2):
            l = 2 * leg + side
            ia = 3 + 2 * l
            a = q[ia]
            k = q[ia + 1]
            ux, uz = _u(a)
            vx, vz = _u(a + k)
            l1 = limb[l, 2]
            l2 = limb[l, 3]
            mx += 0.5 * (limb[l, 0] + l1 * ux + l2 * vx)
            mz += 0.5 * (limb[l, 1] + l1 * uz + l2 * vz)
            jm[0, ia] = 0.5 * (-l1 * uz - l2 * vz)
            jm[1, ia] = 0.5 * (l1 * ux + l2 * vx)
            jm[0, ia + 1] = 0.5 * (-l2 * vz)
            jm[1, ia + 1] = 0.5 * (l2 * vx)
            w1 = qd[ia]
            w2 = qd[ia] + qd[ia + 1]
            dmx += jm[0, ia] * w1 + jm[0, ia + 1] * qd[ia + 1]
            dmz += jm[1, ia] * w1 + jm[1, ia + 1] * qd[ia + 1]
            bmx += 0.5 * (-w1 * w1 * l1 * ux - w2 * w2 * l2 * vx)
            bmz += 0.5 * (-w1 * w1 * l1 * uz - w2 * w2 * l2 * vz)
        rx = c * mx - s * mz
        rz = s * mx + c * mz
        drx = c * dmx - s * dmz
        drz = s * dmx + c * dmz
        thd = qd[2]
        pos[leg, 0] = x + rx
        pos[leg, 1] = z + rz
        vel[leg, 0] = qd[0] - thd * rz + drx
        vel[leg, 1] = qd[1] + thd * rx + drz
        r0 = 2 * leg
        J[r0, 0] = 1.0
        J[r0 + 1, 1] = 1.0
        J[r0, 2] = -rz
        J[r0 + 1, 2] = rx
        for j in range(3, NQ):
            J[r0, j] = c * jm[0, j] - s * jm[1, j]
            J[r0 + 1, j] = s * jm[0, j] + c * jm[1, j]
        # -thd^2 R m + 2 thd J R mdot + R mddot_bias
        bias[r0] = -thd * thd * rx - 2.0 * thd * drz + (c * bmx - s * bmz)
        bias[r0 + 1] = -thd * thd * rz + 2.0 * thd * drx + (s * bmx + c * bmz)
    return pos, vel, J, bias


@njit(cache=True)
def center_of_mass(q, limb, torso):
    """Whole-body CoM from the first mass moments of the body inertias."""
    _, Ib = frames(q, limb, torso)
    m = 0.0
    mx = 0.0
    mz = 0.0
    for i in range(2, NQ):
        m += Ib[i, 1, 1]
        mx += Ib[i, 0, 2]
        mz -= Ib[i, 0, 1]
    out = np.empty(2)
    out[0] = mx / m
    out[1] = mz / m
    return out
