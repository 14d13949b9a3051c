"""Constrained rigid-body dynamics of the cut tree plus loop closures.

``M qdd - J_h^T f_h = S_a^T tau_a + J_c^T f_c - H`` together with
``J_h qdd = -Jdot_h qd``.  Eliminating ``f_h`` gives the projected form used by
the controller; the floating-base rows of that form carry no actuator or
internal-force terms because the closure gaps are measured in the base frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .exceptions import ActuationSingular, RankDeficient
from .model import ACTUATED, BASE, NQ, RobotModel

S_A = np.zeros((4, NQ))
S_A[np.arange(4), ACTUATED] = 1.0
S_F = np.zeros((3, NQ))
S_F[np.arange(3), BASE] = 1.0

RANK_COND = 1e12


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Generalized inertia by the composite-rigid-body algorithm."""
    return _kernels.crba(np.asarray(q, dtype=float), model.limb_array, model.torso_array)


def bias_forces(model: RobotModel, q, qd) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms ``H`` by recursive Newton-Euler."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    return _kernels.rnea(q, qd, np.zeros(NQ), model.limb_array, model.torso_array, model.gravity)


def gravity_forces(model: RobotModel, q) -> np.ndarray:
    return bias_forces(model, q, np.zeros(NQ))


def potential_energy(model: RobotModel, q) -> float:
    from .model import link_frames

    return float(sum(f["mass"] * model.gravity * f["com"][1] for f in link_frames(model, q)))


def _projection(M_factor, J_h: np.ndarray):
    X = cho_solve(M_factor, J_h.T)
    G = J_h @ X
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > RANK_COND:
        raise RankDeficient(f"closure Jacobian lost rank (cond {cond:.3g})")
    Lam = cho_solve(cho_factor(G), np.eye(G.shape[0]))
    Lam = 0.5 * (Lam + Lam.T)
    J_sharp = X @ Lam
    N = np.eye(NQ) - J_sharp @ J_h
    return Lam, J_sharp, N


def constraint_projection(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apparent inertia ``Lambda_h``, dynamically consistent inverse and null-space projector."""
    q = np.asarray(q, dtype=float)
    M = mass_matrix(model, q)
    _, J_h, _ = _kernels.closure_terms(q, np.zeros(NQ), model.limb_array)
    return _projection(cho_factor(M), J_h)


@dataclass
class DynamicsTerms:
    """Everything the controller needs at one state, computed once per tick."""

    M: np.ndarray
    H: np.ndarray
    Lambda_h: np.ndarray
    J_h_sharp: np.ndarray
    N_h: np.ndarray
    J_h: np.ndarray
    Jdot_h_qd: np.ndarray
    J_c: np.ndarray
    Jdot_c_qd: np.ndarray
    S_a: np.ndarray = field(default_factory=lambda: S_A.copy())
    S_f: np.ndarray = field(default_factory=lambda: S_F.copy())
    M_factor: tuple | None = field(default=None, repr=False)


def compute_terms(model: RobotModel, q, qd) -> DynamicsTerms:
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    limb = model.limb_array
    M = _kernels.crba(q, limb, model.torso_array)
    H = _kernels.rnea(q, qd, np.zeros(NQ), limb, model.torso_array, model.gravity)
    _, J_h, dh = _kernels.closure_terms(q, qd, limb)
    _, _, J_c, dc = _kernels.foot_terms(q, qd, limb)
    Mf = cho_factor(M)
    Lam, Js, N = _projection(Mf, J_h)
    return DynamicsTerms(M, H, Lam, Js, N, J_h, dh, J_c, dc, M_factor=Mf)


def floating_base_residual(terms: DynamicsTerms, qdd, f_c) -> np.ndarray:
    """``S_f (M qdd + N_h^T H) - S_f N_h^T J_c^T f_c``; zero when the base rows balance."""
    qdd = np.asarray(qdd, dtype=float)
    f_c = np.asarray(f_c, dtype=float)
    NT = terms.N_h.T
    return terms.S_f @ (terms.M @ qdd + NT @ terms.H) - terms.S_f @ NT @ terms.J_c.T @ f_c


def torque_map(terms: DynamicsTerms) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine map ``tau_a = T_q qdd + T_f f_c + t_0`` from the actuated inverse dynamics."""
    NT = terms.N_h.T
    P = terms.S_a @ NT @ terms.S_a.T
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > RANK_COND:
        raise ActuationSingular(f"S_a N_h^T S_a^T is singular (cond {cond:.3g})")
    Pinv_Sa = np.linalg.solve(P, terms.S_a)
    T_q = Pinv_Sa @ terms.M
    T_f = -Pinv_Sa @ NT @ terms.J_c.T
    t0 = Pinv_Sa @ (NT @ terms.H + terms.J_h.T @ terms.Lambda_h @ terms.Jdot_h_qd)
    return T_q, T_f, t0


def inverse_dynamics_actuated(terms: DynamicsTerms, q, qd, qdd, f_c) -> np.ndarray:
    """Actuator torques for a desired acceleration and contact force."""
    T_q, T_f, t0 = torque_map(terms)
    return T_q @ np.asarray(qdd, dtype=float) + T_f @ np.asarray(f_c, dtype=float) + t0


def forward_dynamics_constrained(terms: DynamicsTerms, q, qd, tau_a, f_c,
                                 f_ext=None, closure_rhs=None) -> tuple[np.ndarray, np.ndarray]:
    """Solve the block system for ``(qdd, f_h)``.

    ``closure_rhs`` overrides the second block's right side (the simulator
    passes a Baumgarte-stabilized value there).
    """
    rhs = terms.S_a.T @ np.asarray(tau_a, dtype=float) + terms.J_c.T @ np.asarray(f_c, dtype=float) - terms.H
    if f_ext is not None:
        rhs = rhs + f_ext
    c = -terms.Jdot_h_qd if closure_rhs is None else closure_rhs
    Mf = terms.M_factor if terms.M_factor is not None else cho_factor(terms.M)
    a0 = cho_solve(Mf, rhs)
    X = cho_solve(Mf, terms.J_h.T)
    G = terms.J_h @ X
    f_h = np.linalg.solve(G, c - terms.J_h @ a0)
    return a0 + X @ f_h, f_h


def kkt_matrix(terms: DynamicsTerms) -> np.ndarray:
    n = terms.J_h.shape[0]
    return np.block([[terms.M, -terms.J_h.T], [terms.J_h, np.zeros((n, n))]])
