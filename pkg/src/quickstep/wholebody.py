"""Whole-body controller QP assembly from an instantaneous dynamics snapshot.

Decision variables are stacked as [qdd | cone coefficients | (lambda) | eta]:
joint accelerations, nonnegative friction-cone coefficients per contact, the
contact forces themselves only in the explicit mode, and the bounded slack on
the contact no-slip rows.  Contact forces are eliminated through the cone
parameterization by default, which keeps the problem small; the explicit mode
is retained to check that the elimination is sound.

The quadratic cost combines the COM tracking objective (mapped onto qdd via
the COM Jacobian), a desired-acceleration motion cost, a tiny regularization
on the cone coefficients, and a unit weight on the no-slip slack.  The solver
convention is min 0.5 z'Wz + g'z, so every cost term is scaled by 2 on
assembly; the minimizer is unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .qp import CostStructure, StandardQP
from .zmp import ValueCoeffs


class FrictionParam(enum.Enum):
    GENERATING_VECTORS = "generating-vectors"
    STEWART_TRINKLE = "stewart-trinkle"


def tangent_directions(normal: np.ndarray, n_d: int) -> np.ndarray:
    """n_d unit tangents, evenly spaced in the plane normal to ``normal``.

    Even counts come in +/- pairs so the tangents sum to zero.
    """
    if n_d < 2:
        raise ValueError("need at least two tangent directions")
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    t1 = ref - (ref @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    angles = 2.0 * np.pi * np.arange(n_d) / n_d
    return np.outer(np.cos(angles), t1) + np.outer(np.sin(angles), t2)


@dataclass(frozen=True)
class ContactPoint:
    """One ground-contact point with its linearized friction geometry."""

    name: str
    position: np.ndarray     # (3,)
    normal: np.ndarray       # (3,) unit
    tangents: np.ndarray     # (n_d, 3) unit, orthogonal to normal
    mu: float
    jacobian: np.ndarray     # (3, nq) point-velocity map
    jdot_qdot: np.ndarray    # (3,)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        d = np.atleast_2d(np.asarray(self.tangents, dtype=float))
        J = np.asarray(self.jacobian, dtype=float)
        jd = np.asarray(self.jdot_qdot, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"contact {self.name}: normal must be unit length")
        if d.shape[1] != 3:
            raise ValueError(f"contact {self.name}: tangents must be (n_d, 3)")
        if np.max(np.abs(d @ n)) > 1e-9:
            raise ValueError(f"contact {self.name}: tangents must be orthogonal to normal")
        if np.max(np.abs(np.linalg.norm(d, axis=1) - 1.0)) > 1e-9:
            raise ValueError(f"contact {self.name}: tangents must be unit length")
        if self.mu < 0.0:
            raise ValueError(f"contact {self.name}: mu must be nonnegative")
        if J.ndim != 2 or J.shape[0] != 3:
            raise ValueError(f"contact {self.name}: jacobian must be (3, nq)")
        for name, val in (("position", pos), ("normal", n), ("tangents", d),
                          ("jacobian", J), ("jdot_qdot", jd)):
            object.__setattr__(self, name, val)

    @property
    def n_d(self) -> int:
        return self.tangents.shape[0]


def friction_generators(c: ContactPoint) -> np.ndarray:
    """Generating vectors v_i = normal + mu * tangent_i, one per row."""
    return c.normal[None, :] + c.mu * c.tangents


def stewart_trinkle_rows(c: ContactPoint) -> tuple[np.ndarray, np.ndarray]:
    """Inequality rows G [z; beta] <= h for the normal-plus-tangents cone.

    Rows: z >= 0, beta_i >= 0, sum(beta) <= mu * z.  The force is
    reconstructed as lambda = z * normal + sum_i beta_i * tangent_i.
    """
    nd = c.n_d
    G = np.zeros((nd + 2, nd + 1))
    G[0, 0] = -1.0                      # -z <= 0
    G[1:nd + 1, 1:] = -np.eye(nd)       # -beta_i <= 0
    G[nd + 1, 0] = -c.mu                # sum(beta) - mu z <= 0
    G[nd + 1, 1:] = 1.0
    return G, np.zeros(nd + 2)


def force_basis(c: ContactPoint, param: FrictionParam) -> np.ndarray:
    """Columns mapping the contact's cone coefficients to a world force."""
    if param is FrictionParam.GENERATING_VECTORS:
        return friction_generators(c).T                       # (3, n_d)
    return np.column_stack([c.normal[:, None], c.tangents.T])  # (3, 1 + n_d)


def contact_forces(contacts, coeffs: np.ndarray,
                   param: FrictionParam) -> np.ndarray:
    """Per-contact world forces (Nc, 3) from the stacked cone coefficients."""
    forces = np.zeros((len(contacts), 3))
    at = 0
    for j, c in enumerate(contacts):
        bs = c.n_d if param is FrictionParam.GENERATING_VECTORS else c.n_d + 1
        forces[j] = force_basis(c, param) @ coeffs[at:at + bs]
        at += bs
    if at != coeffs.size:
        raise ValueError(f"cone coefficient vector has {coeffs.size} entries, expected {at}")
    return forces


def cone_residual(c: ContactPoint, force: np.ndarray) -> float:
    """Distance of a force from the linearized cone (nonnegative least squares)."""
    V = friction_generators(c).T
    _, resid = scipy.optimize.nnls(V, np.asarray(force, dtype=float))
    return float(resid)


@dataclass(frozen=True)
class ControllerParams:
    w_qdd: float = 1e-3
    eps_beta: float = 1e-8
    noslip_alpha: float = 5.0
    eta_bounds: tuple[float, float] = (-10.0, 10.0)
    tau_min: np.ndarray | None = None     # (na,)
    tau_max: np.ndarray | None = None     # (na,)
    n_d: int = 4
    friction_param: FrictionParam = FrictionParam.GENERATING_VECTORS
    kp: float = 100.0
    kd: float = 20.0

    def __post_init__(self):
        if self.w_qdd <= 0.0 or self.eps_beta <= 0.0:
            raise ValueError("w_qdd and eps_beta must be positive")
        if not (self.eta_bounds[0] < 0.0 < self.eta_bounds[1]):
            raise ValueError("eta bounds must straddle zero")
        if (self.tau_min is None) != (self.tau_max is None):
            raise ValueError("tau_min and tau_max must be given together")
        if self.tau_min is not None:
            tmin = np.asarray(self.tau_min, dtype=float)
            tmax = np.asarray(self.tau_max, dtype=float)
            if tmin.shape != tmax.shape or np.any(tmin >= tmax):
                raise ValueError("require tau_min < tau_max elementwise")
            object.__setattr__(self, "tau_min", tmin)
            object.__setattr__(self, "tau_max", tmax)


@dataclass(frozen=True)
class DynamicsSnapshot:
    """Instantaneous rigid-body quantities consumed by the QP builder."""

    nq: int
    nf: int
    H: np.ndarray               # (nq, nq) inertia
    bias: np.ndarray            # (nq,) velocity products + gravity
    B_input: np.ndarray         # (na, na) actuated input map, invertible
    contacts: tuple[ContactPoint, ...]
    J_contact: np.ndarray       # (3*Nc, nq)
    Jdot_qdot: np.ndarray       # (3*Nc,)
    J_com: np.ndarray           # (2, nq) COM (x, y) Jacobian
    Jdot_qdot_com: np.ndarray   # (2,)
    q: np.ndarray
    qdot: np.ndarray
    at_min: np.ndarray          # (nq,) bool, joint at lower position limit
    at_max: np.ndarray          # (nq,) bool
    com_pos: np.ndarray | None = None   # (2,) planar COM, convenience
    com_vel: np.ndarray | None = None   # (2,)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.shape != (self.nq, self.nq):
            raise ValueError("H shape mismatch")
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, float(np.max(np.abs(H)))):
            raise ValueError("H must be symmetric")
        if np.linalg.eigvalsh(H)[0] <= 0.0:
            raise ValueError("H must be positive definite")
        na = self.nq - self.nf
        if np.asarray(self.B_input).shape != (na, na):
            raise ValueError("B_input must be (na, na)")

    @property
    def na(self) -> int:
        return self.nq - self.nf

    @property
    def n_contacts(self) -> int:
        return len(self.contacts)


@dataclass(frozen=True)
class VariableLayout:
    nq: int
    n_contacts: int
    n_d: int
    friction_param: FrictionParam
    explicit_lambda: bool

    @property
    def contact_block(self) -> int:
        if self.friction_param is FrictionParam.GENERATING_VECTORS:
            return self.n_d
        return self.n_d + 1

    @property
    def n_cone(self) -> int:
        return self.n_contacts * self.contact_block

    @property
    def n_lambda(self) -> int:
        return 3 * self.n_contacts if self.explicit_lambda else 0

    @property
    def n_eta(self) -> int:
        return 3 * self.n_contacts

    @property
    def n(self) -> int:
        return self.nq + self.n_cone + self.n_lambda + self.n_eta

    @property
    def qdd_slice(self) -> slice:
        return slice(0, self.nq)

    @property
    def cone_slice(self) -> slice:
        return slice(self.nq, self.nq + self.n_cone)

    @property
    def lambda_slice(self) -> slice:
        at = self.nq + self.n_cone
        return slice(at, at + self.n_lambda)

    @property
    def eta_slice(self) -> slice:
        at = self.nq + self.n_cone + self.n_lambda
        return slice(at, at + self.n_eta)


@dataclass(frozen=True)
class WholeBodyQp:
    qp: StandardQP
    layout: VariableLayout
    eq_tags: tuple[str, ...]
    ineq_tags: tuple[str, ...]
    contacts: tuple[ContactPoint, ...]

    def qdd_of(self, z: np.ndarray) -> np.ndarray:
        return z[self.layout.qdd_slice]

    def cone_of(self, z: np.ndarray) -> np.ndarray:
        return z[self.layout.cone_slice]

    def eta_of(self, z: np.ndarray) -> np.ndarray:
        return z[self.layout.eta_slice]


def pd_desired_accel(q_des: np.ndarray, q: np.ndarray, qdot: np.ndarray,
                     params: ControllerParams) -> np.ndarray:
    """Desired acceleration kp * (q_des - q) - kd * qdot, scalar gains."""
    q_des = np.asarray(q_des, dtype=float)
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if q_des.shape != q.shape or q.shape != qdot.shape:
        raise ValueError("q_des, q, qdot must share a shape")
    return params.kp * (q_des - q) - params.kd * qdot


def _cone_basis_blockdiag(contacts, param: FrictionParam) -> np.ndarray:
    """(3*Nc, n_cone) block-diagonal map from cone coefficients to forces."""
    blocks = [force_basis(c, param) for c in contacts]
    if not blocks:
        return np.zeros((0, 0))
    return scipy.linalg.block_diag(*blocks)


def build_qp(snap: DynamicsSnapshot, vf_coeffs: ValueCoeffs,
             qdd_des: np.ndarray, params: ControllerParams,
             explicit_lambda: bool = False) -> WholeBodyQp:
    """Assemble the instantaneous whole-body control QP.

    Equalities: floating-base dynamics rows and contact no-slip rows (with
    bounded slack).  Inequalities: two-sided torque limits with torques
    eliminated through the actuated dynamics rows, cone-coefficient
    nonnegativity (plus the cap row under the normal-plus-tangents
    parameterization), slack bounds, and one-sided acceleration bounds for
    joints sitting at a position limit.
    """
    if params.tau_min is None:
        raise ValueError("params must carry torque limits to build the QP")
    nq, nf, na = snap.nq, snap.nf, snap.na
    layout = VariableLayout(nq, snap.n_contacts, params.n_d,
                            params.friction_param, explicit_lambda)
    qdd_des = np.asarray(qdd_des, dtype=float).reshape(nq)
    if params.tau_min.shape != (na,):
        raise ValueError(f"torque limits must have shape ({na},)")
    for c in snap.contacts:
        if c.n_d != params.n_d:
            raise ValueError(f"contact {c.name} has {c.n_d} tangents, params say {params.n_d}")
        if c.jacobian.shape[1] != nq:
            raise ValueError(f"contact {c.name} jacobian column count != nq")

    n = layout.n
    sl_q, sl_c, sl_l, sl_e = (layout.qdd_slice, layout.cone_slice,
                              layout.lambda_slice, layout.eta_slice)
    Jc = snap.J_com
    H_uu = vf_coeffs.H_uu
    Vblk = _cone_basis_blockdiag(snap.contacts, params.friction_param)
    JT = snap.J_contact.T                       # (nq, 3Nc)
    G = JT @ Vblk if layout.n_cone else np.zeros((nq, 0))

    # Cost (scaled by 2 for the 0.5 z'Wz convention).
    W = np.zeros((n, n))
    W[sl_q, sl_q] = 2.0 * (params.w_qdd * np.eye(nq) + Jc.T @ H_uu @ Jc)
    d22 = np.concatenate([
        np.full(layout.n_cone, 2.0 * params.eps_beta),
        np.full(layout.n_eta, 2.0),
    ])
    W[sl_c, sl_c] = 2.0 * params.eps_beta * np.eye(layout.n_cone)
    W[sl_e, sl_e] = 2.0 * np.eye(layout.n_eta)

    g = np.zeros(n)
    c0 = snap.Jdot_qdot_com - vf_coeffs.u_des
    g[sl_q] = 2.0 * Jc.T @ (H_uu @ c0) + Jc.T @ vf_coeffs.h_u \
        - 2.0 * params.w_qdd * qdd_des

    structure: CostStructure | None = None
    if explicit_lambda:
        # Vanishing-on-feasible quadratic || lambda - Vblk beta ||^2 keeps W
        # positive definite without moving the constrained minimizer.
        M = np.zeros((layout.n_lambda, n))
        M[:, sl_c] = -Vblk
        M[:, sl_l] = np.eye(layout.n_lambda)
        W += 2.0 * M.T @ M
    else:
        structure = CostStructure(split=nq, w_qdd=2.0 * params.w_qdd,
                                  U=vf_coeffs.D @ Jc, Qy=2.0 * vf_coeffs.Qy,
                                  d22=d22)

    # Equalities.
    eq_rows, eq_rhs, eq_tags = [], [], []
    row = np.zeros((nf, n))
    row[:, sl_q] = snap.H[:nf]
    if explicit_lambda:
        row[:, sl_l] = -JT[:nf]
    else:
        row[:, sl_c] = -G[:nf]
    eq_rows.append(row)
    eq_rhs.append(-snap.bias[:nf])
    eq_tags += ["floating-dynamics"] * nf

    if layout.n_eta:
        row = np.zeros((layout.n_eta, n))
        row[:, sl_q] = snap.J_contact
        row[:, sl_e] = -np.eye(layout.n_eta)
        eq_rows.append(row)
        eq_rhs.append(-snap.Jdot_qdot
                      - params.noslip_alpha * (snap.J_contact @ snap.qdot))
        eq_tags += ["contact-no-slip"] * layout.n_eta

    if explicit_lambda and layout.n_lambda:
        row = np.zeros((layout.n_lambda, n))
        row[:, sl_c] = -Vblk
        row[:, sl_l] = np.eye(layout.n_lambda)
        eq_rows.append(row)
        eq_rhs.append(np.zeros(layout.n_lambda))
        eq_tags += ["contact-force-map"] * layout.n_lambda

    A = np.vstack(eq_rows) if eq_rows else np.zeros((0, n))
    b = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)

    # Inequalities.
    in_rows, in_rhs, in_tags = [], [], []
    Binv = np.linalg.inv(snap.B_input)
    tq = np.zeros((na, n))
    tq[:, sl_q] = Binv @ snap.H[nf:]
    if explicit_lambda:
        tq[:, sl_l] = -Binv @ JT[nf:]
    else:
        tq[:, sl_c] = -Binv @ G[nf:]
    tau_bias = Binv @ snap.bias[nf:]
    in_rows += [tq, -tq]
    in_rhs += [params.tau_max - tau_bias, -(params.tau_min - tau_bias)]
    in_tags += ["torque-limit-upper"] * na + ["torque-limit-lower"] * na

    at = layout.cone_slice.start
    for c in snap.contacts:
        bs = layout.contact_block
        if params.friction_param is FrictionParam.GENERATING_VECTORS:
            row = np.zeros((bs, n))
            row[:, at:at + bs] = -np.eye(bs)
            in_rows.append(row)
            in_rhs.append(np.zeros(bs))
            in_tags += ["cone-coeff-nonneg"] * bs
        else:
            G_st, h_st = stewart_trinkle_rows(c)
            row = np.zeros((G_st.shape[0], n))
            row[:, at:at + bs] = G_st
            in_rows.append(row)
            in_rhs.append(h_st)
            in_tags += (["normal-scale-nonneg"] + ["cone-coeff-nonneg"] * c.n_d
                        + ["cone-cap"])
        at += bs

    if layout.n_eta:
        row = np.zeros((layout.n_eta, n))
        row[:, sl_e] = np.eye(layout.n_eta)
        in_rows += [row, -row]
        in_rhs += [np.full(layout.n_eta, params.eta_bounds[1]),
                   np.full(layout.n_eta, -params.eta_bounds[0])]
        in_tags += ["slack-upper"] * layout.n_eta + ["slack-lower"] * layout.n_eta

    for i in np.flatnonzero(snap.at_min):
        row = np.zeros((1, n))
        row[0, i] = -1.0    # qdd_i >= 0
        in_rows.append(row)
        in_rhs.append(np.zeros(1))
        in_tags.append("joint-limit-min")
    for i in np.flatnonzero(snap.at_max):
        row = np.zeros((1, n))
        row[0, i] = 1.0     # qdd_i <= 0
        in_rows.append(row)
        in_rhs.append(np.zeros(1))
        in_tags.append("joint-limit-max")

    P = np.vstack(in_rows) if in_rows else np.zeros((0, n))
    f = np.concatenate(in_rhs) if in_rhs else np.zeros(0)

    qp = StandardQP(W, g, A, b, P, f, structure=structure, check=False)
    return WholeBodyQp(qp, layout, tuple(eq_tags), tuple(in_tags),
                       snap.contacts)


def recover_torques(snap: DynamicsSnapshot, qdd: np.ndarray,
                    cone_coeffs: np.ndarray,
                    friction_param: FrictionParam = FrictionParam.GENERATING_VECTORS
                    ) -> np.ndarray:
    """Actuated torques satisfying the actuated dynamics rows exactly."""
    qdd = np.asarray(qdd, dtype=float).reshape(snap.nq)
    forces = contact_forces(snap.contacts, np.asarray(cone_coeffs, dtype=float),
                            friction_param)
    gen = snap.J_contact.T @ forces.ravel() if snap.n_contacts else np.zeros(snap.nq)
    rhs = snap.H[snap.nf:] @ qdd + snap.bias[snap.nf:] - gen[snap.nf:]
    return np.linalg.solve(snap.B_input, rhs)


def dump_row_tags(wb: WholeBodyQp) -> str:
    """Provenance map serialized alongside QP dumps."""
    lines = ["whole-body-qp rows v1"]
    lines.append(f"variables nq {wb.layout.nq} cone {wb.layout.n_cone} "
                 f"lambda {wb.layout.n_lambda} eta {wb.layout.n_eta} "
                 f"friction {wb.layout.friction_param.value}")
    lines.append("equality_rows")
    lines += [f"{i} {tag}" for i, tag in enumerate(wb.eq_tags)]
    lines.append("inequality_rows")
    lines += [f"{i} {tag}" for i, tag in enumerate(wb.ineq_tags)]
    return "\n".join(lines) + "\n"
