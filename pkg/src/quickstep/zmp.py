"""Planar COM/ZMP dynamics, LQR value functions, and the tracking objective.

Model.  The COM (x, y) state is x = [pos; vel] with input u = COM
acceleration:

    xdot = A x + B u,   A = [[0, I], [0, 0]],  B = [0; I]
    y    = C x + D(t) u,  C = [I, 0],  D(t) = -(z_com / (zddot_com + g)) I.

The sign of D is fixed so the constant-height case reduces to the classical
ground-point formula  x_zmp = x_com - (z_com / g) * xddot_com.

Tracking cost.  For a desired output path y_des on [0, t_f],

    J = e(t_f)' Qf e(t_f) + integral e' Qy e dt,    e = y - y_des,

the quadratic cost-to-go J(x, t) = x' S x + s1' x + s0 satisfies, with
Q1 = C'Qy C, R(t) = D'Qy D, N(t) = C'Qy D, q1 = -2 C'Qy y_des,
r1 = -2 D'Qy y_des, q0 = y_des' Qy y_des, K = R^-1 (B'S + N') and the
feedforward m = -0.5 R^-1 (B' s1 + r1):

    -dS/dt  = Q1 + A'S + SA - (SB + N) R^-1 (B'S + N')
    -ds1/dt = q1 + (A - BK)' s1 - K' r1
    -ds0/dt = q0 - 0.25 (B's1 + r1)' R^-1 (B's1 + r1)

integrated backward from S(t_f) = Qf, s1(t_f) = 0, s0(t_f) = 0 in coordinates
shifted so the final desired point is the origin.  The absolute optimal
policy is u = -K x + m; simulating it forward produces the nominal state
trajectory, and in deviation coordinates relative to that nominal the optimal
input is exactly -K(t) xbar with no affine term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg

GRAVITY = 9.81

_A = np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((2, 2)), np.zeros((2, 2))]])
_B = np.vstack([np.zeros((2, 2)), np.eye(2)])
_C = np.hstack([np.eye(2), np.zeros((2, 2))])


@dataclass(frozen=True)
class PiecewiseLinearPlan:
    """Linearly interpolated 2-D path samples; clamped outside the knots."""

    times: np.ndarray     # (T,) strictly increasing
    points: np.ndarray    # (T, 2)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if t.ndim != 1 or t.size != p.shape[0] or t.size == 0:
            raise ValueError("times and points must align and be nonempty")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    def at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.points[:, k]) for k in (0, 1)])

    def shifted(self, offset: np.ndarray) -> "PiecewiseLinearPlan":
        return PiecewiseLinearPlan(self.times, self.points - np.asarray(offset))

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @classmethod
    def constant(cls, point, t_final: float = 0.0) -> "PiecewiseLinearPlan":
        p = np.asarray(point, dtype=float).reshape(2)
        if t_final > 0.0:
            return cls(np.array([0.0, t_final]), np.vstack([p, p]))
        return cls(np.array([0.0]), p[None, :])


class ComZmpModel:
    """COM/ZMP dynamics with a constant or scheduled COM height."""

    def __init__(self, gravity: float, z_fn: Callable[[float], float],
                 zdot_fn: Callable[[float], float],
                 zddot_fn: Callable[[float], float],
                 domain: tuple[float, float] | None,
                 constant_height: bool):
        self.gravity = float(gravity)
        self._z = z_fn
        self._zdot = zdot_fn
        self._zddot = zddot_fn
        self.domain = domain
        self.constant_height = constant_height
        self.A = _A.copy()
        self.B = _B.copy()
        self.C = _C.copy()
        # Desk-scale sanity sweep: the acceleration offset must stay positive.
        if domain is not None:
            for t in np.linspace(domain[0], domain[1], 257):
                if self._zddot(float(t)) + self.gravity <= 0.0:
                    raise ValueError(f"zddot + g <= 0 at t={t:.4f}")
        elif self.gravity <= 0.0:
            raise ValueError("gravity must be positive")

    @classmethod
    def constant(cls, z_com: float, gravity: float = GRAVITY) -> "ComZmpModel":
        if z_com <= 0.0:
            raise ValueError("z_com must be positive")
        return cls(gravity, lambda t: z_com, lambda t: 0.0, lambda t: 0.0,
                   None, True)

    @classmethod
    def scheduled(cls, z_fn, zdot_fn, zddot_fn, domain: tuple[float, float],
                  gravity: float = GRAVITY) -> "ComZmpModel":
        return cls(gravity, z_fn, zdot_fn, zddot_fn, domain, False)

    def _check_time(self, t: float) -> None:
        if self.domain is not None and not (self.domain[0] - 1e-12 <= t <= self.domain[1] + 1e-12):
            raise ValueError(f"t={t} outside model domain {self.domain}")

    def D(self, t: float = 0.0) -> np.ndarray:
        self._check_time(t)
        denom = self._zddot(t) + self.gravity
        if denom <= 0.0:
            raise ValueError(f"zddot + g = {denom} <= 0 at t={t}")
        return -(self._z(t) / denom) * np.eye(2)

    def height(self, t: float = 0.0) -> float:
        return float(self._z(t))


def zmp_output(model: ComZmpModel, x: np.ndarray, u: np.ndarray,
               t: float = 0.0) -> np.ndarray:
    """Ground-point output y = C x + D(t) u."""
    x = np.asarray(x, dtype=float).reshape(4)
    u = np.asarray(u, dtype=float).reshape(2)
    return model.C @ x + model.D(t) @ u


def care_residual(A, B, Q, R, N, S) -> float:
    closed = (S @ B + N) @ np.linalg.solve(R, (B.T @ S + N.T))
    return float(np.max(np.abs(A.T @ S + S @ A - closed + Q)))


def solve_care(A, B, Q, R, N=None) -> np.ndarray:
    """Stabilizing solution of the algebraic Riccati equation with cross term."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if N is None:
        N = np.zeros((A.shape[0], B.shape[1]))
    S = scipy.linalg.solve_continuous_are(A, B, Q, R, s=N)
    return 0.5 * (S + S.T)


def lqr_balance(model: ComZmpModel, Qy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Infinite-horizon regulator for the output cost integral y' Qy y dt.

    Returns (S, K) with S solving the Riccati equation for state cost C'Qy C,
    input cost D'Qy D, and cross term C'Qy D; the closed loop A - B K is
    verified stable.
    """
    if not model.constant_height:
        raise ValueError("balancing design requires a constant COM height")
    Qy = np.asarray(Qy, dtype=float)
    C, D = model.C, model.D(0.0)
    Q = C.T @ Qy @ C
    R = D.T @ Qy @ D
    N = C.T @ Qy @ D
    S = solve_care(model.A, model.B, Q, R, N)
    K = np.linalg.solve(R, model.B.T @ S + N.T)
    resid = care_residual(model.A, model.B, Q, R, N, S)
    if resid > 1e-8:
        raise RuntimeError(f"Riccati residual {resid:.3e} exceeds 1e-8")
    if np.max(np.linalg.eigvals(model.A - model.B @ K).real) >= 0.0:
        raise RuntimeError("closed loop is not stable")
    return S, K


@dataclass(frozen=True)
class TrackingProblem:
    """Finite-horizon output-tracking specification."""

    Qy: np.ndarray          # 2x2 output weight, positive definite
    Qf: np.ndarray          # 4x4 final state weight, positive semidefinite
    y_des: PiecewiseLinearPlan
    t_final: float

    def __post_init__(self):
        Qy = np.asarray(self.Qy, dtype=float)
        Qf = np.asarray(self.Qf, dtype=float)
        if Qy.shape != (2, 2) or np.linalg.eigvalsh(0.5 * (Qy + Qy.T))[0] <= 0:
            raise ValueError("Qy must be 2x2 positive definite")
        if Qf.shape != (4, 4) or np.linalg.eigvalsh(0.5 * (Qf + Qf.T))[0] < -1e-12:
            raise ValueError("Qf must be 4x4 positive semidefinite")
        if self.t_final <= 0.0:
            raise ValueError("t_final must be positive")
        if self.y_des.t_final < self.t_final - 1e-12:
            raise ValueError("y_des must cover [0, t_final]")
        object.__setattr__(self, "Qy", Qy)
        object.__setattr__(self, "Qf", Qf)


@dataclass(frozen=True)
class QuadraticValueFunction:
    """Quadratic cost-to-go with gain, in coordinates shifted by ``origin``.

    ``ts``/``S``/``s1``/``s0``/``K`` are samples on the integration grid
    (a single sample marks a stationary, time-invariant function).  ``x_des``
    holds the closed-loop nominal state trajectory in the shifted frame once
    attached; the nominal input is always derived from the policy so that the
    stored pieces stay mutually consistent at interpolated times.
    """

    model: ComZmpModel
    Qy: np.ndarray
    origin: np.ndarray              # 4-vector, shift applied to absolute states
    ts: np.ndarray                  # (T,)
    S: np.ndarray                   # (T, 4, 4)
    s1: np.ndarray                  # (T, 4)
    s0: np.ndarray                  # (T,)
    K: np.ndarray                   # (T, 2, 4) grid samples, for export
    y_plan: PiecewiseLinearPlan | None = None   # desired output, shifted frame
    x_des: np.ndarray | None = None             # (T, 4) nominal, shifted frame
    u_des: np.ndarray | None = None             # (T, 2) nominal input samples

    @property
    def stationary(self) -> bool:
        return self.ts.size == 1

    @property
    def t_final(self) -> float:
        return float(self.ts[-1])

    def _interp(self, arr: np.ndarray, t: float) -> np.ndarray:
        if self.stationary:
            return arr[0]
        ts = self.ts
        t = min(max(t, ts[0]), ts[-1])
        j = int(np.searchsorted(ts, t, side="right") - 1)
        j = min(max(j, 0), ts.size - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * arr[j] + w * arr[j + 1]

    def S_at(self, t: float) -> np.ndarray:
        return self._interp(self.S, t)

    def s1_at(self, t: float) -> np.ndarray:
        return self._interp(self.s1, t)

    def s0_at(self, t: float) -> float:
        return float(self._interp(self.s0[:, None], t)[0])

    def y_des_at(self, t: float) -> np.ndarray:
        if self.y_plan is None:
            return np.zeros(2)
        return self.y_plan.at(t)

    def gain_at(self, t: float) -> np.ndarray:
        """K(t) recomputed from the interpolated S so all pieces agree."""
        D = self.model.D(t)
        R = D.T @ self.Qy @ D
        N = self.model.C.T @ self.Qy @ D
        return np.linalg.solve(R, self.model.B.T @ self.S_at(t) + N.T)

    def feedforward_at(self, t: float) -> np.ndarray:
        """Affine input term of the optimal policy in the shifted frame."""
        D = self.model.D(t)
        R = D.T @ self.Qy @ D
        r1 = -2.0 * D.T @ self.Qy @ self.y_des_at(t)
        return -0.5 * np.linalg.solve(R, self.model.B.T @ self.s1_at(t) + r1)

    def nominal_state(self, t: float) -> np.ndarray:
        if self.x_des is None:
            return np.zeros(4)
        return self._interp(self.x_des, t)

    def nominal_input(self, t: float) -> np.ndarray:
        return -self.gain_at(t) @ self.nominal_state(t) + self.feedforward_at(t)

    def deviation(self, x_abs: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(x_abs, dtype=float) - self.origin - self.nominal_state(t)

    def deviation_terms(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(S, s1_dev, yhat) of the cost-to-go in deviation coordinates."""
        S = self.S_at(t)
        xd = self.nominal_state(t)
        s1_dev = 2.0 * S @ xd + self.s1_at(t)
        ud = self.nominal_input(t)
        yhat = self.model.C @ xd + self.model.D(t) @ ud - self.y_des_at(t)
        return S, s1_dev, yhat

    def value_at(self, t: float, x_bar: np.ndarray) -> float:
        S, s1_dev, _ = self.deviation_terms(t)
        xd = self.nominal_state(t)
        s0_dev = float(xd @ S @ xd + self.s1_at(t) @ xd + self.s0_at(t))
        x_bar = np.asarray(x_bar, dtype=float)
        return float(x_bar @ S @ x_bar + s1_dev @ x_bar + s0_dev)

    def gradient_at(self, t: float, x_bar: np.ndarray) -> np.ndarray:
        S, s1_dev, _ = self.deviation_terms(t)
        return 2.0 * S @ np.asarray(x_bar, dtype=float) + s1_dev

    def with_nominal(self, x_des_abs: np.ndarray) -> "QuadraticValueFunction":
        """Attach a nominal state trajectory sampled on the vf grid."""
        xs = np.asarray(x_des_abs, dtype=float).reshape(self.ts.size, 4)
        xs_shift = xs - self.origin
        us = np.array([-self.gain_at(t) @ xs_shift[i] + self.feedforward_at(t)
                       for i, t in enumerate(self.ts)])
        return replace(self, x_des=xs_shift, u_des=us)


def balance_value_function(model: ComZmpModel, Qy: np.ndarray,
                           setpoint=(0.0, 0.0)) -> QuadraticValueFunction:
    """Stationary value function regulating the ground point to ``setpoint``."""
    S, K = lqr_balance(model, Qy)
    origin = np.concatenate([np.asarray(setpoint, dtype=float).reshape(2), np.zeros(2)])
    return QuadraticValueFunction(
        model=model, Qy=np.asarray(Qy, dtype=float), origin=origin,
        ts=np.array([0.0]), S=S[None], s1=np.zeros((1, 4)), s0=np.zeros(1),
        K=K[None], y_plan=None,
        x_des=np.zeros((1, 4)), u_des=np.zeros((1, 2)))


def _riccati_rhs(model: ComZmpModel, Qy: np.ndarray, plan: PiecewiseLinearPlan,
                 t: float, S: np.ndarray, s1: np.ndarray, s0: float):
    A, B, C = model.A, model.B, model.C
    D = model.D(t)
    R = D.T @ Qy @ D
    N = C.T @ Qy @ D
    yd = plan.at(t)
    q1 = -2.0 * C.T @ Qy @ yd
    r1 = -2.0 * D.T @ Qy @ yd
    q0 = float(yd @ Qy @ yd)
    K = np.linalg.solve(R, B.T @ S + N.T)
    Q1 = C.T @ Qy @ C
    dS = -(Q1 + A.T @ S + S @ A - (S @ B + N) @ K)
    ds1 = -(q1 + (A - B @ K).T @ s1 - K.T @ r1)
    w = B.T @ s1 + r1
    ds0 = -(q0 - 0.25 * float(w @ np.linalg.solve(R, w)))
    return dS, ds1, ds0


def tvlqr(model: ComZmpModel, prob: TrackingProblem,
          step: float = 1e-3) -> QuadraticValueFunction:
    """Finite-horizon tracking value function by backward RK4 integration.

    Solved in coordinates shifted so the final desired point is the origin,
    which makes the boundary terms s1(t_f) = 0 and s0(t_f) = 0 exact.
    """
    t_f = float(prob.t_final)
    n_steps = max(1, int(round(t_f / step)))
    ts = np.linspace(0.0, t_f, n_steps + 1)
    h = ts[1] - ts[0]

    y_final = prob.y_des.at(t_f)
    origin = np.concatenate([y_final, np.zeros(2)])
    plan = prob.y_des.shifted(y_final)
    Qy = prob.Qy

    S_grid = np.zeros((n_steps + 1, 4, 4))
    s1_grid = np.zeros((n_steps + 1, 4))
    s0_grid = np.zeros(n_steps + 1)
    S_grid[-1] = prob.Qf
    S, s1, s0 = prob.Qf.copy(), np.zeros(4), 0.0

    for j in range(n_steps, 0, -1):
        t = ts[j]

        def f(tt, Sv, s1v, s0v):
            return _riccati_rhs(model, Qy, plan, tt, Sv, s1v, s0v)

        k1 = f(t, S, s1, s0)
        k2 = f(t - 0.5 * h, S - 0.5 * h * k1[0], s1 - 0.5 * h * k1[1], s0 - 0.5 * h * k1[2])
        k3 = f(t - 0.5 * h, S - 0.5 * h * k2[0], s1 - 0.5 * h * k2[1], s0 - 0.5 * h * k2[2])
        k4 = f(t - h, S - h * k3[0], s1 - h * k3[1], s0 - h * k3[2])
        S = S - (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        s1 = s1 - (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        s0 = s0 - (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        S = 0.5 * (S + S.T)
        if not np.all(np.isfinite(S)):
            raise RuntimeError(f"Riccati integration diverged at t={ts[j-1]:.4f}")
        S_grid[j - 1] = S
        s1_grid[j - 1] = s1
        s0_grid[j - 1] = s0

    K_grid = np.zeros((n_steps + 1, 2, 4))
    for j, t in enumerate(ts):
        D = model.D(t)
        R = D.T @ Qy @ D
        N = model.C.T @ Qy @ D
        K_grid[j] = np.linalg.solve(R, model.B.T @ S_grid[j] + N.T)

    return QuadraticValueFunction(
        model=model, Qy=Qy, origin=origin, ts=ts, S=S_grid, s1=s1_grid,
        s0=s0_grid, K=K_grid, y_plan=plan)


def nominal_com_traj(vf: QuadraticValueFunction, model: ComZmpModel,
                     x0: np.ndarray) -> np.ndarray:
    """Closed-loop nominal state trajectory under the optimal policy.

    Integrates xdot = A x + B u with u = -K(t) x + feedforward(t) forward on
    the value-function grid, starting from the absolute state ``x0``.
    Returns absolute-frame samples aligned with ``vf.ts``.
    """
    xi = np.asarray(x0, dtype=float).reshape(4) - vf.origin
    out = np.zeros((vf.ts.size, 4))
    out[0] = xi
    A, B = model.A, model.B

    def xdot(t, x):
        u = -vf.gain_at(t) @ x + vf.feedforward_at(t)
        return A @ x + B @ u

    for j in range(vf.ts.size - 1):
        t, t_next = vf.ts[j], vf.ts[j + 1]
        h = t_next - t
        k1 = xdot(t, xi)
        k2 = xdot(t + 0.5 * h, xi + 0.5 * h * k1)
        k3 = xdot(t + 0.5 * h, xi + 0.5 * h * k2)
        k4 = xdot(t_next, xi + h * k3)
        xi = xi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j + 1] = xi
    return out + vf.origin


@dataclass(frozen=True)
class ValueCoeffs:
    """Tracking objective as a quadratic in the input deviation ubar.

    V(ubar) = ubar' H_uu ubar + h_u' ubar + h_0, together with the context a
    QP builder needs to substitute ubar = J_com qdd + Jdot_qdot_com - u_des.
    """

    H_uu: np.ndarray     # 2x2
    h_u: np.ndarray      # (2,)
    h_0: float
    D: np.ndarray        # 2x2 input-to-output map at t
    Qy: np.ndarray       # 2x2 output weight
    u_des: np.ndarray    # (2,) nominal input at t
    t: float


def surrogate_value(vf: QuadraticValueFunction, model: ComZmpModel, t: float,
                    x_bar: np.ndarray) -> ValueCoeffs:
    """Coefficients of the tracking objective as a quadratic in ubar.

    V(xbar, ubar, t) = ybar' Qy ybar + gradJ(xbar)' (A xbar + B ubar) with
    ybar = C xbar + D ubar + yhat; its unconstrained minimizer over ubar
    equals -K(t) xbar exactly.
    """
    x_bar = np.asarray(x_bar, dtype=float).reshape(4)
    S, s1_dev, yhat = vf.deviation_terms(t)
    C, B, A = model.C, model.B, model.A
    D = model.D(t)
    Qy = vf.Qy
    H_uu = D.T @ Qy @ D
    cx = C @ x_bar + yhat
    grad = 2.0 * S @ x_bar + s1_dev
    h_u = 2.0 * D.T @ Qy @ cx + B.T @ grad
    h_0 = float(cx @ Qy @ cx + grad @ (A @ x_bar))
    return ValueCoeffs(H_uu=H_uu, h_u=h_u, h_0=h_0, D=D, Qy=Qy,
                       u_des=vf.nominal_input(t), t=float(t))


def export_value_function_csv(vf: QuadraticValueFunction, path) -> None:
    """Grid samples as CSV: t, flattened S, s1, s0, flattened K."""
    header = ["t"]
    header += [f"S{i}{j}" for i in range(4) for j in range(4)]
    header += [f"s1_{i}" for i in range(4)]
    header += ["s0"]
    header += [f"K{i}{j}" for i in range(2) for j in range(4)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j, t in enumerate(vf.ts):
            row = [repr(float(t))]
            row += [repr(float(v)) for v in vf.S[j].ravel()]
            row += [repr(float(v)) for v in vf.s1[j]]
            row += [repr(float(vf.s0[j]))]
            row += [repr(float(v)) for v in vf.K[j].ravel()]
            writer.writerow(row)
