"""Reference QP solvers: exhaustive active-set enumeration and interior point.

``brute_force_solve`` is the ground-truth oracle for small problems: it tries
every subset of inequality rows as an active set, solves the full dense KKT
system for that subset, and returns the first candidate satisfying all
optimality conditions.  For a strictly convex QP that candidate is the unique
global optimum.  ``interior_point_solve`` is a Mehrotra-style predictor-
corrector used as the reliable (slower) fallback when the active-set method
gives up, and as an independent cross-check in tests.
"""

from __future__ import annotations

import itertools

import numpy as np

from .qp import (ActiveSet, QpSolution, SolveStatus, StandardQP,
                 kkt_residual)

BRUTE_FORCE_MAX_INEQ = 20


def _dense_kkt_solve(qp: StandardQP, subset: tuple[int, ...]):
    """Solve the full KKT system with rows ``subset`` pinned active.

    Returns (z, gamma_full, alpha) or None when the system is singular or the
    linear solve is unreliable.
    """
    n, me, k = qp.n, qp.m_eq, len(subset)
    idx = np.asarray(subset, dtype=int)
    dim = n + me + k
    KKT = np.zeros((dim, dim))
    KKT[:n, :n] = qp.W
    if me:
        KKT[n:n + me, :n] = qp.A
        KKT[:n, n:n + me] = qp.A.T
    if k:
        KKT[n + me:, :n] = qp.P[idx]
        KKT[:n, n + me:] = qp.P[idx].T
    rhs = np.concatenate([-qp.g, qp.b, qp.f[idx]])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        return None
    resid = np.max(np.abs(KKT @ sol - rhs))
    if not np.isfinite(resid) or resid > 1e-9 * max(1.0, float(np.max(np.abs(rhs)))):
        return None
    z = sol[:n]
    alpha = sol[n:n + me]
    gamma = np.zeros(qp.m_ineq)
    gamma[idx] = sol[n + me:]
    return z, gamma, alpha


def brute_force_solve(qp: StandardQP, tol: float = 1e-8) -> QpSolution:
    """Global-optimality oracle by enumerating all candidate active sets."""
    if qp.m_ineq > BRUTE_FORCE_MAX_INEQ:
        raise ValueError(
            f"enumeration budget exceeded: m_ineq={qp.m_ineq} > {BRUTE_FORCE_MAX_INEQ}")
    tried = 0
    for size in range(qp.m_ineq + 1):
        for subset in itertools.combinations(range(qp.m_ineq), size):
            tried += 1
            out = _dense_kkt_solve(qp, subset)
            if out is None:
                continue
            z, gamma, alpha = out
            if qp.m_ineq and np.max(qp.P @ z - qp.f) > tol:
                continue
            if subset and np.min(gamma[list(subset)]) < -tol:
                continue
            return QpSolution(z, gamma, alpha, ActiveSet(subset), tried,
                              SolveStatus.OPTIMAL)
    return QpSolution(np.zeros(qp.n), np.zeros(qp.m_ineq), np.zeros(qp.m_eq),
                      ActiveSet(), tried, SolveStatus.INFEASIBLE)


def _equality_only_solve(qp: StandardQP) -> QpSolution:
    out = _dense_kkt_solve(qp, ())
    if out is None:
        return QpSolution(np.zeros(qp.n), np.zeros(0), np.zeros(qp.m_eq),
                          ActiveSet(), 1, SolveStatus.SINGULAR_KKT)
    z, gamma, alpha = out
    return QpSolution(z, gamma, alpha, ActiveSet(), 1, SolveStatus.OPTIMAL)


def interior_point_solve(qp: StandardQP, tol: float = 1e-10,
                         max_iter: int = 100,
                         activity_tol: float = 1e-6) -> QpSolution:
    """Primal-dual predictor-corrector interior-point solve.

    Terminates when every KKT residual block is below ``tol``.  The reported
    active set is the rows whose slack is below ``activity_tol``, which lets
    the caller hand the set back to the active-set method as a warm start.
    """
    n, me, mi = qp.n, qp.m_eq, qp.m_ineq
    if mi == 0:
        return _equality_only_solve(qp)

    W, g, A, b, P, f = qp.W, qp.g, qp.A, qp.b, qp.P, qp.f

    # Starting point: equality-regularized least-squares guess with slacks and
    # multipliers pushed safely positive.
    z = np.zeros(n)
    s = np.maximum(f - P @ z, 1.0)
    gamma = np.ones(mi)
    alpha = np.zeros(me)

    def newton_solve(lam_over_s: np.ndarray, r_dual, r_eq, r_ineq, r_comp):
        # Eliminate (ds, dgamma); solve the symmetric system in (dz, dalpha).
        H = W + P.T @ (lam_over_s[:, None] * P)
        rhs1 = -r_dual - P.T @ ((gamma * r_ineq - r_comp) / s)
        dim = n + me
        M = np.zeros((dim, dim))
        M[:n, :n] = H
        if me:
            M[:n, n:] = A.T
            M[n:, :n] = A
        rhs = np.concatenate([rhs1, -r_eq])
        sol = np.linalg.solve(M, rhs)
        dz = sol[:n]
        dalpha = sol[n:]
        ds = -r_ineq - P @ dz
        dgamma = -(r_comp + gamma * ds) / s
        return dz, dalpha, ds, dgamma

    def max_step(v: np.ndarray, dv: np.ndarray) -> float:
        neg = dv < 0
        if not np.any(neg):
            return 1.0
        return min(1.0, float(np.min(-v[neg] / dv[neg])))

    status = SolveStatus.ITER_LIMIT
    iterations = max_iter
    for it in range(1, max_iter + 1):
        r_dual = W @ z + g + (A.T @ alpha if me else 0.0) + P.T @ gamma
        r_eq = A @ z - b if me else np.zeros(0)
        r_ineq = P @ z + s - f
        r_comp = s * gamma
        mu = float(r_comp.sum() / mi)

        res = kkt_residual(qp, QpSolution(z, gamma, alpha, ActiveSet(), it,
                                          SolveStatus.OPTIMAL))
        if res.max_violation() < tol:
            status = SolveStatus.OPTIMAL
            iterations = it - 1
            break

        lam_over_s = gamma / s
        try:
            # Affine (predictor) direction.
            dz, dalpha, ds, dgamma = newton_solve(lam_over_s, r_dual, r_eq,
                                                  r_ineq, r_comp)
            ap = max_step(s, ds)
            ad = max_step(gamma, dgamma)
            mu_aff = float((s + ap * ds) @ (gamma + ad * dgamma) / mi)
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # Corrector with centering.
            r_comp_c = r_comp + ds * dgamma - sigma * mu
            dz, dalpha, ds, dgamma = newton_solve(lam_over_s, r_dual, r_eq,
                                                  r_ineq, r_comp_c)
        except np.linalg.LinAlgError:
            # Newton system degenerate (typically a numerically infeasible
            # problem); report the best iterate found so far.
            iterations = it
            break
        step = 0.995 * min(max_step(s, ds), max_step(gamma, dgamma))
        z = z + step * dz
        alpha = alpha + step * dalpha
        s = np.maximum(s + step * ds, 1e-300)
        gamma = np.maximum(gamma + step * dgamma, 1e-300)

    slack = f - P @ z
    act = ActiveSet(tuple(int(i) for i in np.flatnonzero(slack < activity_tol)))

    # Polish: re-solve the dense KKT on the extracted active set and keep the
    # result when it is at least as good; gives exact zeros on inactive rows.
    polished = _dense_kkt_solve(qp, act.indices)
    best = QpSolution(z, _zeroed_inactive(gamma, act, mi), alpha, act,
                      iterations, status)
    if polished is not None:
        zp, gp, ap_ = polished
        cand = QpSolution(zp, gp, ap_, act, iterations, status)
        ok_feas = (qp.m_ineq == 0 or np.max(qp.P @ zp - qp.f) <= 1e-9)
        ok_dual = (len(act) == 0 or np.min(gp[act.as_array()]) >= -1e-9)
        if ok_feas and ok_dual:
            if kkt_residual(qp, cand).max_violation() <= \
                    kkt_residual(qp, best).max_violation():
                best = cand
    if best.status is not SolveStatus.OPTIMAL and \
            kkt_residual(qp, best).max_violation() < tol:
        best = QpSolution(best.z, best.gamma, best.alpha_eq, best.active_set,
                          best.iterations, SolveStatus.OPTIMAL)
    return best


def _zeroed_inactive(gamma: np.ndarray, act: ActiveSet, mi: int) -> np.ndarray:
    out = np.zeros(mi)
    idx = act.as_array()
    if idx.size:
        out[idx] = gamma[idx]
    return out


def random_spd(rng: np.random.Generator, n: int,
               eig_range: tuple[float, float] = (0.5, 2.0)) -> np.ndarray:
    """Random symmetric positive-definite matrix with bounded spectrum."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = rng.uniform(*eig_range, size=n)
    return Q @ np.diag(eigs) @ Q.T


def random_feasible_qp(rng: np.random.Generator, n: int, m_ineq: int,
                       m_eq: int, structured: bool = False) -> StandardQP:
    """Random strictly convex QP, feasible by construction.

    A point is sampled first; equalities pass through it and inequality
    right-hand sides are shifted so it is strictly interior, so no phase-1
    solve is ever needed.
    """
    W = random_spd(rng, n)
    g = rng.standard_normal(n)
    z0 = rng.standard_normal(n)
    A = rng.standard_normal((m_eq, n)) if m_eq else np.zeros((0, n))
    b = A @ z0 if m_eq else np.zeros(0)
    P = rng.standard_normal((m_ineq, n)) if m_ineq else np.zeros((0, n))
    margin = rng.uniform(0.1, 1.0, size=m_ineq)
    f = P @ z0 + margin if m_ineq else np.zeros(0)
    structure = None
    if structured:
        from .qp import CostStructure
        n1 = max(1, n // 2)
        w = float(rng.uniform(0.05, 2.0))
        U = rng.standard_normal((2, n1))
        Qy = random_spd(rng, 2)
        d22 = rng.uniform(0.2, 3.0, size=n - n1)
        structure = CostStructure(n1, w, U, Qy, d22)
        W = structure.materialize()
    return StandardQP(W, g, A, b, P, f, structure=structure)
