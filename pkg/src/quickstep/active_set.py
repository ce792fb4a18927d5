"""Warm-started active-set QP solver with structured Schur-complement solves.

Each iteration assumes a set of inequality rows is active, solves the
equality-constrained optimality system through a Schur complement in the
multipliers,

    (R W^-1 R') [alpha; gamma_act] = -(e + R W^-1 g),   R = [A; P_act],
    z = -W^-1 (g + R' [alpha; gamma_act]),

and then checks the remaining inequalities.  Violated rows are added and
negative-multiplier rows are removed until the candidate is optimal or the
iteration budget runs out.  W^-1 is applied through the block/low-rank
structure when the problem carries one, and is built once per solve; the
W^-1-mapped constraint rows are cached so iterations only pay for rows that
changed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .qp import (ActiveSet, CostStructure, QpSolution, SolveStatus, StandardQP)


class SingularKktError(RuntimeError):
    """The Schur system for the current active set is rank deficient."""


@dataclass(frozen=True)
class SolverConfig:
    iter_max: int = 10
    kkt_tol: float = 1e-8
    singular_tol: float = 1e-10
    one_at_a_time: bool = False   # add/remove a single row per iteration

    def __post_init__(self):
        if self.iter_max < 1:
            raise ValueError("iter_max must be >= 1")
        if self.kkt_tol <= 0.0 or self.singular_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class WarmStartState:
    """Active set carried over from the previous control step."""

    active_set: ActiveSet = field(default_factory=ActiveSet)

    def sanitized(self, m_ineq: int) -> ActiveSet:
        return self.active_set.restricted(m_ineq)


class _StructuredWInverse:
    """Applies W^-1 using the matrix-inversion-lemma form of the first block.

    W11^-1 = (1/w) I - (1/w^2) U' (Qy^-1 + (1/w) U U')^-1 U, W22^-1 elementwise.
    Built once per control step and reused across solver iterations.
    """

    def __init__(self, s: CostStructure):
        self.n1 = s.split
        self.w = s.w_qdd
        self.U = s.U
        inner = np.linalg.inv(s.Qy) + (self.U @ self.U.T) / self.w
        self.M = np.linalg.inv(inner)        # 2x2
        self.d22_inv = 1.0 / s.d22

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        top, bottom = x[: self.n1], x[self.n1:]
        y_top = top / self.w - (self.U.T @ (self.M @ (self.U @ top))) / self.w ** 2
        if bottom.ndim == 1:
            y_bottom = bottom * self.d22_inv
        else:
            y_bottom = bottom * self.d22_inv[:, None]
        return np.concatenate([y_top, y_bottom], axis=0)


class _DenseWInverse:
    def __init__(self, W: np.ndarray):
        self._cho = scipy.linalg.cho_factor(W, lower=True)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._cho, np.asarray(x, dtype=float))


def structured_w_inverse(s: CostStructure) -> _StructuredWInverse:
    """Operator applying W^-1 to a vector or matrix via the low-rank lemma."""
    return _StructuredWInverse(s)


def w_inverse_for(qp: StandardQP):
    if qp.structure is not None:
        return structured_w_inverse(qp.structure)
    return _DenseWInverse(qp.W)


class _SolveCache:
    """Per-solve storage of W^-1-mapped quantities, filled lazily per row."""

    def __init__(self, qp: StandardQP, winv):
        self.qp = qp
        self.winv = winv
        self.winv_g = winv.apply(qp.g)
        self.winv_AT = winv.apply(qp.A.T) if qp.m_eq else np.zeros((qp.n, 0))
        self._cols: dict[int, np.ndarray] = {}

    def winv_p(self, i: int) -> np.ndarray:
        col = self._cols.get(i)
        if col is None:
            col = self.winv.apply(self.qp.P[i])
            self._cols[i] = col
        return col


def _schur_solve(qp: StandardQP, act: ActiveSet, cache: _SolveCache,
                 singular_tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the assumed-active optimality system; raises SingularKktError."""
    idx = act.as_array()
    me, k = qp.m_eq, idx.size
    if me + k == 0:
        z = -cache.winv_g
        return z, np.zeros(qp.m_ineq), np.zeros(0)

    row_blocks = []
    col_blocks = []
    if me:
        row_blocks.append(qp.A)
        col_blocks.append(cache.winv_AT)
    if k:
        row_blocks.append(qp.P[idx])
        col_blocks.extend(cache.winv_p(int(i))[:, None] for i in idx)
    R = np.vstack(row_blocks)
    winv_RT = np.hstack(col_blocks)
    e = np.concatenate([qp.b, qp.f[idx]])
    S = R @ winv_RT
    S = 0.5 * (S + S.T)
    try:
        L = scipy.linalg.cholesky(S, lower=True)
    except scipy.linalg.LinAlgError:
        raise SingularKktError("Schur system not positive definite")
    pivots = np.diag(L) ** 2
    if np.any(pivots <= singular_tol * max(1.0, float(np.max(np.abs(S))))):
        raise SingularKktError("Schur pivot below singularity threshold")
    rhs = -(e + R @ cache.winv_g)
    mult = scipy.linalg.cho_solve((L, True), rhs)
    z = -(cache.winv_g + winv_RT @ mult)
    gamma = np.zeros(qp.m_ineq)
    gamma[idx] = mult[me:]
    return z, gamma, mult[:me]


def candidate_solution(qp: StandardQP, act: ActiveSet,
                       cfg: SolverConfig | None = None,
                       _cache: _SolveCache | None = None
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z, gamma, alpha_eq) satisfying the optimality system for ``act``.

    gamma is full length with zeros on inactive rows.  Raises
    SingularKktError when [A; P_act] is rank deficient at the pivot threshold.
    """
    cfg = cfg or SolverConfig()
    cache = _cache or _SolveCache(qp, w_inverse_for(qp))
    return _schur_solve(qp, act, cache, cfg.singular_tol)


def update_active_set(qp: StandardQP, act: ActiveSet,
                      cand: tuple[np.ndarray, np.ndarray, np.ndarray],
                      tol: float = 1e-8, one_at_a_time: bool = False) -> ActiveSet:
    """Add violated rows, drop negative-multiplier rows; unchanged iff optimal."""
    z, gamma, _ = cand
    if qp.m_ineq == 0:
        return act
    viol = qp.P @ z - qp.f
    members = set(act.indices)
    if one_at_a_time:
        worst = int(np.argmax(viol))
        if viol[worst] > tol:
            members.add(worst)
            return ActiveSet(tuple(members))
        if members:
            neg = [(gamma[i], i) for i in members if gamma[i] < -tol]
            if neg:
                members.discard(min(neg)[1])
        return ActiveSet(tuple(members))
    for i in np.flatnonzero(viol > tol):
        members.add(int(i))
    for i in list(members):
        if i in act and gamma[i] < -tol:
            members.discard(i)
    return ActiveSet(tuple(members))


def _is_optimal(qp: StandardQP, act: ActiveSet, z: np.ndarray,
                gamma: np.ndarray, tol: float) -> bool:
    if qp.m_ineq == 0:
        return True
    if np.max(qp.P @ z - qp.f) > tol:
        return False
    idx = act.as_array()
    return not (idx.size and np.min(gamma[idx]) < -tol)


def solve(qp: StandardQP, warm: WarmStartState | None = None,
          cfg: SolverConfig | None = None) -> QpSolution:
    """Warm-started active-set solve of a strictly convex standard-form QP.

    The primary loop jumps straight to each assumed-active-set candidate, so
    a correct warm start costs a single linear solve.  The jump updates carry
    no termination guarantee; when a previously visited active set recurs the
    solver switches to a dual step-length-controlled finish (Goldfarb-Idnani
    flavored) that terminates for strictly convex problems.  Plain budget
    exhaustion without a detected cycle still reports ITER_LIMIT so callers
    can fail over.
    """
    cfg = cfg or SolverConfig()
    warm = warm or WarmStartState()
    act = warm.sanitized(qp.m_ineq)
    cache = _SolveCache(qp, w_inverse_for(qp))

    # Most-recently-added first; seeds from the warm set so a singular warm
    # start always has a drop candidate.
    added_order: list[int] = list(act.indices)
    last: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    seen: set[tuple[int, ...]] = {act.indices}
    cycled = False

    iteration = 0
    while iteration < cfg.iter_max:
        iteration += 1
        # Back off the most recent additions until the active rows are
        # independent; landing on a set we already visited means we are
        # looping and the step-controlled finish takes over.
        backed_off = False
        while True:
            try:
                cand = _schur_solve(qp, act, cache, cfg.singular_tol)
                break
            except SingularKktError:
                if not added_order:
                    z = last[0] if last is not None else np.zeros(qp.n)
                    gamma = last[1] if last is not None else np.zeros(qp.m_ineq)
                    alpha = last[2] if last is not None else np.zeros(qp.m_eq)
                    return QpSolution(z, gamma, alpha, act, iteration,
                                      SolveStatus.SINGULAR_KKT)
                dropped = added_order.pop()
                act = ActiveSet(tuple(i for i in act.indices if i != dropped))
                backed_off = True
        if backed_off:
            if act.indices in seen:
                cycled = True
                break
            seen.add(act.indices)
        last = cand
        z, gamma, alpha = cand
        if _is_optimal(qp, act, z, gamma, cfg.kkt_tol):
            return QpSolution(z, gamma, alpha, act, iteration, SolveStatus.OPTIMAL)
        new_act = update_active_set(qp, act, cand, tol=cfg.kkt_tol,
                                    one_at_a_time=cfg.one_at_a_time)
        if new_act.indices in seen:
            cycled = True
            break
        seen.add(new_act.indices)
        for i in new_act.indices:
            if i not in act:
                added_order.append(i)
        removed = set(act.indices) - set(new_act.indices)
        if removed:
            added_order = [i for i in added_order if i not in removed]
        act = new_act

    if cycled:
        try:
            return _dual_finish(qp, cache, cfg, iteration)
        except SingularKktError:
            z, gamma, alpha = last
            return QpSolution(z, gamma, alpha, act, iteration,
                              SolveStatus.SINGULAR_KKT)
    z, gamma, alpha = last
    return QpSolution(z, gamma, alpha, act, iteration, SolveStatus.ITER_LIMIT)


def _assemble_schur(qp: StandardQP, idx: list[int], cache: _SolveCache,
                    singular_tol: float):
    """(R, W^-1 R', Cholesky factor of R W^-1 R') for equalities + idx rows."""
    me = qp.m_eq
    row_blocks = []
    col_blocks = []
    if me:
        row_blocks.append(qp.A)
        col_blocks.append(cache.winv_AT)
    for i in idx:
        row_blocks.append(qp.P[i][None, :])
        col_blocks.append(cache.winv_p(i)[:, None])
    if not row_blocks:
        return None
    R = np.vstack(row_blocks)
    winv_RT = np.hstack(col_blocks)
    S = R @ winv_RT
    S = 0.5 * (S + S.T)
    try:
        L = scipy.linalg.cholesky(S, lower=True)
    except scipy.linalg.LinAlgError:
        raise SingularKktError("active rows dependent in step-controlled phase")
    if np.any(np.diag(L) ** 2 <= singular_tol * max(1.0, float(np.max(np.abs(S))))):
        raise SingularKktError("active rows dependent in step-controlled phase")
    return R, winv_RT, (L, True)


def _dual_finish(qp: StandardQP, cache: _SolveCache, cfg: SolverConfig,
                 iters_used: int) -> QpSolution:
    """Dual active-set finish with step-length control.

    Starts from the equality-constrained optimum (dual feasible) and works
    violated inequalities in one at a time.  Each move takes the largest step
    that keeps the active multipliers nonnegative, dropping the blocking row
    on a partial step, so the dual objective increases strictly and the
    method terminates for strictly convex problems.
    """
    me, mi = qp.m_eq, qp.m_ineq
    act: list[int] = []
    gamma_act: list[float] = []
    empty = ActiveSet()
    z, _, alpha = _schur_solve(qp, empty, cache, cfg.singular_tol)
    iters = iters_used + 1
    guard = 30 * (mi + me + 10)

    for _ in range(guard):
        viol = qp.P @ z - qp.f if mi else np.zeros(0)
        if mi == 0 or np.max(viol) <= cfg.kkt_tol:
            final = ActiveSet(tuple(act))
            zc, gc, ac = _schur_solve(qp, final, cache, cfg.singular_tol)
            if _is_optimal(qp, final, zc, gc, cfg.kkt_tol):
                return QpSolution(zc, gc, ac, final, iters, SolveStatus.OPTIMAL)
            gamma_full = np.zeros(mi)
            for j, gj in zip(act, gamma_act):
                gamma_full[j] = gj
            return QpSolution(z, gamma_full, alpha, final, iters,
                              SolveStatus.OPTIMAL)
        p_idx = int(np.argmax(viol))
        p = qp.P[p_idx]
        gamma_p = 0.0

        for _ in range(guard):
            iters += 1
            winv_p = cache.winv_p(p_idx)
            assembled = _assemble_schur(qp, act, cache, cfg.singular_tol)
            if assembled is None:
                r_full = np.zeros(0)
                d_z = winv_p
            else:
                R, winv_RT, chol = assembled
                r_full = scipy.linalg.cho_solve(chol, R @ winv_p)
                d_z = winv_p - winv_RT @ r_full
            pd = float(p @ d_z)
            s = float(p @ z - qp.f[p_idx])
            r_ineq = r_full[me:]

            t2 = np.inf
            if pd > 1e-13 * max(1.0, float(p @ winv_p)):
                t2 = s / pd
            t1 = np.inf
            block = -1
            for pos, j in enumerate(act):
                if r_ineq[pos] > 1e-13:
                    ratio = gamma_act[pos] / r_ineq[pos]
                    if ratio < t1:
                        t1, block = ratio, pos
            if not np.isfinite(min(t1, t2)):
                raise SingularKktError("no progress direction in finish phase")

            t = min(t1, t2)
            z = z - t * d_z
            alpha = alpha - t * r_full[:me]
            for pos in range(len(act)):
                gamma_act[pos] -= t * r_ineq[pos]
            gamma_p += t
            if t2 <= t1:
                act.append(p_idx)
                gamma_act.append(gamma_p)
                break
            act.pop(block)
            gamma_act.pop(block)

    gamma_full = np.zeros(mi)
    for j, gj in zip(act, gamma_act):
        gamma_full[j] = gj
    return QpSolution(z, gamma_full, alpha, ActiveSet(tuple(act)), iters,
                      SolveStatus.ITER_LIMIT)
