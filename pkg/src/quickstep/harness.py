"""Closed-loop scenario runner, solver benchmark, and report generation.

Each control step builds a dynamics snapshot, evaluates the tracking
objective, assembles the whole-body QP, solves it warm-started from the
previous step's active set, recovers torques, and integrates.  When the
active-set method gives up the step fails over to the interior-point solver
and continues, carrying that solver's active set into the next step.

Reports are a per-step CSV, a text summary, and rendered figures (iteration
histogram, tracking error, solve times).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import active_set as asm
from . import plots
from .biped import (ContactSchedule, PlanarModel, com_state, default_model,
                    dynamics_snapshot, integrate_step, standing_state)
from .qp import ActiveSet, SolveStatus, StandardQP, save_qp
from .reference import interior_point_solve
from .wholebody import (ControllerParams, FrictionParam, WholeBodyQp, build_qp,
                        cone_residual, contact_forces, dump_row_tags,
                        pd_desired_accel, recover_torques)
from .zmp import (ComZmpModel, PiecewiseLinearPlan, QuadraticValueFunction,
                  TrackingProblem, balance_value_function, lqr_balance,
                  nominal_com_traj, surrogate_value, tvlqr)


class ScenarioMode(enum.Enum):
    BALANCE = "balance"
    WALK = "walk"


class SolverKind(enum.Enum):
    ACTIVE_SET = "active-set"
    INTERIOR_POINT = "interior-point"


class IntegrationMode(enum.Enum):
    IDEALIZED = "idealized"          # integrate the QP's accelerations
    TORQUE_FORWARD = "torque-forward"  # apply recovered torques + forces


class ScenarioAbort(RuntimeError):
    """Both solvers failed on a step; the offending QP was dumped."""

    def __init__(self, message: str, qp_path: str | None = None):
        super().__init__(message)
        self.qp_path = qp_path


@dataclass
class Scenario:
    name: str
    mode: ScenarioMode
    duration: float
    model: PlanarModel
    params: ControllerParams
    contact_schedule: ContactSchedule
    zmp_plan: PiecewiseLinearPlan            # desired ground point over time
    posture_fn: Callable[[float], np.ndarray]  # q_des(t), full nq
    dt: float = 1e-3
    qy: np.ndarray = field(default_factory=lambda: np.eye(2))
    solver: SolverKind = SolverKind.ACTIVE_SET
    integration_mode: IntegrationMode = IntegrationMode.IDEALIZED
    solver_config: asm.SolverConfig = field(default_factory=asm.SolverConfig)
    seed: int = 0
    perturbation: float = 0.0                # initial base-velocity noise scale

    def __post_init__(self):
        if self.dt <= 0.0 or self.duration <= 0.0:
            raise ValueError("dt and duration must be positive")
        if self.zmp_plan.t_final < self.duration - 1e-9 and self.zmp_plan.times.size > 1:
            raise ValueError("zmp plan must cover the scenario duration")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class ScenarioTrace:
    scenario_name: str
    solver_name: str
    dt: float
    contact_names: tuple[str, ...]
    na: int
    t: np.ndarray
    iterations: np.ndarray
    active_set_changes: np.ndarray
    solve_time: np.ndarray
    failover: np.ndarray
    zmp_error: np.ndarray
    com_error: np.ndarray
    floating_residual: np.ndarray
    cone_residual: np.ndarray
    tau_excess: np.ndarray
    activity: list[int]
    forces: np.ndarray          # (N, n_contacts, 3), zeros when inactive
    tau: np.ndarray             # (N, na)
    zmp_x: np.ndarray
    zmp_des_x: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    def single_iteration_fraction(self) -> float:
        if not len(self):
            return 0.0
        return float(np.mean(self.iterations == 1))

    def multi_iteration_count(self, threshold: int = 2) -> int:
        return int(np.sum(self.iterations >= threshold))


def _empty_trace(sc: Scenario) -> ScenarioTrace:
    z = np.zeros(0)
    return ScenarioTrace(
        scenario_name=sc.name, solver_name=sc.solver.value, dt=sc.dt,
        contact_names=sc.model.contact_names(), na=sc.model.na,
        t=z, iterations=np.zeros(0, dtype=int),
        active_set_changes=np.zeros(0, dtype=int), solve_time=z.copy(),
        failover=np.zeros(0, dtype=bool), zmp_error=z.copy(),
        com_error=z.copy(), floating_residual=z.copy(),
        cone_residual=z.copy(), tau_excess=z.copy(), activity=[],
        forces=np.zeros((0, len(sc.model.contacts), 3)),
        tau=np.zeros((0, sc.model.na)), zmp_x=z.copy(), zmp_des_x=z.copy())


def _build_value_function(sc: Scenario, z_com: float
                          ) -> tuple[ComZmpModel, QuadraticValueFunction]:
    zmodel = ComZmpModel.constant(z_com, sc.model.gravity)
    if sc.mode is ScenarioMode.BALANCE:
        vf = balance_value_function(zmodel, sc.qy, setpoint=(0.0, 0.0))
        return zmodel, vf
    S_final, _ = lqr_balance(zmodel, sc.qy)
    prob = TrackingProblem(Qy=sc.qy, Qf=S_final, y_des=sc.zmp_plan,
                           t_final=sc.duration)
    vf = tvlqr(zmodel, prob, step=sc.dt)
    x0 = np.concatenate([sc.zmp_plan.at(0.0), np.zeros(2)])
    vf = vf.with_nominal(nominal_com_traj(vf, zmodel, x0))
    return zmodel, vf


def _solve_step(qp: StandardQP, warm: ActiveSet, sc: Scenario):
    """Returns (solution, iterations, failover, wall_time)."""
    t0 = time.perf_counter()
    if sc.solver is SolverKind.INTERIOR_POINT:
        sol = interior_point_solve(qp)
        elapsed = time.perf_counter() - t0
        if sol.status is not SolveStatus.OPTIMAL:
            raise ScenarioAbort("interior-point solver failed")
        return sol, sol.iterations, False, elapsed
    sol = asm.solve(qp, asm.WarmStartState(warm), sc.solver_config)
    if sol.status is SolveStatus.OPTIMAL:
        return sol, sol.iterations, False, time.perf_counter() - t0
    ip_sol = interior_point_solve(qp)
    elapsed = time.perf_counter() - t0
    if ip_sol.status is not SolveStatus.OPTIMAL:
        raise ScenarioAbort("active-set and interior-point solvers both failed")
    return ip_sol, sol.iterations, True, elapsed


def run_scenario(sc: Scenario, dump_dir: str | Path | None = None,
                 record_qps: list | None = None,
                 record_wbqps: list | None = None) -> ScenarioTrace:
    """Execute the control loop and collect per-step statistics.

    ``record_qps`` optionally collects (StandardQP, fingerprint) pairs for
    benchmark replays; ``record_wbqps`` collects the full per-step assemblies.
    On a double solver failure the offending QP is dumped to ``dump_dir`` (or
    the working directory) and ScenarioAbort is raised.
    """
    model = sc.model
    rng = np.random.default_rng(sc.seed)
    q, qdot = standing_state(model)
    if sc.perturbation > 0.0:
        qdot = qdot.copy()
        qdot[0] += sc.perturbation * rng.standard_normal()
        qdot[2] += 0.5 * sc.perturbation * rng.standard_normal()

    standing_com_z = _com_height(model, q)
    zmodel, vf = _build_value_function(sc, standing_com_z)

    n = sc.n_steps
    trace = _empty_trace(sc)
    trace.t = np.zeros(n)
    trace.iterations = np.zeros(n, dtype=int)
    trace.active_set_changes = np.zeros(n, dtype=int)
    trace.solve_time = np.zeros(n)
    trace.failover = np.zeros(n, dtype=bool)
    trace.zmp_error = np.zeros(n)
    trace.com_error = np.zeros(n)
    trace.floating_residual = np.zeros(n)
    trace.cone_residual = np.zeros(n)
    trace.tau_excess = np.zeros(n)
    trace.activity = [0] * n
    trace.forces = np.zeros((n, len(model.contacts), 3))
    trace.tau = np.zeros((n, model.na))
    trace.zmp_x = np.zeros(n)
    trace.zmp_des_x = np.zeros(n)

    contact_index = {name: j for j, name in enumerate(model.contact_names())}
    warm = ActiveSet()
    prev_fingerprint = None
    prev_active_rows: frozenset[int] = frozenset()

    for k in range(n):
        t = k * sc.dt
        active = sc.contact_schedule.active_at(t)
        snap = dynamics_snapshot(model, q, qdot, active, t=t, n_d=sc.params.n_d)

        x_abs = np.array([snap.com_pos[0], 0.0, snap.com_vel[0], 0.0])
        if sc.mode is ScenarioMode.BALANCE:
            k_t = sc.zmp_plan.at(t)
            x_bar = x_abs - np.concatenate([k_t, np.zeros(2)])
            y_des = k_t
        else:
            x_bar = vf.deviation(x_abs, t)
            y_des = sc.zmp_plan.at(t)

        coeffs = surrogate_value(vf, zmodel, t, x_bar)
        qdd_des = pd_desired_accel(sc.posture_fn(t), q, qdot, sc.params)
        wb = build_qp(snap, coeffs, qdd_des, sc.params)

        fingerprint = (wb.qp.n, wb.qp.m_ineq, tuple(c.name for c in snap.contacts))
        if fingerprint != prev_fingerprint:
            warm = ActiveSet()
            prev_active_rows = frozenset()
        prev_fingerprint = fingerprint
        if record_qps is not None:
            record_qps.append((wb.qp, fingerprint))
        if record_wbqps is not None:
            record_wbqps.append(wb)

        try:
            sol, iters, failover, elapsed = _solve_step(wb.qp, warm, sc)
        except ScenarioAbort as err:
            path = _dump_failure(wb, sc, k, dump_dir)
            raise ScenarioAbort(f"step {k} (t={t:.3f}s): {err}", path) from err

        warm = sol.active_set
        new_rows = frozenset(sol.active_set.indices)
        trace.active_set_changes[k] = len(new_rows ^ prev_active_rows)
        prev_active_rows = new_rows

        qdd = wb.qdd_of(sol.z)
        # Cone coefficients are sign-constrained; anything below zero is
        # solver-tolerance dust, so project it before reconstructing forces.
        cone = np.maximum(wb.cone_of(sol.z), 0.0)
        tau = recover_torques(snap, qdd, cone, sc.params.friction_param)
        forces = contact_forces(snap.contacts, cone, sc.params.friction_param)

        u_real = snap.J_com @ qdd + snap.Jdot_qdot_com
        y = zmodel.C @ x_abs + zmodel.D(t) @ u_real
        lam_gen = snap.J_contact.T @ forces.ravel() if snap.n_contacts else np.zeros(model.nq)
        float_resid = float(np.max(np.abs(
            snap.H[:model.nf] @ qdd + snap.bias[:model.nf] - lam_gen[:model.nf])))
        cone_res = max((cone_residual(c, forces[j]) for j, c in enumerate(snap.contacts)),
                       default=0.0)
        tmin, tmax = sc.params.tau_min, sc.params.tau_max
        tau_excess = float(max(np.max(tau - tmax, initial=0.0),
                               np.max(tmin - tau, initial=0.0)))

        trace.t[k] = t
        trace.iterations[k] = iters
        trace.solve_time[k] = elapsed
        trace.failover[k] = failover
        trace.zmp_error[k] = float(np.linalg.norm(y - y_des))
        nominal = vf.nominal_state(t) + vf.origin if sc.mode is ScenarioMode.WALK \
            else np.concatenate([y_des, np.zeros(2)])
        trace.com_error[k] = abs(x_abs[0] - nominal[0])
        trace.floating_residual[k] = float_resid
        trace.cone_residual[k] = cone_res
        trace.tau_excess[k] = tau_excess
        trace.activity[k] = sum(1 << int(i) for i in sol.active_set.indices)
        for j, c in enumerate(snap.contacts):
            trace.forces[k, contact_index[c.name]] = forces[j]
        trace.tau[k] = tau
        trace.zmp_x[k] = y[0]
        trace.zmp_des_x[k] = y_des[0]

        if sc.integration_mode is IntegrationMode.IDEALIZED:
            qdd_applied = qdd
        else:
            # Forward-integrate the applied torques plus the reconstructed
            # contact forces.  Without a contact solver in the loop, contact
            # consistency holds only approximately under this mode.
            gen = np.zeros(model.nq)
            gen[model.nf:] = snap.B_input @ tau
            gen += lam_gen
            qdd_applied = np.linalg.solve(snap.H, gen - snap.bias)
        q, qdot = integrate_step(q, qdot, qdd_applied, sc.dt)

    return trace


def _com_height(model: PlanarModel, q: np.ndarray) -> float:
    pos, _, _, _ = com_state(model, q, np.zeros(model.nq))
    return float(pos[1])


def _dump_failure(wb: WholeBodyQp, sc: Scenario, step: int,
                  dump_dir: str | Path | None) -> str:
    out = Path(dump_dir) if dump_dir else Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{sc.name}-step{step:06d}"
    save_qp(wb.qp, f"{stem}.qp.txt")
    with open(f"{stem}.rows.txt", "w") as fh:
        fh.write(dump_row_tags(wb))
    return f"{stem}.qp.txt"


# ---------------------------------------------------------------------------
# Scenario builders
# ---------------------------------------------------------------------------

def _controller_params(model: PlanarModel, friction: FrictionParam,
                       **overrides) -> ControllerParams:
    tau_min, tau_max = model.tau_limit_arrays()
    kw = dict(tau_min=tau_min, tau_max=tau_max, friction_param=friction)
    kw.update(overrides)
    return ControllerParams(**kw)


def _standing_posture(model: PlanarModel) -> np.ndarray:
    q0, _ = standing_state(model)
    return q0


def default_balance_scenario(model: PlanarModel | None = None,
                             duration: float = 4.0,
                             shifts: tuple[tuple[float, float], ...] = ((1.0, 0.05),),
                             seed: int = 0, perturbation: float = 0.0,
                             friction: FrictionParam = FrictionParam.GENERATING_VECTORS,
                             name: str = "balance",
                             **param_overrides) -> Scenario:
    """Standing balance with piecewise-constant ground-point setpoint shifts."""
    model = model or default_model()
    params = _controller_params(model, friction, **param_overrides)
    q0 = _standing_posture(model)

    # Piecewise-constant setpoint encoded with double knots.
    times = [0.0]
    points = [[0.0, 0.0]]
    for t_shift, kx in shifts:
        prev = points[-1]
        times += [t_shift - 1e-9, t_shift]
        points += [prev, [kx, 0.0]]
    times.append(max(duration, times[-1] + 1.0))
    points.append(points[-1])
    plan = PiecewiseLinearPlan(np.array(times), np.array(points))

    # Keep the nominal posture kinematically consistent with the pinned feet:
    # with both contact points of a foot held, the shank is frozen, so a base
    # shift demands matched hip/knee angles and a small base-height drop.
    leg_ik = _leg_posture_ik(model, q0)

    def posture(t: float) -> np.ndarray:
        kx = plan.at(t)[0]
        return leg_ik(kx, None)

    return Scenario(
        name=name, mode=ScenarioMode.BALANCE, duration=duration, model=model,
        params=params, contact_schedule=ContactSchedule.always(model.contact_names()),
        zmp_plan=plan, posture_fn=posture, seed=seed, perturbation=perturbation)


@dataclass(frozen=True)
class WalkSpec:
    n_steps: int = 4
    step_advance: float = 0.06    # forward travel of the swing foot per step
    swing_time: float = 0.6
    double_support: float = 0.3
    lead_in: float = 0.8
    tail: float = 0.6
    swing_knee_bend: float = 0.35   # knee bend amplitude during swing (rad)


def default_walk_scenario(model: PlanarModel | None = None,
                          spec: WalkSpec | None = None, seed: int = 0,
                          perturbation: float = 0.0,
                          friction: FrictionParam = FrictionParam.GENERATING_VECTORS,
                          name: str = "walk",
                          **param_overrides) -> Scenario:
    """Alternating-support stepping gait driven by a scheduled contact plan."""
    model = model or default_model()
    spec = spec or WalkSpec()
    params = _controller_params(model, friction, **param_overrides)
    q0 = _standing_posture(model)

    feet = _foot_groups(model)
    foot_names = sorted(feet)
    if len(foot_names) != 2:
        raise ValueError("walk scenario expects exactly two feet")
    foot_x = {fname: _foot_center_x(model, q0, feet[fname]) for fname in foot_names}

    cycle = spec.double_support + spec.swing_time
    duration = spec.lead_in + spec.n_steps * cycle + spec.tail

    # Desired ground-point knots and the intended foot positions over time.
    plan_t = [0.0]
    plan_x = [float(np.mean(list(foot_x.values())))]
    foot_knots = {f: [(0.0, foot_x[f])] for f in foot_names}
    schedule_entries: list[tuple[float, frozenset[str]]] = [
        (0.0, frozenset(model.contact_names()))]

    x_feet = dict(foot_x)
    for i in range(spec.n_steps):
        t_ds = spec.lead_in + i * cycle
        t_ss = t_ds + spec.double_support
        t_end = t_ss + spec.swing_time
        swing = foot_names[i % 2]
        stance = foot_names[1 - i % 2]
        # Shift the desired point onto the stance foot during double support.
        plan_t += [t_ds, t_ss]
        plan_x += [plan_x[-1], x_feet[stance]]
        # Swing foot travels to its new location during single support.
        new_x = x_feet[swing] + spec.step_advance
        foot_knots[swing] += [(t_ss, x_feet[swing]), (t_end, new_x)]
        x_feet[swing] = new_x
        schedule_entries.append((t_ss, frozenset(
            c.name for c in model.contacts if c.name in feet[stance])))
        schedule_entries.append((t_end, frozenset(model.contact_names())))

    final_center = float(np.mean(list(x_feet.values())))
    t_walk_end = spec.lead_in + spec.n_steps * cycle
    plan_t += [t_walk_end, duration]
    plan_x += [plan_x[-1], final_center]
    plan = PiecewiseLinearPlan(np.array(plan_t),
                               np.column_stack([plan_x, np.zeros(len(plan_x))]))

    foot_plans = {f: (np.array([t for t, _ in foot_knots[f]]),
                      np.array([x for _, x in foot_knots[f]]))
                  for f in foot_names}
    swing_windows = [(spec.lead_in + i * cycle + spec.double_support,
                      spec.lead_in + i * cycle + cycle, foot_names[i % 2])
                     for i in range(spec.n_steps)]
    knee_dof = {f: _knee_dof(model, feet[f]) for f in foot_names}
    leg_ik = _leg_posture_ik(model, q0)

    # The posture tracks the previewed COM trajectory, not the instantaneous
    # desired ground point; the optimal COM leads/lags the plan by design and
    # a posture pinned to the plan would fight it.
    zc = _com_height(model, q0)
    zmodel = ComZmpModel.constant(zc, model.gravity)
    S_final, _ = lqr_balance(zmodel, np.eye(2))
    vf_nom = tvlqr(zmodel, TrackingProblem(np.eye(2), S_final, plan, duration),
                   step=1e-3)
    x_nom = nominal_com_traj(vf_nom, zmodel,
                             np.concatenate([plan.at(0.0), np.zeros(2)]))
    nom_ts, nom_x = vf_nom.ts, x_nom[:, 0]

    def posture(t: float) -> np.ndarray:
        com_target = float(np.interp(t, nom_ts, nom_x))
        targets = {f: float(np.interp(t, *foot_plans[f])) for f in foot_names}
        q_des = leg_ik(com_target, targets)
        for t0, t1, f in swing_windows:
            if t0 <= t < t1:
                s = (t - t0) / (t1 - t0)
                q_des[3 + knee_dof[f]] += spec.swing_knee_bend * np.sin(np.pi * s)
        return q_des

    return Scenario(
        name=name, mode=ScenarioMode.WALK, duration=duration, model=model,
        params=params, contact_schedule=ContactSchedule(tuple(schedule_entries)),
        zmp_plan=plan, posture_fn=posture, seed=seed, perturbation=perturbation)


def friction_compare_scenario(model: PlanarModel | None = None,
                              duration: float = 2.0, seed: int = 0,
                              friction: FrictionParam = FrictionParam.GENERATING_VECTORS,
                              name: str = "friction-compare",
                              **param_overrides) -> Scenario:
    """Balance scenario with setpoint dither that excites tangential-force
    sign flips, the regime where the cone parameterizations behave
    differently."""
    shifts = tuple((0.4 + 0.4 * i, 0.02 * (-1) ** i) for i in range(int((duration - 0.4) / 0.4)))
    return default_balance_scenario(
        model=model, duration=duration, shifts=shifts, seed=seed,
        perturbation=0.05, friction=friction, name=name, **param_overrides)


def _foot_groups(model: PlanarModel) -> dict[str, set[str]]:
    groups: dict[str, set[str]] = {}
    for c in model.contacts:
        groups.setdefault(c.link, set()).add(c.name)
    return groups


def _leg_posture_ik(model: PlanarModel, q0: np.ndarray):
    """Closed-form nominal posture for two-link legs with flat feet.

    Returns posture(com_x_target, foot_targets) where foot_targets optionally
    maps a foot group to its intended ground x.  With a foot's shank held
    upright (both contact points down), a base shift of delta relative to
    that foot requires thigh angle -asin(delta / L1), the opposite knee
    angle, and a base height of knee_z + L1 cos(thigh angle); anything else
    makes the desired-acceleration term fight the contact constraints.  The
    base shift itself is scaled so the posture's COM, not its base, lands on
    the requested point (the pinned shanks do not travel with the base).
    """
    from .biped import _FrameState

    feet = _foot_groups(model)
    fs = _FrameState(model, q0, None)
    geom = {}
    for fname, names in feet.items():
        hip_idx = _hip_dof(model, names)
        knee_idx = _knee_dof(model, names)
        hip = model.links[hip_idx]
        knee_link = model.links[knee_idx]
        geom[fname] = dict(
            hip_dof=hip_idx, knee_dof=knee_idx,
            anchor_x=float(hip.anchor[0]),
            L1=float(np.linalg.norm(knee_link.anchor)),
            knee_z=float(fs.origin[knee_link.name][1]),
            foot_x=_foot_center_x(model, q0, names))
    mid0 = float(np.mean([g["foot_x"] for g in geom.values()]))

    def base_pose(base_x: float, foot_targets: dict[str, float] | None) -> np.ndarray:
        q_des = q0.copy()
        q_des[0] = base_x
        heights = []
        for fname, g in geom.items():
            fx = g["foot_x"] if not foot_targets or fname not in foot_targets \
                else foot_targets[fname]
            delta = (base_x + g["anchor_x"]) - fx
            s = float(np.clip(delta / g["L1"], -0.95, 0.95))
            phi_t = -np.arcsin(s)
            q_des[3 + g["hip_dof"]] = phi_t
            q_des[3 + g["knee_dof"]] = -phi_t
            heights.append(g["knee_z"] + g["L1"] * np.cos(phi_t))
        if heights:
            q_des[1] = float(np.mean(heights))
        return q_des

    eps = 1e-4
    zeros = np.zeros(model.nq)
    com_hi = com_state(model, base_pose(mid0 + eps, None), zeros)[0][0]
    com_lo = com_state(model, base_pose(mid0 - eps, None), zeros)[0][0]
    com_per_base = (com_hi - com_lo) / (2 * eps)

    def posture(com_x_target: float, foot_targets: dict[str, float] | None) -> np.ndarray:
        if foot_targets:
            mid = float(np.mean([foot_targets.get(f, g["foot_x"])
                                 for f, g in geom.items()]))
        else:
            mid = mid0
        base_x = mid + (com_x_target - mid) / com_per_base
        return base_pose(base_x, foot_targets)

    return posture


def _foot_center_x(model: PlanarModel, q0: np.ndarray, names: set[str]) -> float:
    from .biped import _FrameState
    fs = _FrameState(model, q0, None)
    xs = [fs.point(c.link, c.offset)[0][0] for c in model.contacts if c.name in names]
    return float(np.mean(xs))


def _leg_chain(model: PlanarModel, names: set[str]) -> list[int]:
    link_name = next(c.link for c in model.contacts if c.name in names)
    chain = []
    while link_name != model.base.name:
        idx = model.link_index(link_name)
        chain.append(idx)
        link_name = model.links[idx].parent
    return chain[::-1]        # hip first


def _hip_dof(model: PlanarModel, names: set[str]) -> int:
    return _leg_chain(model, names)[0]


def _knee_dof(model: PlanarModel, names: set[str]) -> int:
    chain = _leg_chain(model, names)
    return chain[1] if len(chain) > 1 else chain[0]


# ---------------------------------------------------------------------------
# Benchmark and friction comparison
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    scenario_name: str
    solvers: list[str]
    mean_time: dict[str, float]
    median_time: dict[str, float]
    p99_time: dict[str, float]
    mean_iterations: dict[str, float]
    max_iterations: dict[str, int]
    times: dict[str, np.ndarray]
    iterations: dict[str, np.ndarray]

    def to_csv_text(self) -> str:
        lines = ["solver,mean_time,median_time,p99_time,mean_iterations,max_iterations"]
        for s in self.solvers:
            lines.append(f"{s},{self.mean_time[s]!r},{self.median_time[s]!r},"
                         f"{self.p99_time[s]!r},{self.mean_iterations[s]!r},"
                         f"{self.max_iterations[s]}")
        return "\n".join(lines) + "\n"


def _replay_active_set(qps, cfg: asm.SolverConfig, warm_start: bool):
    times = np.zeros(len(qps))
    iters = np.zeros(len(qps), dtype=int)
    warm = ActiveSet()
    prev_fp = None
    for i, (qp, fp) in enumerate(qps):
        if not warm_start or fp != prev_fp:
            warm = ActiveSet()
        prev_fp = fp
        t0 = time.perf_counter()
        sol = asm.solve(qp, asm.WarmStartState(warm), cfg)
        times[i] = time.perf_counter() - t0
        iters[i] = sol.iterations
        warm = sol.active_set if warm_start else ActiveSet()
    return times, iters


def _replay_interior_point(qps):
    times = np.zeros(len(qps))
    iters = np.zeros(len(qps), dtype=int)
    for i, (qp, _) in enumerate(qps):
        t0 = time.perf_counter()
        sol = interior_point_solve(qp)
        times[i] = time.perf_counter() - t0
        iters[i] = sol.iterations
    return times, iters


def benchmark(sc: Scenario) -> BenchmarkResult:
    """Record the scenario's QP sequence once, then replay it per solver."""
    qps: list = []
    run_scenario(sc, record_qps=qps)
    cfg = sc.solver_config
    results = {}
    results["active-set-warm"] = _replay_active_set(qps, cfg, warm_start=True)
    results["active-set-cold"] = _replay_active_set(qps, cfg, warm_start=False)
    results["interior-point"] = _replay_interior_point(qps)
    solvers = list(results)
    return BenchmarkResult(
        scenario_name=sc.name, solvers=solvers,
        mean_time={s: float(np.mean(v[0])) for s, v in results.items()},
        median_time={s: float(np.median(v[0])) for s, v in results.items()},
        p99_time={s: float(np.percentile(v[0], 99)) for s, v in results.items()},
        mean_iterations={s: float(np.mean(v[1])) for s, v in results.items()},
        max_iterations={s: int(np.max(v[1])) for s, v in results.items()},
        times={s: v[0] for s, v in results.items()},
        iterations={s: v[1] for s, v in results.items()})


@dataclass
class FrictionComparison:
    scenario_name: str
    seeds: list[int]
    multi_gv: np.ndarray        # per-seed count of steps needing >= 2 iterations
    multi_st: np.ndarray
    hist_gv: np.ndarray         # aggregated iteration histogram
    hist_st: np.ndarray
    ratio: float
    ratio_ci: tuple[float, float]

    def to_csv_text(self) -> str:
        lines = ["seed,multi_iter_generating_vectors,multi_iter_stewart_trinkle"]
        for i, seed in enumerate(self.seeds):
            lines.append(f"{seed},{int(self.multi_gv[i])},{int(self.multi_st[i])}")
        lines.append(f"total,{int(self.multi_gv.sum())},{int(self.multi_st.sum())}")
        return "\n".join(lines) + "\n"


def compare_friction(sc: Scenario, n_seeds: int = 10,
                     rng_seed: int = 1234) -> FrictionComparison:
    """Run the scenario under both cone parameterizations over several seeds."""
    seeds = [sc.seed + i for i in range(n_seeds)]
    multi = {FrictionParam.GENERATING_VECTORS: [], FrictionParam.STEWART_TRINKLE: []}
    hists = {FrictionParam.GENERATING_VECTORS: np.zeros(0, dtype=int),
             FrictionParam.STEWART_TRINKLE: np.zeros(0, dtype=int)}
    for param in (FrictionParam.GENERATING_VECTORS, FrictionParam.STEWART_TRINKLE):
        for seed in seeds:
            run = replace(sc, params=replace(sc.params, friction_param=param),
                          seed=seed)
            trace = run_scenario(run)
            multi[param].append(trace.multi_iteration_count())
            h = np.bincount(trace.iterations)
            if h.size > hists[param].size:
                h2 = np.zeros(h.size, dtype=int)
                h2[:hists[param].size] = hists[param]
                hists[param] = h2
            hists[param][:h.size] += h

    gv = np.asarray(multi[FrictionParam.GENERATING_VECTORS], dtype=float)
    st = np.asarray(multi[FrictionParam.STEWART_TRINKLE], dtype=float)
    total_gv, total_st = gv.sum(), st.sum()
    ratio = float(total_st / total_gv) if total_gv > 0 else float("inf")

    rng = np.random.default_rng(rng_seed)
    draws = []
    for _ in range(1000):
        pick = rng.integers(0, len(seeds), size=len(seeds))
        g, s = gv[pick].sum(), st[pick].sum()
        draws.append(s / g if g > 0 else np.inf)
    draws = np.asarray(draws)
    finite = draws[np.isfinite(draws)]
    if finite.size:
        ci = (float(np.percentile(finite, 2.5)), float(np.percentile(finite, 97.5)))
    else:
        ci = (float("inf"), float("inf"))
    return FrictionComparison(sc.name, seeds, gv, st,
                              hists[FrictionParam.GENERATING_VECTORS],
                              hists[FrictionParam.STEWART_TRINKLE], ratio, ci)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("step,t,iterations,active_set_changes,solve_time,failover,"
               "zmp_error,com_error,floating_residual,cone_residual,"
               "tau_excess,activity")


def trace_csv_text(trace: ScenarioTrace) -> str:
    header = CSV_COLUMNS
    for name in trace.contact_names:
        header += f",f_{name}_x,f_{name}_y,f_{name}_z"
    for i in range(trace.na):
        header += f",tau_{i}"
    lines = [header]
    for k in range(len(trace)):
        row = [str(k), repr(float(trace.t[k])), str(int(trace.iterations[k])),
               str(int(trace.active_set_changes[k])),
               repr(float(trace.solve_time[k])),
               "1" if trace.failover[k] else "0",
               repr(float(trace.zmp_error[k])), repr(float(trace.com_error[k])),
               repr(float(trace.floating_residual[k])),
               repr(float(trace.cone_residual[k])),
               repr(float(trace.tau_excess[k])),
               format(trace.activity[k], "x")]
        row += [repr(float(v)) for v in trace.forces[k].ravel()]
        row += [repr(float(v)) for v in trace.tau[k]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def summary_text(trace: ScenarioTrace) -> str:
    lines = [
        f"scenario: {trace.scenario_name}",
        f"solver: {trace.solver_name}",
        f"steps: {len(trace)}",
        f"single_iteration_fraction: {trace.single_iteration_fraction():.6f}",
        f"mean_solve_time_s: {float(np.mean(trace.solve_time)) if len(trace) else 0.0:.9f}",
        f"failover_count: {int(np.sum(trace.failover))}",
        f"max_zmp_error_m: {float(np.max(trace.zmp_error)) if len(trace) else 0.0:.9f}",
    ]
    return "\n".join(lines) + "\n"


def report(trace: ScenarioTrace, out_dir: str | Path,
           basename: str | None = None, figures: bool = True) -> dict[str, str]:
    """Write the per-step CSV, summary text, and figures for a trace."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = basename or f"{trace.scenario_name}-{trace.solver_name}"
    paths: dict[str, str] = {}

    csv_path = out / f"{base}.csv"
    csv_path.write_text(trace_csv_text(trace))
    paths["csv"] = str(csv_path)

    summary_path = out / "summary.txt"
    summary_path.write_text(summary_text(trace))
    paths["summary"] = str(summary_path)

    if figures and len(trace):
        paths["iterations_fig"] = plots.iteration_histogram(
            trace.iterations, out / f"{base}-iterations.png",
            title=f"{trace.scenario_name}: solver iterations per control step")
        paths["tracking_fig"] = plots.tracking_plot(
            trace.t, trace.zmp_x, trace.zmp_des_x, trace.zmp_error,
            out / f"{base}-tracking.png",
            title=f"{trace.scenario_name}: ground-point tracking")
        paths["times_fig"] = plots.solve_time_plot(
            trace.t, trace.solve_time, out / f"{base}-times.png",
            title=f"{trace.scenario_name}: QP solve time")
    return paths


def report_benchmark(result: BenchmarkResult, out_dir: str | Path,
                     figures: bool = True) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}
    csv_path = out / f"{result.scenario_name}-benchmark.csv"
    csv_path.write_text(result.to_csv_text())
    paths["csv"] = str(csv_path)
    if figures:
        paths["fig"] = plots.benchmark_bars(
            result.solvers, [result.mean_time[s] for s in result.solvers],
            out / f"{result.scenario_name}-benchmark.png",
            title=f"{result.scenario_name}: mean QP solve time by solver")
    return paths


def report_friction(cmp: FrictionComparison, out_dir: str | Path,
                    figures: bool = True) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}
    csv_path = out / f"{cmp.scenario_name}-friction.csv"
    csv_path.write_text(cmp.to_csv_text())
    paths["csv"] = str(csv_path)
    summary = out / f"{cmp.scenario_name}-friction-summary.txt"
    summary.write_text(
        f"scenario: {cmp.scenario_name}\n"
        f"seeds: {len(cmp.seeds)}\n"
        f"multi_iteration_steps_generating_vectors: {int(cmp.multi_gv.sum())}\n"
        f"multi_iteration_steps_stewart_trinkle: {int(cmp.multi_st.sum())}\n"
        f"ratio_st_over_gv: {cmp.ratio:.4f}\n"
        f"ratio_ci95: [{cmp.ratio_ci[0]:.4f}, {cmp.ratio_ci[1]:.4f}]\n")
    paths["summary"] = str(summary)
    if figures:
        paths["fig"] = plots.friction_histograms(
            cmp.hist_gv, cmp.hist_st, out / f"{cmp.scenario_name}-friction.png",
            title=f"{cmp.scenario_name}: iteration histograms by cone parameterization")
    return paths


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

def scenario_from_yaml(path) -> Scenario:
    """Build a scenario from its structured-text description.

    Schema (all keys optional unless noted):
      name: str
      mode: balance | walk                      (required)
      duration: float                           (balance only; walk derives it)
      dt, seed, perturbation: floats
      solver: active-set | interior-point
      integration: idealized | torque-forward
      model: "default" or a path to a model yaml
      friction: generating-vectors | stewart-trinkle
      shifts: [[time, x], ...]                  (balance setpoint schedule)
      walk: {n_steps, step_advance, swing_time, double_support,
             lead_in, tail, swing_knee_bend}
      params: {w_qdd, eps_beta, noslip_alpha, eta_min, eta_max, n_d, kp, kd}
      solver_config: {iter_max, kkt_tol, singular_tol, one_at_a_time}
    """
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    mode = ScenarioMode(data["mode"])
    model_spec = data.get("model", "default")
    if model_spec in (None, "default"):
        model = default_model()
    else:
        from .biped import load_model
        model = load_model(model_spec)
    friction = FrictionParam(data.get("friction", "generating-vectors"))

    overrides = {}
    p = data.get("params", {}) or {}
    for key in ("w_qdd", "eps_beta", "noslip_alpha", "n_d", "kp", "kd"):
        if key in p:
            overrides[key] = p[key]
    if "eta_min" in p or "eta_max" in p:
        overrides["eta_bounds"] = (float(p.get("eta_min", -10.0)),
                                   float(p.get("eta_max", 10.0)))

    common = dict(model=model, seed=int(data.get("seed", 0)),
                  perturbation=float(data.get("perturbation", 0.0)),
                  friction=friction, name=data.get("name", mode.value))
    if mode is ScenarioMode.BALANCE:
        shifts = tuple((float(t), float(x)) for t, x in data.get("shifts", []))
        sc = default_balance_scenario(duration=float(data.get("duration", 4.0)),
                                      shifts=shifts, **common, **overrides)
    else:
        spec = WalkSpec(**(data.get("walk", {}) or {}))
        sc = default_walk_scenario(spec=spec, **common, **overrides)

    if "dt" in data:
        sc.dt = float(data["dt"])
    if "solver" in data:
        sc.solver = SolverKind(data["solver"])
    if "integration" in data:
        sc.integration_mode = IntegrationMode(data["integration"])
    if "solver_config" in data:
        sc.solver_config = asm.SolverConfig(**data["solver_config"])
    return sc


def dump_step_qp(sc: Scenario, step: int, out_dir: str | Path) -> str:
    """Run the scenario up to ``step`` and dump that step's QP and row tags."""
    if step < 0 or step >= sc.n_steps:
        raise ValueError(f"step must be in [0, {sc.n_steps})")
    sub = replace(sc, duration=(step + 1) * sc.dt)
    wbqps: list = []
    run_scenario(sub, record_wbqps=wbqps)
    wb = wbqps[step]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{sc.name}-step{step:06d}"
    save_qp(wb.qp, f"{stem}.qp.txt")
    with open(f"{stem}.rows.txt", "w") as fh:
        fh.write(dump_row_tags(wb))
    return f"{stem}.qp.txt"
