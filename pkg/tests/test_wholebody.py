import numpy as np
import pytest

import quickstep as qs
from quickstep import active_set as asm
from quickstep.qp import SolveStatus
from quickstep.wholebody import FrictionParam, force_basis
from quickstep.zmp import surrogate_value


@pytest.fixture(scope="module")
def standing():
    model = qs.default_model()
    q0, qd0 = qs.standing_state(model)
    snap = qs.dynamics_snapshot(model, q0, qd0, model.contact_names())
    zmodel = qs.ComZmpModel.constant(0.88, model.gravity)
    vf = qs.balance_value_function(zmodel, np.eye(2))
    x_abs = np.array([snap.com_pos[0], 0.0, snap.com_vel[0], 0.0])
    coeffs = surrogate_value(vf, zmodel, 0.0, x_abs)
    tau_min, tau_max = model.tau_limit_arrays()
    params = qs.ControllerParams(tau_min=tau_min, tau_max=tau_max)
    qdd_des = qs.pd_desired_accel(q0, q0, qd0, params)
    return model, snap, coeffs, qdd_des, params


def make_contact(mu=1.0, n_d=4, nq=7):
    normal = np.array([0.0, 0.0, 1.0])
    return qs.ContactPoint(
        name="c", position=np.zeros(3), normal=normal,
        tangents=qs.tangent_directions(normal, n_d), mu=mu,
        jacobian=np.zeros((3, nq)), jdot_qdot=np.zeros(3))


class TestFrictionGenerators:
    def test_four_tangent_set(self):
        c = make_contact(mu=1.0, n_d=4)
        gens = {tuple(np.round(v, 12)) for v in qs.friction_generators(c)}
        assert gens == {(1.0, 0.0, 1.0), (-1.0, 0.0, 1.0),
                        (0.0, 1.0, 1.0), (0.0, -1.0, 1.0)}

    def test_frictionless_collapses_to_normal(self):
        c = make_contact(mu=0.0)
        for v in qs.friction_generators(c):
            assert np.allclose(v, [0.0, 0.0, 1.0])

    def test_tangential_ratio(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            mu = float(rng.uniform(0.1, 2.0))
            c = qs.ContactPoint("c", np.zeros(3), n,
                                qs.tangent_directions(n, 8), mu,
                                np.zeros((3, 7)), np.zeros(3))
            for v in qs.friction_generators(c):
                normal_part = float(v @ n)
                tangential = np.linalg.norm(v - normal_part * n)
                assert abs(tangential / normal_part - mu) < 1e-12

    def test_tangents_sum_to_zero(self):
        for n_d in (2, 4, 6, 8):
            d = qs.tangent_directions(np.array([0.0, 0.0, 1.0]), n_d)
            assert np.max(np.abs(d.sum(axis=0))) < 1e-12


class TestStewartTrinkle:
    def test_interior_point_strict(self):
        c = make_contact(mu=1.0)
        G, h = qs.stewart_trinkle_rows(c)
        x = np.concatenate([[1.0], np.zeros(4)])   # pure normal force
        slack = h - G @ x
        assert slack[0] == pytest.approx(1.0)      # z >= 0 strictly inside
        assert np.all(slack[1:5] == 0.0)           # beta at the boundary
        assert slack[5] == pytest.approx(1.0)      # cap strictly inside

    def test_cap_boundary(self):
        c = make_contact(mu=0.5)
        G, h = qs.stewart_trinkle_rows(c)
        x = np.concatenate([[1.0], [0.5, 0.0, 0.0, 0.0]])
        assert (G @ x - h)[5] == pytest.approx(0.0)

    def test_same_force_set_as_generators(self):
        # sample random directions; cone membership agrees between the two
        # parameterizations by construction of a shared boundary
        rng = np.random.default_rng(1)
        c = make_contact(mu=0.7, n_d=8)
        V = qs.friction_generators(c).T
        for _ in range(50):
            beta = rng.uniform(0.0, 1.0, size=8)
            lam = V @ beta                      # inside the generator cone
            # reconstruct in the normal-plus-tangents form
            z = float(lam @ c.normal)
            t = lam - z * c.normal
            # decompose tangential part with nonnegative weights
            import scipy.optimize
            w, resid = scipy.optimize.nnls(c.tangents.T, t)
            assert resid < 1e-10
            assert w.sum() <= c.mu * z + 1e-9   # within the cap
            assert qs.cone_residual(c, lam) < 1e-10


class TestPdRule:
    def test_at_rest_at_target(self):
        p = qs.ControllerParams(tau_min=np.array([-1.0]), tau_max=np.array([1.0]))
        q = np.array([0.2, -0.1])
        assert np.all(qs.pd_desired_accel(q, q, np.zeros(2), p) == 0.0)

    def test_arithmetic(self):
        p = qs.ControllerParams(kp=100.0, kd=20.0,
                                tau_min=np.array([-1.0]), tau_max=np.array([1.0]))
        out = qs.pd_desired_accel(np.array([0.1]), np.array([0.0]), np.array([0.0]), p)
        assert out == pytest.approx([10.0])

    def test_matches_recomputation(self):
        rng = np.random.default_rng(2)
        p = qs.ControllerParams(kp=37.0, kd=4.5,
                                tau_min=np.array([-1.0]), tau_max=np.array([1.0]))
        for _ in range(10):
            q_des, q, qd = rng.standard_normal((3, 5))
            out = qs.pd_desired_accel(q_des, q, qd, p)
            assert np.allclose(out, 37.0 * (q_des - q) - 4.5 * qd)


class TestControllerParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            qs.ControllerParams(w_qdd=0.0, tau_min=np.array([-1.0]),
                                tau_max=np.array([1.0]))
        with pytest.raises(ValueError):
            qs.ControllerParams(eta_bounds=(1.0, 2.0),
                                tau_min=np.array([-1.0]), tau_max=np.array([1.0]))
        with pytest.raises(ValueError):
            qs.ControllerParams(tau_min=np.array([2.0]), tau_max=np.array([1.0]))


class TestBuildQp:
    def test_free_floating_no_contacts(self, standing):
        model, _, coeffs, qdd_des, params = standing
        q0, qd0 = qs.standing_state(model)
        snap = qs.dynamics_snapshot(model, q0, qd0, set())
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        assert wb.qp.n == model.nq
        assert wb.qp.m_eq == model.nf
        # floating rows reduce to H_f qdd = -bias_f
        assert np.allclose(wb.qp.A, snap.H[:3])
        assert np.allclose(wb.qp.b, -snap.bias[:3])

    def test_single_contact_bookkeeping(self, standing):
        model, _, coeffs, qdd_des, params = standing
        q0, qd0 = qs.standing_state(model)
        snap = qs.dynamics_snapshot(model, q0, qd0, {"left_heel"})
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        nq = model.nq
        assert wb.qp.n == nq + 4 + 3
        beta_block = wb.qp.W[nq:nq + 4, nq:nq + 4]
        eta_block = wb.qp.W[nq + 4:, nq + 4:]
        assert np.allclose(beta_block, 2.0 * params.eps_beta * np.eye(4))
        assert np.allclose(eta_block, 2.0 * np.eye(3))

    def test_standing_end_to_end(self, standing):
        model, snap, coeffs, qdd_des, params = standing
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        sol = qs.solve(wb.qp)
        assert sol.status is SolveStatus.OPTIMAL
        assert qs.kkt_residual(wb.qp, sol).max_violation() < 1e-8
        qdd = wb.qdd_of(sol.z)
        forces = qs.contact_forces(snap.contacts, wb.cone_of(sol.z),
                                   params.friction_param)
        gen = snap.J_contact.T @ forces.ravel()
        resid = snap.H[:3] @ qdd + snap.bias[:3] - gen[:3]
        assert np.max(np.abs(resid)) < 1e-8
        tau = qs.recover_torques(snap, qdd, wb.cone_of(sol.z))
        assert np.all(tau < params.tau_max) and np.all(tau > params.tau_min)

    def test_row_tags_cover_all_rows(self, standing):
        _, snap, coeffs, qdd_des, params = standing
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        assert len(wb.eq_tags) == wb.qp.m_eq
        assert len(wb.ineq_tags) == wb.qp.m_ineq
        assert "floating-dynamics" in wb.eq_tags
        assert "contact-no-slip" in wb.eq_tags
        assert "torque-limit-upper" in wb.ineq_tags
        assert "slack-lower" in wb.ineq_tags

    def test_joint_limit_rows(self, standing):
        model, _, coeffs, params = standing[0], standing[1], standing[2], standing[4]
        q0, qd0 = qs.standing_state(model)
        q = q0.copy()
        q[3] = model.links[0].q_min           # left hip at its lower stop
        snap = qs.dynamics_snapshot(model, q, qd0, set())
        qdd_des = np.zeros(model.nq)
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        assert "joint-limit-min" in wb.ineq_tags
        row = wb.ineq_tags.index("joint-limit-min")
        assert wb.qp.P[row, 3] == -1.0        # enforces qdd_3 >= 0

    def test_cost_structure_fidelity(self, standing):
        _, snap, coeffs, qdd_des, params = standing
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        s = wb.qp.structure
        assert s is not None
        assert np.allclose(s.U, coeffs.D @ snap.J_com)
        assert np.max(np.abs(s.materialize() - wb.qp.W)) < 1e-12

    def test_stewart_trinkle_layout(self, standing):
        model, snap, coeffs, qdd_des, params = standing
        import dataclasses
        p_st = dataclasses.replace(params, friction_param=FrictionParam.STEWART_TRINKLE)
        wb = qs.build_qp(snap, coeffs, qdd_des, p_st)
        nq, nc, nd = model.nq, 4, params.n_d
        assert wb.qp.n == nq + nc * (nd + 1) + 3 * nc
        assert "cone-cap" in wb.ineq_tags
        sol = qs.solve(wb.qp, cfg=asm.SolverConfig(iter_max=100))
        assert sol.status is SolveStatus.OPTIMAL
        forces = qs.contact_forces(snap.contacts, np.maximum(wb.cone_of(sol.z), 0.0),
                                   FrictionParam.STEWART_TRINKLE)
        for j, c in enumerate(snap.contacts):
            assert qs.cone_residual(c, forces[j]) < 1e-10


class TestLambdaElimination:
    def test_eliminated_vs_explicit(self, standing):
        _, snap, coeffs, qdd_des, params = standing
        wb = qs.build_qp(snap, coeffs, qdd_des, params)
        wb_ex = qs.build_qp(snap, coeffs, qdd_des, params, explicit_lambda=True)
        assert qs.validate_qp(wb_ex.qp) == []
        sol = qs.solve(wb.qp)
        sol_ex = qs.solve(wb_ex.qp, cfg=asm.SolverConfig(iter_max=100))
        assert sol_ex.status is SolveStatus.OPTIMAL
        assert np.max(np.abs(wb.qdd_of(sol.z) - wb_ex.qdd_of(sol_ex.z))) < 1e-8
        # explicit lambda variables match the cone reconstruction
        lam = sol_ex.z[wb_ex.layout.lambda_slice]
        forces = qs.contact_forces(snap.contacts, wb_ex.cone_of(sol_ex.z),
                                   params.friction_param)
        assert np.max(np.abs(lam - forces.ravel())) < 1e-9


class TestRecoverTorques:
    def test_static_gravity_torques(self, standing):
        model, snap, _, _, params = standing
        # forces balancing the floating rows exactly at qdd = 0
        Jf = snap.J_contact.T[:3]
        lam, *_ = np.linalg.lstsq(Jf, snap.bias[:3], rcond=None)
        # fit cone coefficients to that force
        import scipy.optimize
        V = force_basis(snap.contacts[0], params.friction_param)
        coeffs = []
        for j, c in enumerate(snap.contacts):
            w, resid = scipy.optimize.nnls(force_basis(c, params.friction_param),
                                           lam[3 * j:3 * j + 3])
            assert resid < 1e-9
            coeffs.append(w)
        coeffs = np.concatenate(coeffs)
        tau = qs.recover_torques(snap, np.zeros(model.nq), coeffs)
        # independent expectation from the potential-energy gradient
        eps = 1e-6
        grad = np.zeros(model.nq)
        for i in range(model.nq):
            qp_ = snap.q.copy(); qp_[i] += eps
            qm_ = snap.q.copy(); qm_[i] -= eps
            grad[i] = (qs.potential_energy(model, qp_)
                       - qs.potential_energy(model, qm_)) / (2 * eps)
        expected = grad[3:] - (snap.J_contact.T @ lam)[3:]
        assert np.max(np.abs(tau - expected)) < 1e-5

    def test_free_fall_zero_torque(self, standing):
        model = standing[0]
        rng = np.random.default_rng(9)
        q = rng.uniform(-0.5, 0.5, model.nq)
        qd = rng.uniform(-1.0, 1.0, model.nq)
        snap = qs.dynamics_snapshot(model, q, qd, set())
        qdd = np.linalg.solve(snap.H, -snap.bias)
        tau = qs.recover_torques(snap, qdd, np.zeros(0))
        assert np.max(np.abs(tau)) < 1e-10
        resid = snap.H @ qdd + snap.bias
        assert np.max(np.abs(resid)) < 1e-10

    def test_active_torque_limit_recovers_limit(self, standing):
        model, snap, coeffs, qdd_des, params = standing
        import dataclasses
        tight = 0.18   # tight enough to bind at the standing solution
        p2 = dataclasses.replace(params,
                                 tau_min=np.full(model.na, -tight),
                                 tau_max=np.full(model.na, tight))
        wb = qs.build_qp(snap, coeffs, 10.0 * np.ones(model.nq), p2)
        sol = qs.solve(wb.qp, cfg=asm.SolverConfig(iter_max=100))
        assert sol.status is SolveStatus.OPTIMAL
        active_torque_rows = [i for i in sol.active_set
                              if wb.ineq_tags[i].startswith("torque-limit")]
        assert active_torque_rows, "expected a binding torque limit"
        tau = qs.recover_torques(snap, wb.qdd_of(sol.z), wb.cone_of(sol.z))
        assert np.max(np.abs(tau)) == pytest.approx(tight, abs=1e-8)
