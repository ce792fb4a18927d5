import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

import quickstep as qs
from quickstep.zmp import PiecewiseLinearPlan, TrackingProblem


def care_hamiltonian_oracle(A, B, Q, R, N):
    """Stable-invariant-subspace solve on the explicit Hamiltonian matrix."""
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    Ah = A - B @ Rinv @ N.T
    Qh = Q - N @ Rinv @ N.T
    H = np.block([[Ah, -B @ Rinv @ B.T], [-Qh, -Ah.T]])
    T, Z, sdim = scipy.linalg.schur(H, sort=lambda w: w.real < 0.0)
    assert sdim == n
    U = Z[:, :n]
    return U[n:] @ np.linalg.inv(U[:n])


@pytest.fixture(scope="module")
def balance_model():
    return qs.ComZmpModel.constant(1.0, 9.81)


@pytest.fixture(scope="module")
def balance_design(balance_model):
    return qs.lqr_balance(balance_model, np.eye(2))


class TestModel:
    def test_state_space_form(self, balance_model):
        m = balance_model
        assert np.array_equal(m.A[:2, 2:], np.eye(2))
        assert np.count_nonzero(m.A) == 2
        assert np.array_equal(m.B[2:], np.eye(2))
        assert np.array_equal(m.C, np.hstack([np.eye(2), np.zeros((2, 2))]))

    def test_output_origin(self, balance_model):
        assert np.allclose(qs.zmp_output(balance_model, np.zeros(4), np.zeros(2)), 0.0)

    def test_classical_formula(self):
        m = qs.ComZmpModel.constant(1.0, 10.0)
        y = qs.zmp_output(m, [0.3, 0.0, 0.0, 0.0], [1.0, 0.0])
        assert y == pytest.approx([0.2, 0.0])

    def test_scheduled_height_matches_definition(self):
        z = lambda t: 1.0 + 0.1 * np.sin(t)
        zd = lambda t: 0.1 * np.cos(t)
        zdd = lambda t: -0.1 * np.sin(t)
        m = qs.ComZmpModel.scheduled(z, zd, zdd, domain=(0.0, 5.0), gravity=9.81)
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = float(rng.uniform(0, 5))
            x = rng.standard_normal(4)
            u = rng.standard_normal(2)
            expect = m.C @ x - (z(t) / (zdd(t) + 9.81)) * u
            assert np.allclose(qs.zmp_output(m, x, u, t), expect, atol=1e-14)

    def test_domain_enforced(self):
        m = qs.ComZmpModel.scheduled(lambda t: 1.0, lambda t: 0.0, lambda t: 0.0,
                                     domain=(0.0, 1.0))
        with pytest.raises(ValueError, match="domain"):
            qs.zmp_output(m, np.zeros(4), np.zeros(2), 2.0)

    def test_falling_height_rejected(self):
        with pytest.raises(ValueError, match="zddot"):
            qs.ComZmpModel.scheduled(lambda t: 1.0, lambda t: 0.0,
                                     lambda t: -20.0, domain=(0.0, 1.0))


class TestCare:
    def test_scalar_fixture(self):
        # xdot = u with unit state and input cost: S = 1
        S = qs.solve_care(np.zeros((1, 1)), np.eye(1), np.eye(1), np.eye(1))
        assert abs(S[0, 0] - 1.0) < 1e-12

    def test_balance_residual(self, balance_model, balance_design):
        S, K = balance_design
        m = balance_model
        C, D = m.C, m.D(0.0)
        Q, R, N = C.T @ C, D.T @ D, C.T @ D
        assert qs.care_residual(m.A, m.B, Q, R, N, S) < 1e-8
        assert np.max(np.linalg.eigvals(m.A - m.B @ K).real) < 0.0

    def test_hamiltonian_oracle(self, balance_model, balance_design):
        S, _ = balance_design
        m = balance_model
        C, D = m.C, m.D(0.0)
        S_ref = care_hamiltonian_oracle(m.A, m.B, C.T @ C, D.T @ D, C.T @ D)
        assert np.max(np.abs(S - S_ref)) < 1e-8

    def test_closed_loop_quadrature(self, balance_model, balance_design):
        S, K = balance_design
        m = balance_model
        x0 = np.array([0.1, 0.0, 0.0, 0.0])
        CD = m.C - m.D(0.0) @ K
        Acl = m.A - m.B @ K

        def rhs(t, y):
            x = y[:4]
            out = CD @ x
            return np.concatenate([Acl @ x, [out @ out]])

        sol = scipy.integrate.solve_ivp(rhs, (0.0, 25.0),
                                        np.concatenate([x0, [0.0]]),
                                        rtol=1e-11, atol=1e-13)
        J_num = sol.y[4, -1]
        J_pred = x0 @ S @ x0
        assert abs(J_num - J_pred) / abs(J_pred) < 1e-3


@pytest.fixture(scope="module")
def walking_vf(balance_design):
    model = qs.ComZmpModel.constant(1.0, 9.81)
    S, _ = balance_design
    plan = PiecewiseLinearPlan(
        np.array([0.0, 1.0, 1.5, 3.0, 3.5, 5.0]),
        np.array([[0.0, 0.0], [0.0, 0.0], [0.12, 0.0], [0.12, 0.0],
                  [0.25, 0.0], [0.25, 0.0]]))
    prob = TrackingProblem(Qy=np.eye(2), Qf=S, y_des=plan, t_final=5.0)
    vf = qs.tvlqr(model, prob, step=1e-3)
    x0 = np.concatenate([plan.at(0.0), np.zeros(2)])
    return model, vf.with_nominal(qs.nominal_com_traj(vf, model, x0)), prob


class TestTvlqr:
    def test_stationary_fixture(self, balance_model, balance_design):
        S, _ = balance_design
        plan = PiecewiseLinearPlan.constant((0.0, 0.0), t_final=2.0)
        prob = TrackingProblem(Qy=np.eye(2), Qf=S, y_des=plan, t_final=2.0)
        vf = qs.tvlqr(balance_model, prob, step=1e-3)
        assert np.max(np.abs(vf.S - S)) < 1e-6

    def test_boundary_exact(self, walking_vf):
        _, vf, prob = walking_vf
        assert np.array_equal(vf.S[-1], prob.Qf)
        assert np.all(vf.s1[-1] == 0.0)
        assert vf.s0[-1] == 0.0

    def test_step_halving(self, walking_vf):
        model, vf, prob = walking_vf
        vf_half = qs.tvlqr(model, prob, step=5e-4)
        assert np.max(np.abs(vf.S[0] - vf_half.S[0])) < 1e-6
        assert np.max(np.abs(vf.s1_at(0.0) - vf_half.s1_at(0.0))) < 1e-6

    def test_samples_psd(self, walking_vf):
        _, vf, _ = walking_vf
        eigs = np.linalg.eigvalsh(vf.S)
        assert float(eigs[:, 0].min()) > -1e-10

    def test_scheduled_height_horizon(self, balance_design):
        # time-varying input map exercises the time dependence of the
        # Riccati coefficients; the quadratic term must leave its boundary
        S, _ = balance_design
        m = qs.ComZmpModel.scheduled(
            lambda t: 1.0 + 0.05 * np.sin(2 * t),
            lambda t: 0.10 * np.cos(2 * t),
            lambda t: -0.20 * np.sin(2 * t), domain=(0.0, 1.0))
        plan = PiecewiseLinearPlan(np.array([0.0, 1.0]),
                                   np.array([[0.0, 0.0], [0.05, 0.0]]))
        prob = TrackingProblem(np.eye(2), S, plan, 1.0)
        vf = qs.tvlqr(m, prob, step=1e-3)
        assert np.array_equal(vf.S[-1], S)
        assert np.max(np.abs(vf.S[0] - S)) > 1e-4
        vf_half = qs.tvlqr(m, prob, step=5e-4)
        assert np.max(np.abs(vf.S - vf_half.S[::2])) < 1e-6


class TestNominal:
    def test_equilibrium_stays(self, balance_model, balance_design):
        S, _ = balance_design
        plan = PiecewiseLinearPlan.constant((0.0, 0.0), t_final=2.0)
        prob = TrackingProblem(np.eye(2), S, plan, 2.0)
        vf = qs.tvlqr(balance_model, prob, step=1e-3)
        xs = qs.nominal_com_traj(vf, balance_model, np.zeros(4))
        assert np.max(np.abs(xs)) < 1e-9

    def test_setpoint_shift_converges(self, balance_model, balance_design):
        S, _ = balance_design
        k = np.array([0.07, 0.0])
        plan = PiecewiseLinearPlan.constant(k, t_final=6.0)
        prob = TrackingProblem(np.eye(2), S, plan, 6.0)
        vf = qs.tvlqr(balance_model, prob, step=1e-3)
        xs = qs.nominal_com_traj(vf, balance_model, np.zeros(4))
        assert np.max(np.abs(xs[-1, :2] - k)) < 1e-3

    def test_half_step_reintegration(self, walking_vf):
        model, vf, prob = walking_vf
        x0 = np.concatenate([prob.y_des.at(0.0), np.zeros(2)])
        xs = qs.nominal_com_traj(vf, model, x0)
        vf_half = qs.tvlqr(model, prob, step=5e-4)
        xs_half = qs.nominal_com_traj(vf_half, model, x0)
        assert np.max(np.abs(xs[-1] - xs_half[-1])) < 1e-6


class TestSurrogateObjective:
    def test_on_nominal_zero(self, balance_model):
        vf = qs.balance_value_function(balance_model, np.eye(2))
        co = qs.surrogate_value(vf, balance_model, 0.0, np.zeros(4))
        assert np.allclose(co.h_u, 0.0)
        assert np.allclose(-0.5 * np.linalg.solve(co.H_uu, co.h_u), 0.0)

    def test_balance_minimizer_is_gain(self, balance_model, balance_design):
        _, K = balance_design
        vf = qs.balance_value_function(balance_model, np.eye(2))
        rng = np.random.default_rng(4)
        for _ in range(30):
            xbar = rng.standard_normal(4)
            co = qs.surrogate_value(vf, balance_model, 0.0, xbar)
            ustar = -0.5 * np.linalg.solve(co.H_uu, co.h_u)
            assert np.max(np.abs(ustar + K @ xbar)) < 1e-9

    def test_coefficients_match_direct_evaluation(self, walking_vf):
        model, vf, _ = walking_vf
        rng = np.random.default_rng(5)
        for _ in range(25):
            t = float(rng.uniform(0.0, vf.t_final))
            xbar = rng.standard_normal(4)
            ubar = rng.standard_normal(2)
            co = qs.surrogate_value(vf, model, t, xbar)
            via_coeffs = float(ubar @ co.H_uu @ ubar + co.h_u @ ubar + co.h_0)

            S, s1_dev, yhat = vf.deviation_terms(t)
            ybar = model.C @ xbar + model.D(t) @ ubar + yhat
            grad = 2.0 * S @ xbar + s1_dev
            direct = float(ybar @ vf.Qy @ ybar
                           + grad @ (model.A @ xbar + model.B @ ubar))
            assert abs(via_coeffs - direct) < 1e-12 * max(1.0, abs(direct))

    def test_policy_identity_both_designs(self, balance_model, walking_vf):
        # minimizer of the surrogate equals the gain times the deviation
        rng = np.random.default_rng(6)
        bal_vf = qs.balance_value_function(balance_model, np.eye(2))
        model, walk_vf, _ = walking_vf
        for vf, m in ((bal_vf, balance_model), (walk_vf, model)):
            for _ in range(100):
                t = 0.0 if vf.stationary else float(rng.uniform(0, vf.t_final))
                xbar = rng.standard_normal(4)
                co = qs.surrogate_value(vf, m, t, xbar)
                ustar = -0.5 * np.linalg.solve(co.H_uu, co.h_u)
                assert np.max(np.abs(ustar + vf.gain_at(t) @ xbar)) < 1e-6

    def test_value_decrease_along_closed_loop(self, balance_model, balance_design):
        S, K = balance_design
        vf = qs.balance_value_function(balance_model, np.eye(2))
        x = np.array([0.08, -0.02, 0.0, 0.05])
        dt = 1e-3
        prev = vf.value_at(0.0, x)
        Acl = balance_model.A - balance_model.B @ K
        for _ in range(4000):
            k1 = Acl @ x
            k2 = Acl @ (x + 0.5 * dt * k1)
            k3 = Acl @ (x + 0.5 * dt * k2)
            k4 = Acl @ (x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            val = vf.value_at(0.0, x)
            assert val <= prev + 1e-6
            prev = val

    def test_gradient_matches_finite_differences(self, walking_vf):
        model, vf, _ = walking_vf
        rng = np.random.default_rng(7)
        eps = 1e-6
        for _ in range(20):
            t = float(rng.uniform(0, vf.t_final))
            xbar = rng.standard_normal(4)
            grad = vf.gradient_at(t, xbar)
            fd = np.zeros(4)
            for i in range(4):
                dx = np.zeros(4)
                dx[i] = eps
                fd[i] = (vf.value_at(t, xbar + dx) - vf.value_at(t, xbar - dx)) / (2 * eps)
            scale = max(1.0, np.max(np.abs(grad)))
            assert np.max(np.abs(grad - fd)) / scale < 1e-6


class TestExport:
    def test_csv_header_and_rows(self, tmp_path, balance_model):
        vf = qs.balance_value_function(balance_model, np.eye(2))
        path = tmp_path / "vf.csv"
        qs.export_value_function_csv(vf, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("t,S00,S01")
        assert len(lines) == 1 + vf.ts.size
