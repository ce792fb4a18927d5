import numpy as np
import pytest

import quickstep as qs
from quickstep.qp import ActiveSet, CostStructure, QpSolution, SolveStatus, StandardQP


def make_sol(qp, z, gamma=None, alpha=None, act=(), status=SolveStatus.OPTIMAL):
    return QpSolution(
        z=np.asarray(z, dtype=float),
        gamma=np.asarray(gamma if gamma is not None else np.zeros(qp.m_ineq), dtype=float),
        alpha_eq=np.asarray(alpha if alpha is not None else np.zeros(qp.m_eq), dtype=float),
        active_set=ActiveSet(act), iterations=1, status=status)


def one_var_qp():
    # min 0.5 z^2 - z  s.t.  z <= 0
    return StandardQP(W=[[1.0]], g=[-1.0], A=None, b=None, P=[[1.0]], f=[0.0])


class TestValidate:
    def test_identity_ok(self):
        qp = StandardQP(np.eye(2), np.zeros(2), None, None, np.zeros((0, 2)), np.zeros(0))
        assert qs.validate_qp(qp) == []

    def test_asymmetric_reported(self):
        W = np.eye(2)
        W[0, 1] = 1e-3
        qp = StandardQP(W, np.zeros(2), None, None, None, None, check=False)
        bad = qs.validate_qp(qp)
        assert len(bad) == 1 and "symmetric" in bad[0]

    def test_indefinite_reported(self):
        qp = StandardQP(np.diag([1.0, -1.0]), np.zeros(2), None, None, None, None,
                        check=False)
        bad = qs.validate_qp(qp)
        assert len(bad) == 1 and "positive definite" in bad[0]

    def test_construction_rejects_invalid(self):
        with pytest.raises(ValueError):
            StandardQP(np.diag([1.0, -1.0]), np.zeros(2), None, None, None, None)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="A must be"):
            StandardQP(np.eye(2), np.zeros(2), np.zeros((1, 3)), np.zeros(1),
                       None, None)


class TestActiveSet:
    def test_sorted_unique(self):
        a = ActiveSet((3, 1, 2))
        assert a.indices == (1, 2, 3)
        assert 2 in a and 5 not in a

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            ActiveSet((1, 1))

    def test_restricted_drops_out_of_range(self):
        assert ActiveSet((0, 4, 9)).restricted(5).indices == (0, 4)


class TestKktResidual:
    def test_hand_kkt_point(self):
        qp = one_var_qp()
        res = qs.kkt_residual(qp, make_sol(qp, [0.0], gamma=[1.0], act=(0,)))
        assert res.max_violation() == 0.0

    def test_unconstrained_minimizer_violates(self):
        qp = one_var_qp()
        res = qs.kkt_residual(qp, make_sol(qp, [1.0], gamma=[0.0]))
        assert res.primal_ineq == pytest.approx(1.0)
        assert res.stationarity == 0.0
        assert res.complementarity == 0.0
        assert res.dual_feas == 0.0

    def test_dimension_mismatch_named(self):
        qp = one_var_qp()
        with pytest.raises(ValueError, match="gamma"):
            qs.kkt_residual(qp, make_sol(qp, [0.0], gamma=[1.0, 2.0]))
        with pytest.raises(ValueError, match="z"):
            qs.kkt_residual(qp, make_sol(qp, [0.0, 1.0], gamma=[1.0]))

    def test_brute_force_solutions_pass(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            qp = qs.random_feasible_qp(rng, 5, 4, 2)
            sol = qs.brute_force_solve(qp)
            assert sol.status is SolveStatus.OPTIMAL
            assert qs.kkt_residual(qp, sol).max_violation() < 1e-8


class TestCostStructure:
    def test_materialize_blocks(self):
        rng = np.random.default_rng(0)
        U = rng.standard_normal((2, 3))
        Qy = qs.random_spd(rng, 2)
        s = CostStructure(split=3, w_qdd=0.5, U=U, Qy=Qy, d22=np.array([1.0, 2.0]))
        W = s.materialize()
        assert np.allclose(W[:3, :3], 0.5 * np.eye(3) + U.T @ Qy @ U)
        assert np.allclose(W[3:, 3:], np.diag([1.0, 2.0]))
        assert np.all(W[:3, 3:] == 0.0)

    def test_structure_round_trip_solve(self):
        # structure -> dense W; structure-aware and dense solves agree
        rng = np.random.default_rng(1)
        for _ in range(20):
            qp = qs.random_feasible_qp(rng, 6, 4, 2, structured=True)
            assert qp.structure is not None
            z_structured = qs.solve(qp).z
            z_dense = qs.solve(qp.without_structure()).z
            assert np.max(np.abs(z_structured - z_dense)) < 1e-10

    def test_invalid_structure_flagged(self):
        s = CostStructure(split=2, w_qdd=1.0, U=np.zeros((2, 2)), Qy=np.eye(2),
                          d22=np.array([1.0]))
        qp = StandardQP(np.eye(3) * 2.0, np.zeros(3), None, None, None, None,
                        structure=s, check=False)
        bad = qs.validate_qp(qp)
        assert any("materialize" in b for b in bad)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        for structured in (False, True):
            qp = qs.random_feasible_qp(rng, 5, 3, 2, structured=structured)
            path = tmp_path / f"qp-{structured}.txt"
            qs.save_qp(qp, path)
            back = qs.load_qp(path)
            assert np.array_equal(back.W, qp.W)
            assert np.array_equal(back.g, qp.g)
            assert np.array_equal(back.A, qp.A)
            assert np.array_equal(back.b, qp.b)
            assert np.array_equal(back.P, qp.P)
            assert np.array_equal(back.f, qp.f)
            assert (back.structure is None) == (qp.structure is None)
            if structured:
                assert np.array_equal(back.structure.U, qp.structure.U)
                assert np.array_equal(back.structure.d22, qp.structure.d22)

    def test_header(self):
        text = qs.dump_qp(one_var_qp())
        lines = text.splitlines()
        assert lines[0] == "standard-qp v1"
        assert lines[1] == "n 1 m_eq 0 m_ineq 1 structured 0"

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError, match="unrecognized"):
            qs.parse_qp("nonsense\n")

    def test_no_constraints_round_trip(self):
        qp = StandardQP(np.eye(2), np.array([1.0, -2.0]), None, None, None, None)
        back = qs.parse_qp(qs.dump_qp(qp))
        assert back.m_eq == 0 and back.m_ineq == 0
        assert np.array_equal(back.g, qp.g)


class TestImmutability:
    def test_arrays_read_only(self):
        qp = one_var_qp()
        with pytest.raises(ValueError):
            qp.W[0, 0] = 2.0
