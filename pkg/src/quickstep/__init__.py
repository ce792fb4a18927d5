"""quickstep: a desk-scale whole-body QP balance/walking control toolkit.

A warm-started active-set QP solver that exploits block/low-rank cost
structure, LQR value functions for planar COM/ground-point dynamics used as
QP objectives, a whole-body QP builder with polyhedral friction, and a planar
biped harness that generates temporally coherent QP sequences.
"""

from .qp import (ActiveSet, CostStructure, KktResidual, QpSolution,
                 SolveStatus, StandardQP, dump_qp, kkt_residual, load_qp,
                 parse_qp, save_qp, validate_qp)
from .active_set import (SingularKktError, SolverConfig, WarmStartState,
                         candidate_solution, solve, structured_w_inverse,
                         update_active_set)
from .reference import (brute_force_solve, interior_point_solve,
                        random_feasible_qp, random_spd)
from .zmp import (ComZmpModel, PiecewiseLinearPlan, QuadraticValueFunction,
                  TrackingProblem, ValueCoeffs, balance_value_function,
                  care_residual, export_value_function_csv, lqr_balance,
                  nominal_com_traj, solve_care, surrogate_value, tvlqr,
                  zmp_output)
from .wholebody import (ContactPoint, ControllerParams, DynamicsSnapshot,
                        FrictionParam, WholeBodyQp, build_qp, cone_residual,
                        contact_forces, friction_generators, pd_desired_accel,
                        recover_torques, stewart_trinkle_rows,
                        tangent_directions)
from .biped import (ContactSchedule, FootContact, Link, PlanarModel,
                    bias_vector, com_state, default_model, dynamics_snapshot,
                    integrate_step, kinetic_energy, load_model, mass_matrix,
                    potential_energy, standing_state)
from .harness import (IntegrationMode, Scenario, ScenarioAbort, ScenarioMode,
                      ScenarioTrace, SolverKind, WalkSpec, benchmark,
                      compare_friction, default_balance_scenario,
                      default_walk_scenario, dump_step_qp,
                      friction_compare_scenario, report, report_benchmark,
                      report_friction, run_scenario, scenario_from_yaml,
                      summary_text, trace_csv_text)

__version__ = "0.1.0"
