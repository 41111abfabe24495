//! Quota mechanisms for K linked copies of a collective decision problem.
//!
//! The crate builds transport-based equilibria of quota mechanisms, evaluates
//! their decision errors against the known bounds, and ships the fixtures and
//! Monte Carlo harness used by the `quotalab` command-line tool.

pub mod dist;
pub mod dynamic;
pub mod env;
pub mod error;
pub mod lab;
pub mod lp;
pub mod mechanism;
pub mod monotonicity;
pub mod tol;
pub mod transport;
pub mod variants;

pub use dist::{empirical_dist, empirical_marginal, product_measure, tv, tv_distance, Dist};
pub use env::{
    scf_extend, Agent, EnvFile, Environment, SocialChoiceFunction, TransferRule, TypeVector,
};
pub use error::{Error, Result};
pub use tol::{Tolerances, TOL};
pub use transport::{
    coupling_to_kernel, cycle_decompose, nearest_optimal_coupling, optimal_mass_on_set, solve_ot,
    CostMatrix, Coupling, CycleDecomposition, Extremum, KernelCoupling, PairSet,
};
pub use monotonicity::{
    agent_cost_matrix, is_cyclically_monotone, is_strictly_cyclically_monotone, rochet_transfers,
    CMReport,
};
pub use mechanism::{
    build_robust_scf, equilibrium_kernel, expost_error, lower_bound_error, menu_equivalence_check,
    play, refined_error_rhs, scan_expost, verify_best_response, EquilibriumStrategy, ErrorReport,
    KernelRule, QuotaMechanism,
};
pub use lab::{
    build_fixture, exact_expected_error, monte_carlo_expected_error, robustness_experiment,
    SimulationReport,
};
pub use variants::{
    approximate_quota, check_type_space, js_play_and_error, js_utility_dominance, shrink_factor,
    verify_robust_equilibrium, FiniteTypeSpace, JSMechanism, JSQuota,
};
pub use dynamic::{
    counterexample_policy, feasible_reports, simulate_discounted, truthful_when_feasible,
    value_iterate, DynamicMechanism, DynamicState, OccupationCoupling, Policy,
};
