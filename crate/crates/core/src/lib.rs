//! Activation-based algorithms for the prophet secretary problem and prophet
//! secretary matching, plus the numerical machinery that certifies their
//! competitive ratios and a Monte Carlo harness validating the per-item and
//! per-edge guarantees on concrete instances.
//!
//! Modules:
//! - [`instance`]: discrete-distribution instances and derived win tables.
//! - [`hfn`]: the bound function `h_s(x)` and its regularity checks.
//! - [`ratio`]: closed-form competitive-ratio evaluation, threshold search,
//!   and grid certification with rounding-error accounting.
//! - [`secretary`]: executable activation policies and the exact
//!   acceptance-probability oracle.
//! - [`matching`]: prophet secretary matching (MAM, CAR, hybrid) with the LP
//!   feasibility checker and brute-force offline benchmark.
//! - [`montecarlo`]: deterministic parallel trial runner and dominance reports.

pub mod hfn;
pub mod instance;
pub mod matching;
pub mod montecarlo;
pub mod ratio;
pub mod secretary;

pub use hfn::{h_eval, h_inner, h_limit_at_zero, h_lipschitz_check, HQuery};
pub use instance::{derived_stats, gen_hard_instance, DerivedStats, Instance, InstanceError, ValueAtom};
pub use matching::{
    brute_force_marginals, brute_force_offline, car_alpha, car_run, check_lp, check_qc_polytope,
    gamma_car, gamma_mam, hybrid_bound_check, hybrid_run, jl_mu, mam_run, normalize_regular,
    CarAlgorithm, HybridAlgorithm, LpSolution, LpViolation, MamAlgorithm, Matching,
    MatchingError, MatchingInstance, MuTable, TypeGraph,
};
pub use montecarlo::{
    dominance_report, estimate, DominanceReport, EdgeKey, MatchAlgorithm, MatchRunner, PairKey,
    PolicyRunner, Runner, TrialOutcome, TrialReport,
};
pub use ratio::{
    build_k, build_l, certify_grid, gamma_eval, int_exp_neg, int_exp_neg_affine, optimize_betas,
    BreakpointFn, Certificate, GammaPoint, RatioError, SSchedule, SearchSpec,
};
pub use secretary::{
    exact_accept_probs, policy_constant, policy_main, policy_step, simulate_once, z_select,
    Policy, SecretaryError, ZTable,
};
