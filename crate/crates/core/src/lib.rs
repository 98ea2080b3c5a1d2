//! Tabular MDP objectives and policy-improvement tools.
//!
//! The objective `J(pi)` is computed in four independent ways (value form,
//! occupancy form, lambda-return form, TD-error form with an arbitrary
//! baseline) so their agreement can be checked numerically. On top of these
//! sit exact generalized advantage estimates, a lower bound on the
//! performance gap between two policies, and a KL trust-region optimizer.
//!
//! Linear systems are solved with LU factorizations from `nalgebra`; random
//! streams come from ChaCha8 keyed by `(seed, index)`.

pub mod error;
pub mod generate;
pub mod lambda;
pub mod mdp;
pub mod numeric;
pub mod objectives;
pub mod optimization;
pub mod sampler;
pub mod suite;
pub mod transition;
pub mod value;

pub use error::{Error, Result};
pub use lambda::{build_lambda_model, effective_discount, lambda_bellman_apply, LambdaModel};
pub use mdp::{induce, validate_mdp, validate_policy, InducedDynamics, MdpFile, MdpModel, PolicyTable, RewardTable};
pub use objectives::{equivalence_report, objective_general, objective_lambda, objective_standard, PhiFunction};
pub use optimization::{
    exact_gae, kl_divergence, optimize, surrogate_bound, trust_region_step, tv_distance, KlDirection,
    TrustRegionConfig,
};
pub use transition::{discounted_distribution, t_step_matrix, Start};
pub use value::{evaluate_exact, evaluate_iterative, evaluate_policy};

/// Crate version, recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
