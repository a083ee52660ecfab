//! Policy evaluation from logged bandit data when the true confounder is
//! latent and only noisy proxies are observed.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: the synthetic generalized-linear data-generating process,
//!   target policies and Monte-Carlo ground truth.
//! - [`posterior`]: a deterministic 1-D quadrature oracle for the latent
//!   posterior `φ(z; x, t)` and the conditional moments built on it.
//! - [`kernel`]: Gaussian kernels, Gram estimation over the latent posterior
//!   and kernel ridge regression.
//! - [`balance`]: the adversarial balancing quadratic program, its
//!   unconstrained and simplex-constrained solvers, and a brute-force oracle.
//! - [`estimators`]: weighted, direct and doubly robust estimators together
//!   with the baseline weightings and outcome models.
//! - [`harness`]: seeded replications, aggregation and table emission.

pub mod balance;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod points;
pub mod posterior;
pub mod rng;
pub mod scenario;
pub mod selftest;

pub use balance::{
    adversarial_objective, build_qp, optx_weights, solve_simplex, solve_unconstrained, Constraint,
    QpProblem, ScaleConvention, WeightVector,
};
pub use error::{Error, Result};
pub use estimators::{
    direct_estimate, doubly_robust_estimate, ips_weights, oracle_latent_weights, weighted_estimate,
    EstimateReport, EtaSource, OutcomeModel,
};
pub use kernel::{GaussianKernel, GramEstimate, GramSource, KernelRidge};
pub use points::Points;
pub use posterior::{BasePosterior, LatentGrid, LatentPosterior};
pub use scenario::{Link, LoggedDataset, ScenarioParams, SoftmaxPolicy};
