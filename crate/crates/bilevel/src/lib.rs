//! Penalty-based solvers for nonconvex-strongly-convex bilevel optimization.
//!
//! The library centers on the penalty reformulation of the bilevel problem
//!
//! ```text
//! min_x phi(x) = f(x, y*(x)),   y*(x) = argmin_y g(x, y),
//! ```
//!
//! replacing `phi` with the proxy `L*_lam(x) = min_y { f(x,y) + lam (g(x,y) - g*(x)) }`
//! whose gradient needs only first-order oracles of `f` and `g`. On top of the
//! shared inner machinery (two warm-started gradient-descent loops in `y` and `z`
//! plus the first-order hypergradient assembly) it provides:
//!
//! * `F2BA` — deterministic two-time-scale outer loop ([`solvers::run_f2ba`]),
//! * `F2BSA` — large-batch stochastic variant ([`solvers::run_f2bsa`]),
//! * `PF2BA` — perturbed variant escaping saddle points ([`solvers::run_pf2ba`]),
//! * `AccF2BA` — restarted Nesterov-accelerated variant ([`solvers::run_accf2ba`]),
//! * `F3BSA` — single-sample stochastic loop with an MLMC-debiased
//!   hypergradient estimator ([`solvers::run_f3bsa`]),
//! * a simulated synchronous distributed variant ([`distributed`]).
//!
//! Analytic test instances with closed-form ground truth live in [`instances`];
//! independent verification oracles (finite differences, proxy-error scans,
//! brute-force grid minimization) live in [`verify`].
//!
//! Multi-seed campaigns, MLMC inner estimators and grid scans are data parallel.
//! They run on rayon when the default `parallel` feature is enabled and fall
//! back to sequential execution (bit-identical results) without it.

pub mod distributed;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod oracle;
pub mod parallel;
pub mod penalty;
pub mod rng;
pub mod solvers;
pub mod trace;
pub mod verify;

pub use error::BilevelError;
pub use oracle::{
    evaluate, sample_gradient, AnalyticHandles, BilevelOracle, CountingOracle, GaussianNoise,
    GradientBundle, SmoothnessInfo,
};
pub use rng::RngStream;
pub use trace::{Status, Trace, TraceRecord};

/// Dense vector type used throughout for iterates and gradients.
pub type Vector = Vec<f64>;

pub use nalgebra;
