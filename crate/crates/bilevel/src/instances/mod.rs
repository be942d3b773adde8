//! Analytic and data-driven bilevel test problems.
//!
//! Each instance implements [`crate::BilevelOracle`] and, where ground truth
//! exists, [`crate::AnalyticHandles`]. Instances are immutable and safe for
//! shared concurrent reads. Smoothness constants are certified on a stated
//! operating region (the quartic saddle term and the ridge exponential are
//! not globally gradient-Lipschitz).

mod quadratic;
mod ridge;
mod saddle;
pub mod synth;
mod weighting;

pub use quadratic::QuadraticInstance;
pub use ridge::RidgeInstance;
pub use saddle::SaddleInstance;
pub use weighting::{LogisticData, WeightingInstance};

use crate::error::{BilevelError, Result};
use crate::oracle::AnalyticHandles;
use crate::Vector;
use nalgebra::{DMatrix, DVector};

/// Build a quadratic instance `f = 1/2 ||y - a||^2 + 1/2 x'Px`, `g = 1/2 ||y - Bx||^2`.
pub fn make_quadratic(
    a: DVector<f64>,
    b: DMatrix<f64>,
    p: DMatrix<f64>,
) -> Result<QuadraticInstance> {
    QuadraticInstance::new(a, b, p)
}

/// The fixed two-dimensional strict-saddle test bed.
pub fn make_saddle() -> SaddleInstance {
    SaddleInstance::new()
}

/// Ridge-regularizer tuning instance with exact `y*(x)` via direct solve.
pub fn make_ridge(
    a_tr: DMatrix<f64>,
    b_tr: DVector<f64>,
    a_val: DMatrix<f64>,
    b_val: DVector<f64>,
) -> Result<RidgeInstance> {
    RidgeInstance::new(a_tr, b_tr, a_val, b_val)
}

/// Softmax data-source weighting instance with an explicit ridge `mu0`.
pub fn make_weighting(
    sources: Vec<LogisticData>,
    val: LogisticData,
    mu0: f64,
) -> Result<WeightingInstance> {
    WeightingInstance::new(sources, val, mu0)
}

/// Exact penalty proxy `(L*_lam(x), grad L*_lam(x))` from closed-form handles.
///
/// Serves as the oracle the solvers are tested against.
pub fn analytic_penalty_proxy(
    inst: &dyn AnalyticHandles,
    x: &[f64],
    lambda: f64,
) -> Result<(f64, Vector)> {
    if !(lambda > 0.0) {
        return Err(BilevelError::Domain(format!(
            "penalty coefficient must be positive, got {lambda}"
        )));
    }
    let value = inst
        .penalty_value(x, lambda)
        .ok_or(BilevelError::Unsupported("analytic penalty value handle"))?;
    let grad = inst
        .penalty_grad(x, lambda)
        .ok_or(BilevelError::Unsupported("analytic penalty gradient handle"))?;
    Ok((value, grad))
}

/// Spectral norm of a general rectangular matrix.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0))).sqrt()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub(crate) fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_rejects_nonpositive_lambda() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        assert!(analytic_penalty_proxy(&inst, &[0.0], 0.0).is_err());
        assert!(analytic_penalty_proxy(&inst, &[0.0], -1.0).is_err());
    }

    #[test]
    fn scalar_proxy_examples() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let (_, g) = analytic_penalty_proxy(&inst, &[0.0], 9.0).unwrap();
        assert!((g[0] - (-0.9)).abs() < 1e-12);
        let (_, g) = analytic_penalty_proxy(&inst, &[1.0], 17.0).unwrap();
        assert!(g[0].abs() < 1e-12);
        let (_, g19) = analytic_penalty_proxy(&inst, &[0.0], 19.0).unwrap();
        assert!((g19[0] - (-0.95)).abs() < 1e-12);
        // error vs grad phi halves from lambda = 9 to lambda = 19
        let gp = inst.grad_phi(&[0.0]).unwrap();
        let e9: f64 = (-0.9 - gp[0]).abs();
        let e19: f64 = (g19[0] - gp[0]).abs();
        assert!((e9 - 0.1).abs() < 1e-12 && (e19 - 0.05).abs() < 1e-12);
    }
}
