//! Outer loops of the solver family.

mod fo;
mod mlmc;
mod so;

pub use fo::{
    run_f2ba, run_f2ba_with_probe, run_f2bsa, run_f2bsa_with_probe, theorem2_batches, FoConfig,
    InnerSchedule,
};
pub use mlmc::{
    expected_sfo, hypergrad_est, mlmc_hypergrad, run_f3bsa, run_f3bsa_with_probe, sgd_avg, sgd_sc,
    sgd_sc_cost, EstimatorSample, F3Config, MlmcConfig,
};
pub use so::{
    pf2ba_config, run_accf2ba, run_accf2ba_with_probe, run_pf2ba, run_pf2ba_with_probe, AgdConfig,
    PerturbConfig,
};

use crate::oracle::SmoothnessInfo;

/// Divergence guard shared by every outer loop.
pub(crate) const DIVERGENCE_NORM: f64 = 1e8;

/// Penalty coefficient `lam = max{kappa/R, ell kappa^2/Delta, ell kappa^3/eps}`
/// with unit constants, clamped to the admissible floor `2 L_f / mu`.
pub fn theorem1_lambda(smooth: &SmoothnessInfo, eps: f64, delta_gap: f64, r_warm: f64) -> f64 {
    let ell = smooth.ell();
    let kappa = smooth.kappa();
    let r = r_warm.max(1e-6);
    let lam = (kappa / r)
        .max(ell * kappa * kappa / delta_gap.max(1e-12))
        .max(ell * kappa.powi(3) / eps);
    lam.max(smooth.lambda_floor())
}

/// Second-order variant adds the `kappa^3.5 sqrt(ell / eps)` term.
pub fn theorem3_lambda(smooth: &SmoothnessInfo, eps: f64, delta_gap: f64, r_warm: f64) -> f64 {
    let kappa = smooth.kappa();
    theorem1_lambda(smooth, eps, delta_gap, r_warm)
        .max(kappa.powf(3.5) * (smooth.ell() / eps).sqrt())
}

/// Fixed inner iteration count making the inner error factor
/// `gamma = lam^2 L_g^2 exp(-mu K / (4 L_g))` small enough for the descent
/// argument at outer step `eta_x`: `gamma <= min{mu^2/(1088 eta_x^2 L_g^2), 1/(4 eta_x)}`.
pub fn theorem1_fixed_k(smooth: &SmoothnessInfo, lambda: f64, eta_x: f64) -> usize {
    let lg = smooth.l_g;
    let gamma_target = (smooth.mu * smooth.mu / (1088.0 * eta_x * eta_x * lg * lg))
        .min(1.0 / (4.0 * eta_x));
    let ratio = (lambda * lambda * lg * lg / gamma_target).max(std::f64::consts::E);
    let k = 4.0 * lg / smooth.mu * ratio.ln();
    let floor = (8.0 * lg / smooth.mu).ceil().max(1.0);
    k.ceil().max(floor) as usize
}

/// `zeta` for [`crate::penalty::schedule_k`] so the assembled hypergradient
/// error stays below `err`: after the scheduled inner steps both squared
/// residuals are at most `zeta / (4 lam L_g)` and the assembly amplifies
/// residuals by at most `3 lam L_g`.
pub fn zeta_for_grad_error(lambda: f64, l_g: f64, err: f64) -> f64 {
    (2.0 * err / 3.0).powi(2) / (lambda * l_g)
}
