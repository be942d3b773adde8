//! Shared inner machinery of the penalty solvers.
//!
//! Two warm-started inner loops run at each outer iteration: gradient descent
//! on `f(x, .) + lam g(x, .)` drives `y` toward `y*_lam(x)`, and gradient
//! descent on `lam g(x, .)` drives `z` toward `y*(x)`. The first-order
//! hypergradient is then assembled as
//!
//! ```text
//! G = grad_x f(x, y_K) + lam (grad_x g(x, y_K) - grad_x g(x, z_K)),
//! ```
//!
//! which equals `grad L*_lam(x)` exactly at the inner minimizers. The
//! `delta` recursion certifies an upper bound on the warm-start distances
//! `||y - y*_lam(x)||^2 + ||z - y*(x)||^2` across outer steps, and
//! [`schedule_k`] turns that bound into an inner iteration count.

use crate::error::{check_dim, BilevelError, Result};
use crate::linalg;
use crate::oracle::{BilevelOracle, SmoothnessInfo};
use crate::rng::RngStream;
use crate::Vector;

/// Penalty coefficient and inner step sizes.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyParams {
    pub lambda: f64,
    pub eta_y: f64,
    pub eta_z: f64,
}

impl PenaltyParams {
    pub fn new(lambda: f64, eta_y: f64, eta_z: f64) -> Result<Self> {
        if !(lambda > 0.0 && eta_y > 0.0 && eta_z > 0.0) {
            return Err(BilevelError::Domain(format!(
                "penalty parameters must be positive (lambda={lambda}, eta_y={eta_y}, eta_z={eta_z})"
            )));
        }
        Ok(Self {
            lambda,
            eta_y,
            eta_z,
        })
    }

    /// The two-time-scale setting `eta_y = eta_z = 1/(2 lam L_g)`.
    pub fn theorem1(lambda: f64, smooth: &SmoothnessInfo) -> Self {
        let eta = 1.0 / (2.0 * lambda * smooth.l_g);
        Self {
            lambda,
            eta_y: eta,
            eta_z: eta,
        }
    }

    /// Tighter steps from the inner objectives' own smoothness:
    /// `eta_y = 1/(L_f + lam L_g)` and `eta_z = 1/(lam L_g)` (an effective
    /// step of `1/L_g` on `g`). Both satisfy the contraction lemma; these
    /// converge faster and are the library default.
    pub fn practical(lambda: f64, smooth: &SmoothnessInfo) -> Self {
        Self {
            lambda,
            eta_y: 1.0 / smooth.beta_penalty(lambda),
            eta_z: 1.0 / (lambda * smooth.l_g),
        }
    }
}

/// Warm-start state carried across outer iterations.
#[derive(Debug, Clone)]
pub struct InnerState {
    /// Warm start toward `y*_lam(x)`.
    pub y: Vector,
    /// Warm start toward `y*(x)`.
    pub z: Vector,
    /// Certified upper bound on `||y - y*_lam(x)||^2 + ||z - y*(x)||^2`.
    pub delta: f64,
}

impl InnerState {
    pub fn new(y0: Vector, delta0: f64) -> Self {
        assert!(delta0 >= 0.0);
        Self {
            z: y0.clone(),
            y: y0,
            delta: delta0,
        }
    }
}

/// `K` steps of the two inner gradient-descent loops at fixed `x`.
///
/// Returns `(y_K, z_K, grad_evals)` where `grad_evals` counts full-gradient
/// oracle evaluations (each `y`-step costs one `grad_f` and one `grad_g`;
/// each `z`-step one `grad_g`).
pub fn inner_gd<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    state: &InnerState,
    p: &PenaltyParams,
    k: usize,
) -> Result<(Vector, Vector, u64)> {
    if k == 0 {
        return Err(BilevelError::Contract("inner iteration count K must be >= 1".into()));
    }
    check_dim("inner_gd: x", oracle.d_x(), x.len())?;
    check_dim("inner_gd: y", oracle.d_y(), state.y.len())?;
    let mut y = state.y.clone();
    let mut z = state.z.clone();
    for _ in 0..k {
        let (_, gy_z) = oracle.grad_g(x, &z);
        linalg::axpy(&mut z, -p.eta_z * p.lambda, &gy_z);
        let (_, fy) = oracle.grad_f(x, &y);
        let (_, gy) = oracle.grad_g(x, &y);
        for i in 0..y.len() {
            y[i] -= p.eta_y * (fy[i] + p.lambda * gy[i]);
        }
    }
    Ok((y, z, 3 * k as u64))
}

/// Mini-batch SGD version of [`inner_gd`].
///
/// Returns `(y_K, z_K, sample_count)`; `sample_count` counts single-sample
/// stochastic gradient draws (3 per step and unit of batch size).
pub fn inner_sgd<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    state: &InnerState,
    p: &PenaltyParams,
    k: usize,
    batch_in: usize,
    rng: &mut RngStream,
) -> Result<(Vector, Vector, u64)> {
    if k == 0 {
        return Err(BilevelError::Contract("inner iteration count K must be >= 1".into()));
    }
    if batch_in == 0 {
        return Err(BilevelError::Contract("batch_in must be >= 1".into()));
    }
    if !oracle.has_samplers() {
        return Err(BilevelError::Unsupported("stochastic gradient samplers"));
    }
    check_dim("inner_sgd: x", oracle.d_x(), x.len())?;
    check_dim("inner_sgd: y", oracle.d_y(), state.y.len())?;
    let d_y = oracle.d_y();
    let mut y = state.y.clone();
    let mut z = state.z.clone();
    for _ in 0..k {
        let (_, gz) = oracle.sample_grad_g_mean(x, &z, batch_in, rng)?;
        linalg::axpy(&mut z, -p.eta_z * p.lambda, &gz);

        let (_, fy) = oracle.sample_grad_f_mean(x, &y, batch_in, rng)?;
        let (_, gy) = oracle.sample_grad_g_mean(x, &y, batch_in, rng)?;
        for i in 0..d_y {
            y[i] -= p.eta_y * (fy[i] + p.lambda * gy[i]);
        }
    }
    Ok((y, z, 3 * (k * batch_in) as u64))
}

/// First-order hypergradient `grad_x f(x, y_K) + lam (grad_x g(x, y_K) - grad_x g(x, z_K))`.
///
/// Costs 3 full-gradient oracle evaluations.
pub fn hypergrad<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y_k: &[f64],
    z_k: &[f64],
    lambda: f64,
) -> Result<Vector> {
    check_dim("hypergrad: x", oracle.d_x(), x.len())?;
    check_dim("hypergrad: y", oracle.d_y(), y_k.len())?;
    check_dim("hypergrad: z", oracle.d_y(), z_k.len())?;
    let (fx, _) = oracle.grad_f(x, y_k);
    let (gx_y, _) = oracle.grad_g(x, y_k);
    let (gx_z, _) = oracle.grad_g(x, z_k);
    Ok((0..x.len())
        .map(|i| fx[i] + lambda * (gx_y[i] - gx_z[i]))
        .collect())
}

/// One step of the warm-start distance certificate:
/// `delta' = delta/2 + (34 L_g^2 / mu^2) step_sq + noise_floor`.
///
/// The caller supplies `noise_floor` (0 for deterministic runs,
/// `sigma_g^2 / (2 L_g B_in)` for the large-batch stochastic loop, the
/// MLMC floor for the single-sample loop), so one recursion serves all
/// solver variants.
pub fn update_delta(
    delta: f64,
    step_sq: f64,
    smooth: &SmoothnessInfo,
    noise_floor: f64,
) -> Result<f64> {
    if delta < 0.0 || step_sq < 0.0 || noise_floor < 0.0 {
        return Err(BilevelError::Contract(
            "update_delta inputs must be nonnegative".into(),
        ));
    }
    let cross = 34.0 * smooth.l_g * smooth.l_g / (smooth.mu * smooth.mu);
    Ok(0.5 * delta + cross * step_sq + noise_floor)
}

/// Inner iteration count `K = ceil((4 L_g / mu) ln(4 lam L_g delta / zeta))`,
/// floored at `max(1, ceil(8 L_g / mu))`.
///
/// After `K` such steps the squared inner residuals shrink below
/// `zeta / (4 lam L_g)`; the floor keeps the delta recursion contraction
/// factor at 1/2.
pub fn schedule_k(
    delta: f64,
    lambda: f64,
    smooth: &SmoothnessInfo,
    zeta: f64,
) -> Result<usize> {
    if !(zeta > 0.0) {
        return Err(BilevelError::Domain(format!(
            "zeta must be positive, got {zeta}"
        )));
    }
    if !(delta > 0.0) || !(lambda > 0.0) {
        return Err(BilevelError::Contract(
            "schedule_k requires positive delta and lambda".into(),
        ));
    }
    let floor = (8.0 * smooth.l_g / smooth.mu).ceil().max(1.0);
    let raw = 4.0 * smooth.l_g / smooth.mu * (4.0 * lambda * smooth.l_g * delta / zeta).ln();
    Ok(raw.ceil().max(floor) as usize)
}

/// High-accuracy evaluation of `L*_lam(x)` by running the inner loops until
/// both gradient residuals drop below `tol`. Used as the independent route
/// when no closed form exists (finite-difference checks of the proxy).
pub fn penalty_value_high_acc<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y0: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<(f64, Vector, Vector)> {
    let smooth = *oracle.smoothness();
    let p = PenaltyParams::practical(lambda, &smooth);
    let mut y = y0.to_vec();
    let mut z = y0.to_vec();
    for _ in 0..200_000 {
        let (_, fy) = oracle.grad_f(x, &y);
        let (_, gy) = oracle.grad_g(x, &y);
        let ry: f64 = (0..y.len())
            .map(|i| (fy[i] + lambda * gy[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let (_, gz) = oracle.grad_g(x, &z);
        let rz = linalg::norm(&gz) * lambda;
        if ry <= tol && rz <= tol {
            break;
        }
        for i in 0..y.len() {
            y[i] -= p.eta_y * (fy[i] + lambda * gy[i]);
        }
        linalg::axpy(&mut z, -p.eta_z * lambda, &gz);
    }
    let value =
        oracle.eval_f(x, &y) + lambda * (oracle.eval_g(x, &y) - oracle.eval_g(x, &z));
    Ok((value, y, z))
}
