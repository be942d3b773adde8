//! Oracle contracts for deterministic and stochastic bilevel objectives.
//!
//! A [`BilevelOracle`] bundles values and partial gradients of the upper-level
//! objective `f(x, y)` and the lower-level objective `g(x, y)` together with
//! smoothness metadata. Gradients are always returned as split `(dx, dy)`
//! pairs because every algorithm line consumes one block at a time.

use crate::error::{check_dim, BilevelError, Result};
use crate::linalg;
use crate::rng::RngStream;
use crate::Vector;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Smoothness and noise metadata of a bilevel instance.
///
/// `mu` is the strong-convexity modulus of `g(x, .)`; `l_f`, `l_g` are the
/// gradient-Lipschitz constants of `f` and `g`; `c_f` bounds the Lipschitz
/// constant of `f` in `y`; `rho_g` is the Hessian-Lipschitz constant of `g`.
/// The optional `rho_f` (Hessian-Lipschitz of `f`) and `nu_g` (third-derivative
/// Lipschitz of `g`) are needed only by the second-order-stationarity solvers.
/// Shipped instances certify these constants on a stated operating region;
/// they are supplied analytically, never estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessInfo {
    pub mu: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub c_f: f64,
    pub rho_g: f64,
    pub rho_f: Option<f64>,
    pub nu_g: Option<f64>,
    /// Gradient-noise standard deviations; 0 for deterministic oracles.
    pub sigma_f: f64,
    pub sigma_g: f64,
}

impl SmoothnessInfo {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(BilevelError::Construction(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.l_g < self.mu {
            return Err(BilevelError::Construction(format!(
                "l_g = {} must be >= mu = {}",
                self.l_g, self.mu
            )));
        }
        let nonneg = [
            self.l_f,
            self.c_f,
            self.rho_g,
            self.rho_f.unwrap_or(0.0),
            self.nu_g.unwrap_or(0.0),
            self.sigma_f,
            self.sigma_g,
        ];
        if nonneg.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(BilevelError::Construction(
                "smoothness constants must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Largest smoothness constant `ell = max{C_f, L_f, L_g, rho_g[, rho_f, nu_g]}`.
    /// The optional third-order constants enter only when declared.
    pub fn ell(&self) -> f64 {
        let mut e = self.c_f.max(self.l_f).max(self.l_g).max(self.rho_g);
        if let Some(rf) = self.rho_f {
            e = e.max(rf);
        }
        if let Some(ng) = self.nu_g {
            e = e.max(ng);
        }
        e
    }

    /// Condition number `kappa = ell / mu`. Derived, never stored.
    pub fn kappa(&self) -> f64 {
        self.ell() / self.mu
    }

    /// Smallest admissible penalty coefficient, `2 L_f / mu`.
    pub fn lambda_floor(&self) -> f64 {
        2.0 * self.l_f / self.mu
    }

    /// Strong convexity of `L_lam(x, .)` in `y`: `lam * mu / 2`.
    pub fn mu_penalty(&self, lambda: f64) -> f64 {
        lambda * self.mu / 2.0
    }

    /// Gradient-Lipschitz constant of `L_lam(x, .)` in `y`: `L_f + lam * L_g`.
    pub fn beta_penalty(&self, lambda: f64) -> f64 {
        self.l_f + lambda * self.l_g
    }

    /// `D_0 = (C_f + C_f L_g / (2 mu)) C_f / mu`; `|L*_lam - phi| <= D_0 / lam`.
    pub fn d0(&self) -> f64 {
        (self.c_f + self.c_f * self.l_g / (2.0 * self.mu)) * self.c_f / self.mu
    }

    /// `D_1`; `||grad L*_lam - grad phi|| <= D_1 / lam`.
    pub fn d1(&self) -> f64 {
        let m = self.mu;
        (self.l_f
            + self.rho_g * self.l_g / m
            + self.c_f * self.l_g * self.rho_g / (2.0 * m * m)
            + self.c_f * self.rho_g / (2.0 * m))
            * self.c_f
            / m
    }

    /// `D_2`; `||grad y*_lam - grad y*|| <= D_2 / lam`.
    pub fn d2(&self) -> f64 {
        let m = self.mu;
        (1.0 / m + 2.0 * self.l_g / (m * m)) * (self.l_f + self.c_f * self.rho_g / m)
    }

    /// `D_3`: a lambda-independent gradient-Lipschitz bound for `L*_lam`.
    pub fn d3(&self) -> f64 {
        let m = self.mu;
        self.l_f
            + 4.0 * self.l_f * self.l_g / m
            + self.c_f * self.rho_g / m
            + self.c_f * self.l_g * self.rho_g / (m * m)
            + self.l_g * self.d2()
    }

    /// `D_4`; needs the third-order constants.
    pub fn d4(&self) -> Option<f64> {
        let (rf, ng) = (self.rho_f?, self.nu_g?);
        let m = self.mu;
        let lg = self.l_g;
        Some(
            2.0 * self.rho_g / (m * m)
                * (1.0 + lg / m).powi(2)
                * (self.l_f + self.c_f * self.rho_g / m)
                + 14.0 * lg * self.rho_g * self.d2() / (m * m)
                + 50.0 * lg * lg / (m * m * m) * (self.c_f * ng / m + rf),
        )
    }

    /// `D_5`: a lambda-independent Hessian-Lipschitz bound for `L*_lam`.
    pub fn d5(&self) -> Option<f64> {
        let (rf, ng) = (self.rho_f?, self.nu_g?);
        let m = self.mu;
        let lg = self.l_g;
        Some(
            (1.0 + 4.0 * lg / m).powi(2) * (3.0 * rf + 2.0 * self.l_f * self.rho_g / m)
                + (1.0 + lg / m).powi(2) * self.c_f * ng / m
                + (2.0 + 5.0 * lg / m) * self.d2() * self.rho_g
                + (1.0 + lg / m).powi(2) * self.c_f * self.rho_g * self.rho_g / (m * m)
                + lg * self.d4()?,
        )
    }

    /// `D_6`; `||hess L*_lam - hess phi|| <= D_6 / lam`.
    pub fn d6(&self) -> Option<f64> {
        let (rf, ng) = (self.rho_f?, self.nu_g?);
        let m = self.mu;
        let d2 = self.d2();
        Some(
            2.0 * self.l_g * d2 * d2
                + (1.0 + self.l_g / m).powi(2)
                    * (self.c_f * rf / m
                        + self.c_f * self.l_f * self.rho_g / (m * m)
                        + self.c_f * self.c_f * ng / (2.0 * m * m)
                        + self.c_f * self.c_f * self.rho_g * self.rho_g / (2.0 * m * m * m)),
        )
    }
}

/// All four partial gradients and both values from one call site.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub fx: Vector,
    pub fy: Vector,
    pub gx: Vector,
    pub gy: Vector,
    pub f_val: f64,
    pub g_val: f64,
}

/// Oracle contract for a bilevel objective pair `(f, g)`.
///
/// Implementations are immutable after construction and safe for concurrent
/// evaluation. Stochastic samplers are optional; `has_samplers` reports
/// whether the `sample_grad_*` methods are available.
pub trait BilevelOracle: Sync {
    fn d_x(&self) -> usize;
    fn d_y(&self) -> usize;
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64;
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64;
    /// Partial gradients `(d/dx f, d/dy f)`.
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector);
    /// Partial gradients `(d/dx g, d/dy g)`.
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector);
    fn smoothness(&self) -> &SmoothnessInfo;

    fn has_samplers(&self) -> bool {
        false
    }

    /// One unbiased single-sample stochastic gradient of `f`.
    fn sample_grad_f(&self, _x: &[f64], _y: &[f64], _rng: &mut RngStream) -> Result<(Vector, Vector)> {
        Err(BilevelError::Unsupported("stochastic f-gradient sampler"))
    }

    /// One unbiased single-sample stochastic gradient of `g`.
    fn sample_grad_g(&self, _x: &[f64], _y: &[f64], _rng: &mut RngStream) -> Result<(Vector, Vector)> {
        Err(BilevelError::Unsupported("stochastic g-gradient sampler"))
    }

    /// Mean of `batch` independent single-sample gradients of `f`.
    ///
    /// The default loops over [`BilevelOracle::sample_grad_f`]; oracles whose
    /// noise law admits an exact batched draw may override it with a
    /// distributionally identical shortcut.
    fn sample_grad_f_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        mean_of_samples(batch, rng, |r| self.sample_grad_f(x, y, r))
    }

    /// Mean of `batch` independent single-sample gradients of `g`.
    fn sample_grad_g_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        mean_of_samples(batch, rng, |r| self.sample_grad_g(x, y, r))
    }
}

fn mean_of_samples<F>(batch: usize, rng: &mut RngStream, mut draw: F) -> Result<(Vector, Vector)>
where
    F: FnMut(&mut RngStream) -> Result<(Vector, Vector)>,
{
    if batch == 0 {
        return Err(BilevelError::Contract("batch must be >= 1".into()));
    }
    let (mut ax, mut ay) = draw(rng)?;
    for _ in 1..batch {
        let (sx, sy) = draw(rng)?;
        linalg::axpy(&mut ax, 1.0, &sx);
        linalg::axpy(&mut ay, 1.0, &sy);
    }
    let inv = 1.0 / batch as f64;
    for v in ax.iter_mut().chain(ay.iter_mut()) {
        *v *= inv;
    }
    Ok((ax, ay))
}

impl<'a, O: BilevelOracle + ?Sized> BilevelOracle for &'a O {
    fn d_x(&self) -> usize {
        (**self).d_x()
    }
    fn d_y(&self) -> usize {
        (**self).d_y()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        (**self).eval_f(x, y)
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        (**self).eval_g(x, y)
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        (**self).grad_f(x, y)
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        (**self).grad_g(x, y)
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        (**self).smoothness()
    }
    fn has_samplers(&self) -> bool {
        (**self).has_samplers()
    }
    fn sample_grad_f(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        (**self).sample_grad_f(x, y, rng)
    }
    fn sample_grad_g(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        (**self).sample_grad_g(x, y, rng)
    }
}

/// Evaluate all partial gradients and both values at `(x, y)` with dimension checks.
pub fn evaluate<O: BilevelOracle + ?Sized>(oracle: &O, x: &[f64], y: &[f64]) -> Result<GradientBundle> {
    check_dim("evaluate: x", oracle.d_x(), x.len())?;
    check_dim("evaluate: y", oracle.d_y(), y.len())?;
    let (fx, fy) = oracle.grad_f(x, y);
    let (gx, gy) = oracle.grad_g(x, y);
    Ok(GradientBundle {
        fx,
        fy,
        gx,
        gy,
        f_val: oracle.eval_f(x, y),
        g_val: oracle.eval_g(x, y),
    })
}

/// Arithmetic mean of `batch` independent single-sample gradients.
///
/// The variance of each mean component is bounded by `sigma^2 / batch`.
/// Values in the returned bundle are the deterministic objective values
/// (the noise model perturbs gradients only).
pub fn sample_gradient<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y: &[f64],
    batch: usize,
    rng: &mut RngStream,
) -> Result<GradientBundle> {
    if batch == 0 {
        return Err(BilevelError::Contract("batch must be >= 1".into()));
    }
    check_dim("sample_gradient: x", oracle.d_x(), x.len())?;
    check_dim("sample_gradient: y", oracle.d_y(), y.len())?;
    if !oracle.has_samplers() {
        return Err(BilevelError::Unsupported("stochastic gradient samplers"));
    }
    let (fx, fy) = oracle.sample_grad_f_mean(x, y, batch, rng)?;
    let (gx, gy) = oracle.sample_grad_g_mean(x, y, batch, rng)?;
    Ok(GradientBundle {
        fx,
        fy,
        gx,
        gy,
        f_val: oracle.eval_f(x, y),
        g_val: oracle.eval_g(x, y),
    })
}

/// One frozen noise realization for `f` and `g`, used by the MLMC estimator's
/// assembly step: the same pair parameterizes every gradient evaluation in
/// one estimator call while the inner SGD chains redraw fresh noise.
#[derive(Debug, Clone)]
pub struct FrozenPair {
    pub ef_x: Vector,
    pub ef_y: Vector,
    pub eg_x: Vector,
    pub eg_y: Vector,
}

/// Additive isotropic Gaussian noise on the full gradient of `f` and `g`.
///
/// A sample perturbs the concatenated `(dx, dy)` gradient by iid
/// `N(0, sigma^2 / (d_x + d_y))` entries, so the expected squared full-gradient
/// error equals `sigma^2` exactly (unbiased, bounded variance).
#[derive(Debug, Clone)]
pub struct GaussianNoise<O> {
    inner: O,
    sigma_f: f64,
    sigma_g: f64,
    smooth: SmoothnessInfo,
}

impl<O: BilevelOracle> GaussianNoise<O> {
    pub fn new(inner: O, sigma_f: f64, sigma_g: f64) -> Self {
        assert!(sigma_f >= 0.0 && sigma_g >= 0.0);
        let mut smooth = *inner.smoothness();
        smooth.sigma_f = sigma_f;
        smooth.sigma_g = sigma_g;
        Self {
            inner,
            sigma_f,
            sigma_g,
            smooth,
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    fn component_sd(&self, sigma: f64) -> f64 {
        sigma / ((self.inner.d_x() + self.inner.d_y()) as f64).sqrt()
    }

    /// Draw the frozen sample pair for one MLMC estimator call.
    pub fn freeze_pair(&self, rng: &mut RngStream) -> FrozenPair {
        let (dx, dy) = (self.inner.d_x(), self.inner.d_y());
        let sf = self.component_sd(self.sigma_f);
        let sg = self.component_sd(self.sigma_g);
        FrozenPair {
            ef_x: rng.normal_vec(dx, sf),
            ef_y: rng.normal_vec(dy, sf),
            eg_x: rng.normal_vec(dx, sg),
            eg_y: rng.normal_vec(dy, sg),
        }
    }

    /// Gradient of `f` under the frozen sample.
    pub fn grad_f_frozen(&self, x: &[f64], y: &[f64], pair: &FrozenPair) -> (Vector, Vector) {
        let (mut fx, mut fy) = self.inner.grad_f(x, y);
        linalg::axpy(&mut fx, 1.0, &pair.ef_x);
        linalg::axpy(&mut fy, 1.0, &pair.ef_y);
        (fx, fy)
    }

    /// Gradient of `g` under the frozen sample.
    pub fn grad_g_frozen(&self, x: &[f64], y: &[f64], pair: &FrozenPair) -> (Vector, Vector) {
        let (mut gx, mut gy) = self.inner.grad_g(x, y);
        linalg::axpy(&mut gx, 1.0, &pair.eg_x);
        linalg::axpy(&mut gy, 1.0, &pair.eg_y);
        (gx, gy)
    }
}

impl<O: BilevelOracle> BilevelOracle for GaussianNoise<O> {
    fn d_x(&self) -> usize {
        self.inner.d_x()
    }
    fn d_y(&self) -> usize {
        self.inner.d_y()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval_f(x, y)
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval_g(x, y)
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        self.inner.grad_f(x, y)
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        self.inner.grad_g(x, y)
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
    fn has_samplers(&self) -> bool {
        true
    }
    fn sample_grad_f(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        let (mut fx, mut fy) = self.inner.grad_f(x, y);
        let sd = self.component_sd(self.sigma_f);
        if sd > 0.0 {
            for v in fx.iter_mut().chain(fy.iter_mut()) {
                *v += sd * rng.standard_normal();
            }
        }
        Ok((fx, fy))
    }
    fn sample_grad_g(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        let (mut gx, mut gy) = self.inner.grad_g(x, y);
        let sd = self.component_sd(self.sigma_g);
        if sd > 0.0 {
            for v in gx.iter_mut().chain(gy.iter_mut()) {
                *v += sd * rng.standard_normal();
            }
        }
        Ok((gx, gy))
    }

    // For iid Gaussian noise the mean of `batch` draws is itself Gaussian
    // with standard deviation sd / sqrt(batch), so one scaled draw per
    // component reproduces the batched mean exactly in distribution.
    fn sample_grad_f_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        if batch == 0 {
            return Err(BilevelError::Contract("batch must be >= 1".into()));
        }
        let (mut fx, mut fy) = self.inner.grad_f(x, y);
        let sd = self.component_sd(self.sigma_f) / (batch as f64).sqrt();
        if sd > 0.0 {
            for v in fx.iter_mut().chain(fy.iter_mut()) {
                *v += sd * rng.standard_normal();
            }
        }
        Ok((fx, fy))
    }

    fn sample_grad_g_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        if batch == 0 {
            return Err(BilevelError::Contract("batch must be >= 1".into()));
        }
        let (mut gx, mut gy) = self.inner.grad_g(x, y);
        let sd = self.component_sd(self.sigma_g) / (batch as f64).sqrt();
        if sd > 0.0 {
            for v in gx.iter_mut().chain(gy.iter_mut()) {
                *v += sd * rng.standard_normal();
            }
        }
        Ok((gx, gy))
    }
}

/// Delegating wrapper that counts oracle invocations.
///
/// `grad_calls` counts full-gradient evaluations (one `grad_f` or `grad_g`
/// call each), `sample_calls` counts single-sample stochastic gradient draws.
/// Tests use it as the independent counter the traces are checked against.
pub struct CountingOracle<'a, O: ?Sized> {
    inner: &'a O,
    grad_calls: AtomicU64,
    sample_calls: AtomicU64,
}

impl<'a, O: BilevelOracle + ?Sized> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            grad_calls: AtomicU64::new(0),
            sample_calls: AtomicU64::new(0),
        }
    }

    pub fn grad_calls(&self) -> u64 {
        self.grad_calls.load(Ordering::Relaxed)
    }

    pub fn sample_calls(&self) -> u64 {
        self.sample_calls.load(Ordering::Relaxed)
    }
}

impl<'a, O: BilevelOracle + ?Sized> BilevelOracle for CountingOracle<'a, O> {
    fn d_x(&self) -> usize {
        self.inner.d_x()
    }
    fn d_y(&self) -> usize {
        self.inner.d_y()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval_f(x, y)
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        self.inner.eval_g(x, y)
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        self.grad_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.grad_f(x, y)
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        self.grad_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.grad_g(x, y)
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        self.inner.smoothness()
    }
    fn has_samplers(&self) -> bool {
        self.inner.has_samplers()
    }
    fn sample_grad_f(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        self.sample_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.sample_grad_f(x, y, rng)
    }
    fn sample_grad_g(&self, x: &[f64], y: &[f64], rng: &mut RngStream) -> Result<(Vector, Vector)> {
        self.sample_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.sample_grad_g(x, y, rng)
    }
    fn sample_grad_f_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        self.sample_calls.fetch_add(batch as u64, Ordering::Relaxed);
        self.inner.sample_grad_f_mean(x, y, batch, rng)
    }
    fn sample_grad_g_mean(
        &self,
        x: &[f64],
        y: &[f64],
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<(Vector, Vector)> {
        self.sample_calls.fetch_add(batch as u64, Ordering::Relaxed);
        self.inner.sample_grad_g_mean(x, y, batch, rng)
    }
}

/// Closed-form ground truth exposed by analytic test instances.
///
/// Every method is optional; solvers and probes degrade gracefully when a
/// handle is missing (e.g. the trace leaves the `grad_phi_norm` column empty).
pub trait AnalyticHandles: Sync {
    fn phi(&self, _x: &[f64]) -> Option<f64> {
        None
    }
    fn grad_phi(&self, _x: &[f64]) -> Option<Vector> {
        None
    }
    fn hess_phi(&self, _x: &[f64]) -> Option<nalgebra::DMatrix<f64>> {
        None
    }
    fn y_star(&self, _x: &[f64]) -> Option<Vector> {
        None
    }
    fn y_lambda_star(&self, _x: &[f64], _lambda: f64) -> Option<Vector> {
        None
    }
    /// Exact penalty proxy value `L*_lam(x)`.
    fn penalty_value(&self, _x: &[f64], _lambda: f64) -> Option<f64> {
        None
    }
    /// Exact proxy gradient `grad L*_lam(x)`.
    fn penalty_grad(&self, _x: &[f64], _lambda: f64) -> Option<Vector> {
        None
    }
    fn penalty_hess(&self, _x: &[f64], _lambda: f64) -> Option<nalgebra::DMatrix<f64>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::QuadraticInstance;

    #[test]
    fn evaluate_checks_dimensions() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let err = evaluate(&inst, &[0.0, 0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, BilevelError::DimensionMismatch { .. }));
    }

    #[test]
    fn sample_gradient_requires_samplers() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        let err = sample_gradient(&inst, &[0.0], &[0.0], 4, &mut rng).unwrap_err();
        assert!(matches!(err, BilevelError::Unsupported(_)));
    }

    #[test]
    fn zero_noise_sampler_equals_deterministic() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let noisy = GaussianNoise::new(inst, 0.0, 0.0);
        let mut rng = RngStream::new(3, 0);
        let b = sample_gradient(&noisy, &[0.3], &[0.7], 1, &mut rng).unwrap();
        let d = evaluate(&noisy, &[0.3], &[0.7]).unwrap();
        assert_eq!(b.fy, d.fy);
        assert_eq!(b.gx, d.gx);
    }

    #[test]
    fn same_seed_gives_bit_identical_bundles() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let noisy = GaussianNoise::new(inst, 0.5, 1.0);
        let b1 = sample_gradient(&noisy, &[0.0], &[0.0], 8, &mut RngStream::new(42, 1)).unwrap();
        let b2 = sample_gradient(&noisy, &[0.0], &[0.0], 8, &mut RngStream::new(42, 1)).unwrap();
        assert_eq!(b1, b2);
    }
}
