//! Softmax-weighted data-source reweighting on logistic losses.
//!
//! ```text
//! f(x, y) = loss_val(y)
//! g(x, y) = sum_i softmax(x)_i loss_i(y) + mu0/2 ||y||^2
//! ```
//!
//! The softmax weights sum to 1 and are strictly positive. The explicit ridge
//! `mu0 > 0` makes `g` strongly convex in `y` with modulus at least `mu0`,
//! which the plain weighted logistic loss does not guarantee for
//! over-parameterized `y`.

use super::spectral_norm;
use crate::error::{BilevelError, Result};
use crate::oracle::{BilevelOracle, SmoothnessInfo};
use crate::rng::RngStream;
use crate::Vector;
use nalgebra::{DMatrix, DVector};

/// One labeled dataset: rows of `a`, labels in `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LogisticData {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(BilevelError::Construction(format!(
                "design has {} rows, labels {}",
                a.nrows(),
                b.len()
            )));
        }
        if b.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(BilevelError::Construction(
                "labels must be +-1 for logistic losses".into(),
            ));
        }
        Ok(Self { a, b })
    }

    /// Synthetic corrupted/clean split from a linear teacher.
    pub fn synthetic(n: usize, p: usize, corrupt: f64, rng: &mut RngStream) -> Self {
        let a = super::synth::design_matrix(n, p, rng);
        let teacher = DVector::from_vec(rng.normal_vec(p, 1.0));
        let b = super::synth::classification_labels(&a, &teacher, corrupt, rng);
        Self { a, b }
    }

    /// Mean logistic loss `1/n sum ln(1 + exp(-b_j <a_j, y>))`.
    fn loss(&self, y: &DVector<f64>) -> f64 {
        let margins = &self.a * y;
        let n = self.a.nrows() as f64;
        margins
            .iter()
            .zip(self.b.iter())
            .map(|(m, b)| softplus(-b * m))
            .sum::<f64>()
            / n
    }

    fn grad(&self, y: &DVector<f64>) -> DVector<f64> {
        let margins = &self.a * y;
        let n = self.a.nrows() as f64;
        let mut coeff = DVector::zeros(self.a.nrows());
        for j in 0..self.a.nrows() {
            let t = -self.b[j] * margins[j];
            coeff[j] = -self.b[j] * sigmoid(t) / n;
        }
        self.a.transpose() * coeff
    }

    fn max_row_norm(&self) -> f64 {
        (0..self.a.nrows())
            .map(|i| self.a.row(i).norm())
            .fold(0.0f64, f64::max)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct WeightingInstance {
    sources: Vec<LogisticData>,
    val: LogisticData,
    mu0: f64,
    smooth: SmoothnessInfo,
}

impl WeightingInstance {
    pub fn new(sources: Vec<LogisticData>, val: LogisticData, mu0: f64) -> Result<Self> {
        if sources.len() < 2 {
            return Err(BilevelError::Construction(
                "need at least two data sources".into(),
            ));
        }
        if !(mu0 > 0.0) {
            return Err(BilevelError::Construction(format!(
                "ridge coefficient mu0 must be positive, got {mu0}"
            )));
        }
        let p = val.a.ncols();
        if sources.iter().any(|s| s.a.ncols() != p) {
            return Err(BilevelError::Construction(
                "all sources must share the validation feature dimension".into(),
            ));
        }

        // Region-certified constants on ||y|| <= y_r (softmax weights need no
        // x-bound: they are globally bounded by 1). Loose block bounds.
        let y_r: f64 = 10.0;
        let r_max = sources
            .iter()
            .map(|s| s.max_row_norm())
            .fold(0.0f64, f64::max);
        let r_val = val.max_row_norm();
        let loss_max = softplus(0.0) + r_max * y_r; // ln 2 + max margin magnitude
        let grad_max = r_max;
        let hess_tr = sources
            .iter()
            .map(|s| spectral_norm(&s.a).powi(2) / s.a.nrows() as f64 / 4.0)
            .fold(0.0f64, f64::max);
        let smooth = SmoothnessInfo {
            mu: mu0,
            l_f: spectral_norm(&val.a).powi(2) / val.a.nrows() as f64 / 4.0,
            l_g: hess_tr + mu0 + 2.0 * grad_max + 2.0 * loss_max,
            c_f: r_val,
            // third derivatives: logistic (<= r^3 / (6 sqrt 3)) plus softmax
            // couplings bounded via loss values and gradients on the region
            rho_g: r_max.powi(3) * 0.1 + 6.0 * loss_max + 6.0 * grad_max,
            rho_f: Some(r_val.powi(3) * 0.1),
            nu_g: None,
            sigma_f: 0.0,
            sigma_g: 0.0,
        };
        smooth.validate()?;
        Ok(Self {
            sources,
            val,
            mu0,
            smooth,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// Softmax weights of the sources at `x` (max-shifted for stability).
    pub fn weights(&self, x: &[f64]) -> Vector {
        let m = x.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }
}

impl BilevelOracle for WeightingInstance {
    fn d_x(&self) -> usize {
        self.sources.len()
    }
    fn d_y(&self) -> usize {
        self.val.a.ncols()
    }
    fn eval_f(&self, _x: &[f64], y: &[f64]) -> f64 {
        self.val.loss(&DVector::from_column_slice(y))
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        let w = self.weights(x);
        let weighted: f64 = self
            .sources
            .iter()
            .zip(&w)
            .map(|(s, wi)| wi * s.loss(&yv))
            .sum();
        weighted + 0.5 * self.mu0 * yv.norm_squared()
    }
    fn grad_f(&self, _x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let fy = self.val.grad(&DVector::from_column_slice(y));
        (vec![0.0; self.d_x()], fy.as_slice().to_vec())
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let yv = DVector::from_column_slice(y);
        let w = self.weights(x);
        let losses: Vec<f64> = self.sources.iter().map(|s| s.loss(&yv)).collect();
        let mean_loss: f64 = w.iter().zip(&losses).map(|(wi, li)| wi * li).sum();
        // d/dx_j sum_i w_i(x) loss_i = w_j (loss_j - sum_i w_i loss_i)
        let gx: Vec<f64> = w
            .iter()
            .zip(&losses)
            .map(|(wj, lj)| wj * (lj - mean_loss))
            .collect();
        let mut gy = DVector::zeros(self.d_y());
        for (s, wi) in self.sources.iter().zip(&w) {
            gy += s.grad(&yv) * *wi;
        }
        gy += &yv * self.mu0;
        (gx, gy.as_slice().to_vec())
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(m: usize) -> WeightingInstance {
        let mut rng = RngStream::new(5, 0);
        let sources: Vec<LogisticData> = (0..m)
            .map(|i| LogisticData::synthetic(12, 3, if i == 0 { 0.0 } else { 0.8 }, &mut rng))
            .collect();
        let val = LogisticData::synthetic(8, 3, 0.0, &mut rng);
        WeightingInstance::new(sources, val, 1e-2).unwrap()
    }

    #[test]
    fn softmax_weight_examples() {
        let inst = tiny(2);
        let w = inst.weights(&[0.0, 0.0]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = inst.weights(&[3.0f64.ln(), 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_bad_construction() {
        let mut rng = RngStream::new(5, 0);
        let s = LogisticData::synthetic(6, 3, 0.0, &mut rng);
        let v = LogisticData::synthetic(6, 3, 0.0, &mut rng);
        assert!(WeightingInstance::new(vec![s.clone()], v.clone(), 1e-2).is_err());
        assert!(WeightingInstance::new(vec![s.clone(), s], v, 0.0).is_err());
    }

    #[test]
    fn lower_level_strong_convexity_modulus() {
        // g(x, .) minus the ridge is convex, so curvature along any direction
        // is at least mu0.
        let inst = tiny(3);
        let x = vec![0.3, -0.2, 0.1];
        let y0 = vec![0.4, -0.1, 0.7];
        let dir = vec![1.0, -2.0, 0.5];
        let h = 1e-4;
        let mut yp = y0.clone();
        let mut ym = y0.clone();
        for i in 0..3 {
            yp[i] += h * dir[i];
            ym[i] -= h * dir[i];
        }
        let second = (inst.eval_g(&x, &yp) - 2.0 * inst.eval_g(&x, &y0) + inst.eval_g(&x, &ym))
            / (h * h);
        let dn = crate::linalg::norm_sq(&dir);
        assert!(second >= inst.mu0() * dn - 1e-6);
    }
}
