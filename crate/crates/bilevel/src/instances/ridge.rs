//! Ridge-regularizer tuning on linear regression.
//!
//! ```text
//! f(x, y) = 1/2 ||A_val y - b_val||^2
//! g(x, y) = 1/2 ||A_tr y - b_tr||^2 + exp(x)/2 ||y||^2,    x scalar
//! ```
//!
//! `y*(x) = (A_tr' A_tr + exp(x) I)^-1 A_tr' b_tr` is available exactly via a
//! dense Cholesky solve, which makes this the most reliable ground-truth
//! instance at desk scale. The hyper-gradient uses the implicit-function
//! expression with analytic second-order blocks of `g`.

use super::{spectral_norm, sym_op_norm};
use crate::error::{BilevelError, Result};
use crate::oracle::{AnalyticHandles, BilevelOracle, SmoothnessInfo};
use crate::Vector;
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct RidgeInstance {
    ata: DMatrix<f64>,
    atb: DVector<f64>,
    vtv: DMatrix<f64>,
    vtb: DVector<f64>,
    b_val: DVector<f64>,
    a_val: DMatrix<f64>,
    /// `1/2 ||b_tr||^2`, the constant term of the training loss.
    btb_half: f64,
    smooth: SmoothnessInfo,
    /// Constants are certified for `|x| <= x_radius`, `||y|| <= y_radius`.
    x_radius: f64,
    y_radius: f64,
}

impl RidgeInstance {
    pub fn new(
        a_tr: DMatrix<f64>,
        b_tr: DVector<f64>,
        a_val: DMatrix<f64>,
        b_val: DVector<f64>,
    ) -> Result<Self> {
        let p = a_tr.ncols();
        if a_tr.nrows() != b_tr.len() {
            return Err(BilevelError::Construction(format!(
                "A_tr has {} rows, b_tr has {}",
                a_tr.nrows(),
                b_tr.len()
            )));
        }
        if a_val.ncols() != p {
            return Err(BilevelError::Construction(format!(
                "A_val has {} features, A_tr has {p}",
                a_val.ncols()
            )));
        }
        if a_val.nrows() != b_val.len() {
            return Err(BilevelError::Construction(format!(
                "A_val has {} rows, b_val has {}",
                a_val.nrows(),
                b_val.len()
            )));
        }
        let ata = a_tr.transpose() * &a_tr;
        let atb = a_tr.transpose() * &b_tr;
        let vtv = a_val.transpose() * &a_val;
        let vtb = a_val.transpose() * &b_val;

        let x_radius: f64 = 5.0;
        // Bound the y-excursion by twice the least-regularized solution norm.
        let h_low = &ata + DMatrix::identity(p, p) * (-x_radius as f64).exp();
        let y_low = Cholesky::new(h_low)
            .ok_or_else(|| BilevelError::Construction("A_tr' A_tr is not PSD".into()))?
            .solve(&atb);
        let y_radius = 2.0 * y_low.norm() + 1.0;

        let l_tr_max = sym_op_norm(&ata);
        let l_tr_min = ata
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v.max(0.0)));
        let e_hi = x_radius.exp();
        // Loose block bounds over the operating region; the exp(x) terms carry
        // all x-dependence of the g-derivatives.
        let reg_block = e_hi * (1.0 + y_radius + 0.5 * y_radius * y_radius);
        let norm_a_val = spectral_norm(&a_val);
        let smooth = SmoothnessInfo {
            mu: l_tr_min + (-x_radius as f64).exp(),
            l_f: sym_op_norm(&vtv).max(1e-12),
            l_g: l_tr_max + reg_block,
            c_f: norm_a_val * (norm_a_val * y_radius + b_val.norm()),
            rho_g: reg_block,
            rho_f: Some(0.0),
            nu_g: Some(reg_block),
            sigma_f: 0.0,
            sigma_g: 0.0,
        };
        smooth.validate()?;
        Ok(Self {
            ata,
            atb,
            vtv,
            vtb,
            b_val,
            a_val,
            btb_half: 0.5 * b_tr.norm_squared(),
            smooth,
            x_radius,
            y_radius,
        })
    }

    pub fn operating_region(&self) -> (f64, f64) {
        (self.x_radius, self.y_radius)
    }

    /// `A_tr' A_tr + exp(x) I`, the lower-level Hessian in `y`.
    fn hess_g(&self, x: f64) -> DMatrix<f64> {
        let p = self.ata.nrows();
        &self.ata + DMatrix::identity(p, p) * x.exp()
    }

    fn solve(&self, m: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        Cholesky::new(m)
            .expect("regularized Gram matrix is positive definite for all x")
            .solve(rhs)
    }
}

impl BilevelOracle for RidgeInstance {
    fn d_x(&self) -> usize {
        1
    }
    fn d_y(&self) -> usize {
        self.ata.nrows()
    }
    fn eval_f(&self, _x: &[f64], y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        0.5 * (&self.a_val * yv - &self.b_val).norm_squared()
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        let fit = 0.5 * ((&self.ata * &yv).dot(&yv)) - self.atb.dot(&yv)
            + 0.5 * (yv.dot(&yv)) * x[0].exp();
        fit + self.btb_half
    }
    fn grad_f(&self, _x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let yv = DVector::from_column_slice(y);
        let fy = &self.vtv * yv - &self.vtb;
        (vec![0.0], fy.as_slice().to_vec())
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let yv = DVector::from_column_slice(y);
        let gy = &self.ata * &yv - &self.atb + &yv * x[0].exp();
        let gx = 0.5 * x[0].exp() * yv.norm_squared();
        (vec![gx], gy.as_slice().to_vec())
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

impl AnalyticHandles for RidgeInstance {
    fn phi(&self, x: &[f64]) -> Option<f64> {
        let y = self.y_star(x)?;
        Some(self.eval_f(x, &y))
    }
    fn grad_phi(&self, x: &[f64]) -> Option<Vector> {
        // grad phi = -exp(x) y*' (A_tr'A_tr + exp(x) I)^-1 grad_y f(x, y*)
        let ys = self.solve(self.hess_g(x[0]), &self.atb);
        let fy = &self.vtv * &ys - &self.vtb;
        let hinv_fy = self.solve(self.hess_g(x[0]), &fy);
        Some(vec![-x[0].exp() * ys.dot(&hinv_fy)])
    }
    fn y_star(&self, x: &[f64]) -> Option<Vector> {
        Some(self.solve(self.hess_g(x[0]), &self.atb).as_slice().to_vec())
    }
    fn y_lambda_star(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        let m = &self.vtv + self.hess_g(x[0]) * lambda;
        let rhs = &self.vtb + &self.atb * lambda;
        Some(self.solve(m, &rhs).as_slice().to_vec())
    }
    fn penalty_value(&self, x: &[f64], lambda: f64) -> Option<f64> {
        let yl = self.y_lambda_star(x, lambda)?;
        let ys = self.y_star(x)?;
        Some(self.eval_f(x, &yl) + lambda * (self.eval_g(x, &yl) - self.eval_g(x, &ys)))
    }
    fn penalty_grad(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        let yl = self.y_lambda_star(x, lambda)?;
        let ys = self.y_star(x)?;
        let (gx_l, _) = self.grad_g(x, &yl);
        let (gx_s, _) = self.grad_g(x, &ys);
        Some(vec![lambda * (gx_l[0] - gx_s[0])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RidgeInstance {
        RidgeInstance::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let inst = tiny();
        assert!((inst.y_star(&[0.0]).unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((inst.phi(&[0.0]).unwrap() - 0.125).abs() < 1e-12);
        // y*(x) -> 0 monotonically as the regularizer dominates
        let mut prev = inst.y_star(&[0.0]).unwrap()[0];
        for x in [1.0, 2.0, 4.0, 8.0] {
            let y = inst.y_star(&[x]).unwrap()[0];
            assert!(y < prev && y > 0.0);
            prev = y;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = RidgeInstance::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, BilevelError::Construction(_)));
    }
}
