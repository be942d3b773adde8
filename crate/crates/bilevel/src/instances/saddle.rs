//! Fixed strict-saddle test bed.
//!
//! ```text
//! g(x, y) = 1/2 ||y - x||^2,   f(x, y) = 1/2 y1^2 - 1/2 y2^2 + 1/4 y2^4
//! ```
//!
//! with `d_x = d_y = 2`, so `y*(x) = x` and
//! `phi(x) = 1/2 x1^2 - 1/2 x2^2 + 1/4 x2^4`. The origin is a strict saddle
//! (`hess phi(0) = diag(1, -1)`); the global minima are `(0, +-1)` with value
//! `-1/4`. The quartic term breaks global gradient-Lipschitzness, so the
//! smoothness constants are certified on the ball `||x||, ||y|| <= 3`.

use crate::oracle::{AnalyticHandles, BilevelOracle, SmoothnessInfo};
use crate::Vector;
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct SaddleInstance {
    smooth: SmoothnessInfo,
}

impl Default for SaddleInstance {
    fn default() -> Self {
        Self::new()
    }
}

impl SaddleInstance {
    pub fn new() -> Self {
        // On ||y|| <= 3: |d2f/dy2^2| = |3 y2^2 - 1| <= 26, ||grad_y f|| <= 24,
        // |d3f/dy2^3| = |6 y2| <= 18. g is quadratic: L_g = 2, rho_g = nu_g = 0.
        Self {
            smooth: SmoothnessInfo {
                mu: 1.0,
                l_f: 26.0,
                l_g: 2.0,
                c_f: 24.0,
                rho_g: 0.0,
                rho_f: Some(18.0),
                nu_g: Some(0.0),
                sigma_f: 0.0,
                sigma_g: 0.0,
            },
        }
    }

    /// Root of `y^3 + (lam - 1) y = lam * t`, the y2-component of `y*_lam`.
    ///
    /// Strictly monotone for `lam > 1`, so the root is unique; Newton from a
    /// bracketing start converges to machine precision.
    fn cubic_root(lambda: f64, t: f64) -> f64 {
        let c = lambda - 1.0;
        let rhs = lambda * t;
        let mut y = t; // good start: the root lies between t and the unpenalized minimizer
        for _ in 0..200 {
            let fval = y * y * y + c * y - rhs;
            let fder = 3.0 * y * y + c;
            let step = fval / fder;
            y -= step;
            if step.abs() <= 1e-16 * (1.0 + y.abs()) {
                break;
            }
        }
        y
    }
}

impl BilevelOracle for SaddleInstance {
    fn d_x(&self) -> usize {
        2
    }
    fn d_y(&self) -> usize {
        2
    }
    fn eval_f(&self, _x: &[f64], y: &[f64]) -> f64 {
        0.5 * y[0] * y[0] - 0.5 * y[1] * y[1] + 0.25 * y[1].powi(4)
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2))
    }
    fn grad_f(&self, _x: &[f64], y: &[f64]) -> (Vector, Vector) {
        (vec![0.0, 0.0], vec![y[0], -y[1] + y[1].powi(3)])
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let r = [y[0] - x[0], y[1] - x[1]];
        (vec![-r[0], -r[1]], vec![r[0], r[1]])
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

impl AnalyticHandles for SaddleInstance {
    fn phi(&self, x: &[f64]) -> Option<f64> {
        Some(0.5 * x[0] * x[0] - 0.5 * x[1] * x[1] + 0.25 * x[1].powi(4))
    }
    fn grad_phi(&self, x: &[f64]) -> Option<Vector> {
        Some(vec![x[0], -x[1] + x[1].powi(3)])
    }
    fn hess_phi(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, 0.0, 3.0 * x[1] * x[1] - 1.0],
        ))
    }
    fn y_star(&self, x: &[f64]) -> Option<Vector> {
        Some(x.to_vec())
    }
    fn y_lambda_star(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        if lambda <= 1.0 {
            return None; // the inner objective may be nonconvex in y2 below this
        }
        Some(vec![
            lambda * x[0] / (1.0 + lambda),
            Self::cubic_root(lambda, x[1]),
        ])
    }
    fn penalty_value(&self, x: &[f64], lambda: f64) -> Option<f64> {
        let y = self.y_lambda_star(x, lambda)?;
        // g(x, y*(x)) = 0 here since y*(x) = x.
        Some(self.eval_f(x, &y) + lambda * self.eval_g(x, &y))
    }
    fn penalty_grad(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        // grad_x f = 0 and grad_x g(x, y) = x - y, so the proxy gradient is
        // lam ((x - y*_lam) - (x - y*)) = lam (x - y*_lam).
        let y = self.y_lambda_star(x, lambda)?;
        Some(vec![lambda * (x[0] - y[0]), lambda * (x[1] - y[1])])
    }
    fn penalty_hess(&self, x: &[f64], lambda: f64) -> Option<DMatrix<f64>> {
        let y = self.y_lambda_star(x, lambda)?;
        // Implicit differentiation of the inner optimality conditions.
        let h11 = lambda / (1.0 + lambda);
        let denom = 3.0 * y[1] * y[1] - 1.0 + lambda;
        let h22 = lambda * (3.0 * y[1] * y[1] - 1.0) / denom;
        Some(DMatrix::from_row_slice(2, 2, &[h11, 0.0, 0.0, h22]))
    }
}
