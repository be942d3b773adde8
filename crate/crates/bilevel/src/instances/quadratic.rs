//! Quadratic instance with fully closed-form ground truth.
//!
//! ```text
//! f(x, y) = 1/2 ||y - a||^2 + 1/2 x' P x,     g(x, y) = 1/2 ||y - B x||^2
//! ```
//!
//! Closed forms used as exact handles:
//!
//! ```text
//! y*(x)      = B x
//! y*_lam(x)  = (a + lam B x) / (1 + lam)
//! phi(x)     = 1/2 ||B x - a||^2 + 1/2 x' P x
//! L*_lam(x)  = lam/(1+lam) * 1/2 ||B x - a||^2 + 1/2 x' P x
//! ```

use super::{spectral_norm, sym_op_norm};
use crate::error::{BilevelError, Result};
use crate::oracle::{AnalyticHandles, BilevelOracle, SmoothnessInfo};
use crate::Vector;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    a: DVector<f64>,
    b: DMatrix<f64>,
    p: DMatrix<f64>,
    norm_b: f64,
    smooth: SmoothnessInfo,
    region_radius: f64,
}

impl QuadraticInstance {
    /// Build from `a` (length d_y), `B` (d_y x d_x) and symmetric PSD `P` (d_x x d_x).
    ///
    /// `C_f` is certified on the operating ball `||x|| <= region_radius`
    /// (default 4); all other constants follow from `||B||` and `||P||`.
    pub fn new(a: DVector<f64>, b: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self> {
        let d_y = a.len();
        let d_x = b.ncols();
        if b.nrows() != d_y {
            return Err(BilevelError::Construction(format!(
                "B has {} rows but a has length {}",
                b.nrows(),
                d_y
            )));
        }
        if p.nrows() != d_x || p.ncols() != d_x {
            return Err(BilevelError::Construction(format!(
                "P must be {d_x} x {d_x}, got {} x {}",
                p.nrows(),
                p.ncols()
            )));
        }
        let scale = sym_op_norm(&p).max(1.0);
        if (&p - p.transpose()).abs().max() > 1e-10 * scale {
            return Err(BilevelError::Construction("P must be symmetric".into()));
        }
        let min_eig = p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if min_eig < -1e-10 * scale {
            return Err(BilevelError::Construction(format!(
                "P is not positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
        let mut inst = Self {
            norm_b: spectral_norm(&b),
            a,
            b,
            p,
            smooth: SmoothnessInfo {
                mu: 1.0,
                l_f: 1.0,
                l_g: 1.0,
                c_f: 0.0,
                rho_g: 0.0,
                rho_f: Some(0.0),
                nu_g: Some(0.0),
                sigma_f: 0.0,
                sigma_g: 0.0,
            },
            region_radius: 4.0,
        };
        inst.recompute_constants();
        Ok(inst)
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(a: f64, b: f64, p: f64) -> Result<Self> {
        Self::new(
            DVector::from_vec(vec![a]),
            DMatrix::from_vec(1, 1, vec![b]),
            DMatrix::from_vec(1, 1, vec![p]),
        )
    }

    /// Change the operating radius on which `C_f` is certified.
    pub fn with_region_radius(mut self, r: f64) -> Self {
        assert!(r > 0.0);
        self.region_radius = r;
        self.recompute_constants();
        self
    }

    /// Override the certified `C_f` (e.g. to realize a target condition number).
    pub fn with_c_f(mut self, c_f: f64) -> Self {
        assert!(c_f > 0.0);
        self.smooth.c_f = c_f;
        self
    }

    fn recompute_constants(&mut self) {
        // mu = 1 for g in y; hessians of f and g over (x, y) give the rest.
        self.smooth.mu = 1.0;
        self.smooth.l_g = 1.0 + self.norm_b * self.norm_b;
        self.smooth.l_f = sym_op_norm(&self.p).max(1.0);
        // sup_{||x|| <= r} ||Bx - a|| plus one unit of y-excursion slack.
        self.smooth.c_f = self.a.norm() + self.region_radius * self.norm_b + 1.0;
    }

    pub fn offset_a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn matrix_b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn matrix_p(&self) -> &DMatrix<f64> {
        &self.p
    }

    fn xv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Residual `Bx - a`.
    fn residual(&self, x: &[f64]) -> DVector<f64> {
        &self.b * Self::xv(x) - &self.a
    }
}

impl BilevelOracle for QuadraticInstance {
    fn d_x(&self) -> usize {
        self.b.ncols()
    }
    fn d_y(&self) -> usize {
        self.a.len()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        let xv = Self::xv(x);
        let yv = Self::xv(y);
        0.5 * (&yv - &self.a).norm_squared() + 0.5 * (xv.transpose() * &self.p * &xv)[(0, 0)]
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (Self::xv(y) - &self.b * Self::xv(x)).norm_squared()
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let fx = &self.p * Self::xv(x);
        let fy: Vec<f64> = y.iter().zip(self.a.iter()).map(|(yi, ai)| yi - ai).collect();
        (fx.as_slice().to_vec(), fy)
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let r = Self::xv(y) - &self.b * Self::xv(x);
        let gx = -(self.b.transpose() * &r);
        (gx.as_slice().to_vec(), r.as_slice().to_vec())
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

impl AnalyticHandles for QuadraticInstance {
    fn phi(&self, x: &[f64]) -> Option<f64> {
        let xv = Self::xv(x);
        Some(0.5 * self.residual(x).norm_squared() + 0.5 * (xv.transpose() * &self.p * &xv)[(0, 0)])
    }
    fn grad_phi(&self, x: &[f64]) -> Option<Vector> {
        let g = self.b.transpose() * self.residual(x) + &self.p * Self::xv(x);
        Some(g.as_slice().to_vec())
    }
    fn hess_phi(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.b.transpose() * &self.b + &self.p)
    }
    fn y_star(&self, x: &[f64]) -> Option<Vector> {
        Some((&self.b * Self::xv(x)).as_slice().to_vec())
    }
    fn y_lambda_star(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        let y = (&self.a + lambda * (&self.b * Self::xv(x))) / (1.0 + lambda);
        Some(y.as_slice().to_vec())
    }
    fn penalty_value(&self, x: &[f64], lambda: f64) -> Option<f64> {
        let xv = Self::xv(x);
        let quad = 0.5 * (xv.transpose() * &self.p * &xv)[(0, 0)];
        Some(quad + lambda / (1.0 + lambda) * 0.5 * self.residual(x).norm_squared())
    }
    fn penalty_grad(&self, x: &[f64], lambda: f64) -> Option<Vector> {
        let g = &self.p * Self::xv(x)
            + lambda / (1.0 + lambda) * (self.b.transpose() * self.residual(x));
        Some(g.as_slice().to_vec())
    }
    fn penalty_hess(&self, _x: &[f64], lambda: f64) -> Option<DMatrix<f64>> {
        Some(&self.p + lambda / (1.0 + lambda) * (self.b.transpose() * &self.b))
    }
}
