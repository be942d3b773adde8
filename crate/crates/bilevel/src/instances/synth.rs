//! Fixed-seed synthetic data generators for the data-driven instances.
//!
//! Gaussian design matrices with unit-norm rows keep everything reproducible
//! without external downloads.

use crate::rng::RngStream;
use nalgebra::{DMatrix, DVector};

/// `n x p` Gaussian design matrix with rows normalized to unit Euclidean norm.
pub fn design_matrix(n: usize, p: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = rng.normal_vec(p, 1.0);
        let nrm = crate::linalg::norm(&row).max(1e-12);
        for j in 0..p {
            m[(i, j)] = row[j] / nrm;
        }
    }
    m
}

/// Regression targets `b = A w + noise`.
pub fn regression_targets(a: &DMatrix<f64>, w: &DVector<f64>, noise_sd: f64, rng: &mut RngStream) -> DVector<f64> {
    let mut b = a * w;
    for v in b.iter_mut() {
        *v += noise_sd * rng.standard_normal();
    }
    b
}

/// Binary labels from a linear teacher, with a fraction `corrupt` of labels flipped.
pub fn classification_labels(
    a: &DMatrix<f64>,
    w: &DVector<f64>,
    corrupt: f64,
    rng: &mut RngStream,
) -> DVector<f64> {
    let scores = a * w;
    DVector::from_iterator(
        a.nrows(),
        scores.iter().map(|s| {
            let mut label = if *s >= 0.0 { 1.0 } else { -1.0 };
            if corrupt > 0.0 && rng.bernoulli(corrupt) {
                label = -label;
            }
            label
        }),
    )
}

/// The train/validation split used by the scaled-down regularizer-tuning study:
/// `n_tr` train rows, `n_val` validation rows, `p` features, fixed teacher.
pub fn ridge_dataset(
    n_tr: usize,
    n_val: usize,
    p: usize,
    seed: u64,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let mut rng = RngStream::new(seed, 7);
    let teacher = DVector::from_vec(rng.normal_vec(p, 1.0));
    let a_tr = design_matrix(n_tr, p, &mut rng);
    let b_tr = regression_targets(&a_tr, &teacher, 0.1, &mut rng);
    let a_val = design_matrix(n_val, p, &mut rng);
    let b_val = regression_targets(&a_val, &teacher, 0.1, &mut rng);
    (a_tr, b_tr, a_val, b_val)
}
