//! Small dense-vector helpers used in the solver hot loops.
//!
//! Iterates and gradients are plain `Vec<f64>`; matrix factorizations
//! (instance construction, analytic Hessians) use nalgebra instead.

/// Euclidean inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `a - b` as a new vector.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// `x += alpha * d`, in place.
pub fn axpy(x: &mut [f64], alpha: f64, d: &[f64]) {
    debug_assert_eq!(x.len(), d.len());
    for (xi, di) in x.iter_mut().zip(d) {
        *xi += alpha * di;
    }
}

pub fn scale(a: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Pairwise (cascade) sum of `rows`, written into a new vector.
///
/// The recursion keeps rounding error O(log m), which the distributed
/// equivalence checks rely on at m <= 64.
pub fn pairwise_sum(rows: &[Vec<f64>]) -> Vec<f64> {
    assert!(!rows.is_empty());
    fn rec(rows: &[Vec<f64>]) -> Vec<f64> {
        match rows.len() {
            1 => rows[0].clone(),
            2 => rows[0].iter().zip(&rows[1]).map(|(a, b)| a + b).collect(),
            n => {
                let (lo, hi) = rows.split_at(n / 2);
                let l = rec(lo);
                let r = rec(hi);
                l.iter().zip(&r).map(|(a, b)| a + b).collect()
            }
        }
    }
    rec(rows)
}

/// Pairwise mean of `rows`.
pub fn pairwise_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows.len() as f64;
    let mut s = pairwise_sum(rows);
    for v in &mut s {
        *v /= m;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, 1.0 - i as f64]).collect();
        let s = pairwise_sum(&rows);
        assert!((s[0] - 21.0).abs() < 1e-12);
        assert!((s[1] - (7.0 - 21.0)).abs() < 1e-12);
        let m = pairwise_mean(&rows);
        assert!((m[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn basic_ops() {
        let a = vec![3.0, 4.0];
        assert_eq!(norm(&a), 5.0);
        let mut x = vec![1.0, 1.0];
        axpy(&mut x, 2.0, &a);
        assert_eq!(x, vec![7.0, 9.0]);
        assert_eq!(dist_sq(&x, &vec![7.0, 9.0]), 0.0);
    }
}
