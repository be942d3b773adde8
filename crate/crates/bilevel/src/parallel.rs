//! Data-parallel map helpers with a sequential fallback.
//!
//! Multi-seed campaigns, the M estimators of one MLMC call, per-agent
//! gradient evaluation and verification grid scans are independent given
//! split RNG streams, so they map cleanly onto rayon. With the `parallel`
//! feature disabled everything runs sequentially; results are bit-identical
//! either way because each task owns its inputs and outputs are collected
//! in index order before any reduction.

/// Sequential map kept available under every feature set (used directly by
/// the benchmark suite to compare against the parallel path).
pub fn map_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Parallel map over owned items; falls back to [`map_seq`] without the
/// `parallel` feature.
#[cfg(feature = "parallel")]
pub fn map_auto<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_auto<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    map_seq(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_and_seq_agree() {
        let xs: Vec<u64> = (0..64).collect();
        let a = map_auto(xs.clone(), |x| x.wrapping_mul(0x9e3779b97f4a7c15));
        let b = map_seq(xs, |x| x.wrapping_mul(0x9e3779b97f4a7c15));
        assert_eq!(a, b);
    }
}
