//! Single-sample stochastic stack: epoch-doubling SGD, the biased
//! hypergradient estimator, its MLMC debiasing wrapper, and the F3BSA
//! outer loop.
//!
//! The estimator structure: [`hypergrad_est`] solves the two lower-level
//! problems with the epoch-doubling SGD routine (fresh noise inside), then
//! assembles the first-order hypergradient on one frozen sample pair. The
//! MLMC wrapper draws a geometric level `J` with `P(J=j) = 2^-j` and returns
//!
//! ```text
//! G = G^(0) + 2^J (G^(J) - G^(J-1)) 1[J <= S]
//! ```
//!
//! averaged over `M` draws, which telescopes to `E[G] = E[G^(S)]`. Levels
//! share one SGD chain per draw - the level-`j` solve extends the
//! level-`j-1` solve by exactly one epoch - so the telescoped terms couple
//! maximally and the cost accounting matches the `E[2^J 1[J<=S]] = S`
//! identity.

use super::DIVERGENCE_NORM;
use crate::error::{BilevelError, Result};
use crate::linalg;
use crate::oracle::{AnalyticHandles, BilevelOracle, FrozenPair, GaussianNoise, SmoothnessInfo};
use crate::parallel::map_auto;
use crate::rng::RngStream;
use crate::trace::{Status, Trace, TraceRecord};
use crate::Vector;

/// `K` single-sample SGD steps at step size `eta`; returns the iterate
/// average `(1/K) sum_{k=1..K} x_k` (the start point is excluded; `K = 0`
/// degenerates to the start point).
pub fn sgd_avg<F>(grad: &mut F, x0: &[f64], eta: f64, k: usize, rng: &mut RngStream) -> Vector
where
    F: FnMut(&[f64], &mut RngStream) -> Vector,
{
    let mut x = x0.to_vec();
    if k == 0 {
        return x;
    }
    let mut avg = vec![0.0; x0.len()];
    for _ in 0..k {
        let g = grad(&x, rng);
        linalg::axpy(&mut x, -eta, &g);
        linalg::axpy(&mut avg, 1.0, &x);
    }
    linalg::scale(&avg, 1.0 / k as f64)
}

fn epoch_len_base(alpha: f64, beta: f64) -> usize {
    (4.0 * beta / alpha).ceil().max(1.0) as usize
}

fn epoch_len_k(alpha: f64, beta: f64, k: u32) -> usize {
    ((k as f64 + 2.0).exp2() * beta / alpha).ceil().max(1.0) as usize
}

/// Epoch-doubling SGD for `alpha`-strongly-convex, `beta`-smooth objectives:
/// `N` epochs at step `1/(2 beta)` of length `ceil(4 beta / alpha)`, then `K`
/// epochs where epoch `k` uses step `1/(2^k beta)` and length
/// `ceil(2^(k+2) beta / alpha)`.
///
/// Satisfies
/// `E||x_out - x*||^2 <= ||x0 - x*||^2 / 2^(N+2K) + sigma^2 / (2^(K-2) alpha beta)`.
pub fn sgd_sc<F>(
    grad: &mut F,
    x0: &[f64],
    n: usize,
    k: usize,
    alpha: f64,
    beta: f64,
    rng: &mut RngStream,
) -> Vector
where
    F: FnMut(&[f64], &mut RngStream) -> Vector,
{
    let (levels, _) = sgd_sc_levels(grad, x0, n, k as u32, alpha, beta, rng);
    levels.into_iter().last().unwrap()
}

/// Total SGD step count of [`sgd_sc`] with the given epoch structure.
pub fn sgd_sc_cost(n: usize, k: usize, alpha: f64, beta: f64) -> u64 {
    let mut c = (n as u64) * epoch_len_base(alpha, beta) as u64;
    for j in 1..=k {
        c += epoch_len_k(alpha, beta, j as u32) as u64;
    }
    c
}

/// Run one epoch-doubling chain, recording the iterate after the `N` base
/// epochs (level 0) and after each decaying epoch (levels `1..=k_max`).
fn sgd_sc_levels<F>(
    grad: &mut F,
    x0: &[f64],
    n: usize,
    k_max: u32,
    alpha: f64,
    beta: f64,
    rng: &mut RngStream,
) -> (Vec<Vector>, u64)
where
    F: FnMut(&[f64], &mut RngStream) -> Vector,
{
    let mut x = x0.to_vec();
    let mut steps: u64 = 0;
    let base_len = epoch_len_base(alpha, beta);
    for _ in 0..n {
        x = sgd_avg(grad, &x, 1.0 / (2.0 * beta), base_len, rng);
        steps += base_len as u64;
    }
    let mut levels = Vec::with_capacity(k_max as usize + 1);
    levels.push(x.clone());
    for j in 1..=k_max {
        let len = epoch_len_k(alpha, beta, j);
        x = sgd_avg(grad, &x, 1.0 / ((j as f64).exp2() * beta), len, rng);
        steps += len as u64;
        levels.push(x.clone());
    }
    (levels, steps)
}

/// Output of one (possibly multi-level) hypergradient estimation.
#[derive(Debug, Clone)]
pub struct EstimatorSample {
    pub g: Vector,
    /// Warm-start outputs: the level-0 iterates of the first draw.
    pub y_out: Vector,
    pub z_out: Vector,
    /// Highest decaying-epoch level actually run across the draws.
    pub levels_used: u32,
    /// Single-sample stochastic gradient draws consumed by the inner chains.
    pub sfo_calls: u64,
}

struct ChainOutputs {
    y_levels: Vec<Vector>,
    z_levels: Vec<Vector>,
    sfo: u64,
}

/// Run the two lower-level chains to level `k_max`. Each `y`-step draws one
/// `f` and one `g` sample (2 SFO); each `z`-step draws one `g` sample.
fn run_chains<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    x: &[f64],
    y0: &[f64],
    z0: &[f64],
    n: usize,
    k_max: u32,
    lambda: f64,
    rng: &mut RngStream,
) -> ChainOutputs {
    let s = *oracle.smoothness();
    let (alpha_y, beta_y) = (s.mu_penalty(lambda), s.beta_penalty(lambda));
    let (alpha_z, beta_z) = (lambda * s.mu, lambda * s.l_g);

    let mut y_sampler = |y: &[f64], r: &mut RngStream| -> Vector {
        let (_, fy) = oracle.sample_grad_f(x, y, r).expect("wrapper always samples");
        let (_, gy) = oracle.sample_grad_g(x, y, r).expect("wrapper always samples");
        (0..fy.len()).map(|i| fy[i] + lambda * gy[i]).collect()
    };
    let (y_levels, y_steps) = sgd_sc_levels(&mut y_sampler, y0, n, k_max, alpha_y, beta_y, rng);

    let mut z_sampler = |z: &[f64], r: &mut RngStream| -> Vector {
        let (_, gz) = oracle.sample_grad_g(x, z, r).expect("wrapper always samples");
        linalg::scale(&gz, lambda)
    };
    let (z_levels, z_steps) = sgd_sc_levels(&mut z_sampler, z0, n, k_max, alpha_z, beta_z, rng);

    ChainOutputs {
        y_levels,
        z_levels,
        sfo: 2 * y_steps + z_steps,
    }
}

/// First-order hypergradient assembled on the frozen sample pair.
fn assemble<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    lambda: f64,
    pair: &FrozenPair,
) -> Vector {
    let (fx, _) = oracle.grad_f_frozen(x, y, pair);
    let (gx_y, _) = oracle.grad_g_frozen(x, y, pair);
    let (gx_z, _) = oracle.grad_g_frozen(x, z, pair);
    (0..x.len())
        .map(|i| fx[i] + lambda * (gx_y[i] - gx_z[i]))
        .collect()
}

/// Biased hypergradient estimator at fixed level `k`.
pub fn hypergrad_est<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    x: &[f64],
    y0: &[f64],
    z0: &[f64],
    pair: &FrozenPair,
    n: usize,
    k: usize,
    lambda: f64,
    rng: &mut RngStream,
) -> EstimatorSample {
    let chains = run_chains(oracle, x, y0, z0, n, k as u32, lambda, rng);
    let y_hat = chains.y_levels.last().unwrap();
    let z_hat = chains.z_levels.last().unwrap();
    EstimatorSample {
        g: assemble(oracle, x, y_hat, z_hat, lambda, pair),
        y_out: chains.y_levels[0].clone(),
        z_out: chains.z_levels[0].clone(),
        levels_used: k as u32,
        sfo_calls: chains.sfo,
    }
}

/// Averaging count, base epochs and truncation level of one MLMC call.
#[derive(Debug, Clone, Copy)]
pub struct MlmcConfig {
    pub m_avg: usize,
    pub n_base: usize,
    pub s_max: u32,
}

impl MlmcConfig {
    /// Estimator parameters with unit constants:
    /// `N = S = log2(max{lam^2 ell^2 delta, kappa sig2} / zeta_bias)` floored
    /// at 8 and `M = kappa sig2 N / zeta_variance`, where
    /// `zeta_bias = min{eps^2, sig2}`, `zeta_variance = sig2` and
    /// `sig2 = sigma_f^2 + lam^2 sigma_g^2`.
    pub fn theorem_c(smooth: &SmoothnessInfo, lambda: f64, delta_t: f64, eps: f64) -> Self {
        let sig2 = smooth.sigma_f * smooth.sigma_f
            + lambda * lambda * smooth.sigma_g * smooth.sigma_g;
        let zeta_bias = (eps * eps).min(sig2).max(1e-300);
        let kappa = smooth.kappa();
        let ell = smooth.ell();
        let arg = (lambda * lambda * ell * ell * delta_t.max(1e-300)).max(kappa * sig2);
        let n = (arg / zeta_bias).log2().ceil().clamp(8.0, 60.0);
        let m = if sig2 > 0.0 { (kappa * n).ceil().max(1.0) } else { 1.0 };
        Self {
            m_avg: m as usize,
            n_base: n as usize,
            s_max: n as u32,
        }
    }
}

/// Exact expected SFO count of one [`mlmc_hypergrad`] call (the counting
/// analogue of `(8 (L_f + lam L_g) / (lam mu)) (N + S) M`): the level-`j`
/// chain costs `2 cost_y(N, j) + cost_z(N, j)` and is run with probability
/// `2^-j` for `j <= S`, else only the base chain runs.
pub fn expected_sfo(cfg: &MlmcConfig, smooth: &SmoothnessInfo, lambda: f64) -> f64 {
    let (alpha_y, beta_y) = (smooth.mu_penalty(lambda), smooth.beta_penalty(lambda));
    let (alpha_z, beta_z) = (lambda * smooth.mu, lambda * smooth.l_g);
    let cost = |j: usize| -> f64 {
        (2 * sgd_sc_cost(cfg.n_base, j, alpha_y, beta_y) + sgd_sc_cost(cfg.n_base, j, alpha_z, beta_z))
            as f64
    };
    let mut e = 0.0;
    let mut tail = 1.0; // P(J > s_max) accumulates the truncated mass
    for j in 1..=cfg.s_max as usize {
        let p = 0.5f64.powi(j as i32);
        e += p * cost(j);
        tail -= p;
    }
    e += tail * cost(0);
    cfg.m_avg as f64 * e
}

/// MLMC-debiased hypergradient estimator.
///
/// The `M` draws are independent given forked RNG streams and run in
/// parallel; the average is reduced in index order, so the result matches
/// the sequential path bit for bit.
pub fn mlmc_hypergrad<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    x: &[f64],
    y0: &[f64],
    z0: &[f64],
    pair: &FrozenPair,
    lambda: f64,
    cfg: &MlmcConfig,
    rng: &mut RngStream,
) -> Result<EstimatorSample> {
    if cfg.m_avg == 0 || cfg.s_max == 0 {
        return Err(BilevelError::Contract(
            "MLMC needs m_avg >= 1 and s_max >= 1".into(),
        ));
    }
    let streams: Vec<RngStream> = (0..cfg.m_avg).map(|_| rng.fork()).collect();

    struct Draw {
        g: Vector,
        y0_out: Vector,
        z0_out: Vector,
        level: u32,
        sfo: u64,
    }

    let draws: Vec<Draw> = map_auto(streams, |mut r| {
        let j = r.geometric_level();
        let cap = if j <= cfg.s_max { j } else { 0 };
        let chains = run_chains(oracle, x, y0, z0, cfg.n_base, cap, lambda, &mut r);
        let mut g = assemble(oracle, x, &chains.y_levels[0], &chains.z_levels[0], lambda, pair);
        if j <= cfg.s_max {
            let (jj, jm) = (j as usize, j as usize - 1);
            let gj = assemble(oracle, x, &chains.y_levels[jj], &chains.z_levels[jj], lambda, pair);
            let gm = assemble(oracle, x, &chains.y_levels[jm], &chains.z_levels[jm], lambda, pair);
            let w = (j as f64).exp2();
            for i in 0..g.len() {
                g[i] += w * (gj[i] - gm[i]);
            }
        }
        Draw {
            g,
            y0_out: chains.y_levels[0].clone(),
            z0_out: chains.z_levels[0].clone(),
            level: cap,
            sfo: chains.sfo,
        }
    });

    let mut g = vec![0.0; x.len()];
    let mut sfo = 0u64;
    let mut level = 0u32;
    for d in &draws {
        linalg::axpy(&mut g, 1.0, &d.g);
        sfo += d.sfo;
        level = level.max(d.level);
    }
    let g = linalg::scale(&g, 1.0 / cfg.m_avg as f64);
    Ok(EstimatorSample {
        g,
        y_out: draws[0].y0_out.clone(),
        z_out: draws[0].z0_out.clone(),
        levels_used: level,
        sfo_calls: sfo,
    })
}

/// Outer configuration of F3BSA.
#[derive(Debug, Clone)]
pub struct F3Config {
    pub lambda: f64,
    pub eta_x: f64,
    pub t_max: usize,
    /// Target stationarity driving the adaptive estimator parameters.
    pub eps: f64,
    /// Fixed estimator parameters; when `None` they adapt to `delta_t` via
    /// [`MlmcConfig::theorem_c`].
    pub mlmc: Option<MlmcConfig>,
    pub seed: u64,
    pub record_iterates: bool,
    pub delta0: Option<f64>,
    pub r_warm: f64,
}

impl F3Config {
    /// Theorem defaults: lambda from the first-order formula and
    /// `eta_x = eps^2 / ((sigma_f^2 + lam^2 sigma_g^2) ell kappa^3)` with
    /// unit constants (clamped by the deterministic default `1/D3`).
    pub fn theorem_defaults(
        smooth: &SmoothnessInfo,
        eps: f64,
        delta_gap: f64,
        r_warm: f64,
    ) -> Self {
        let lambda = super::theorem1_lambda(smooth, eps, delta_gap, r_warm);
        let sig2 =
            smooth.sigma_f * smooth.sigma_f + lambda * lambda * smooth.sigma_g * smooth.sigma_g;
        let eta_theory = if sig2 > 0.0 {
            eps * eps / (sig2 * smooth.ell() * smooth.kappa().powi(3))
        } else {
            f64::INFINITY
        };
        Self {
            lambda,
            eta_x: eta_theory.min(1.0 / smooth.d3()),
            t_max: 10_000,
            eps,
            mlmc: None,
            seed: 0,
            record_iterates: false,
            delta0: None,
            r_warm,
        }
    }
}

/// Single-sample stochastic outer loop with the MLMC estimator.
pub fn run_f3bsa<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    x0: &[f64],
    y0: &[f64],
    cfg: &F3Config,
    rng: &mut RngStream,
) -> Result<Trace> {
    run_f3bsa_with_probe(oracle, None, x0, y0, cfg, rng)
}

/// F3BSA with analytic probing. Per step: draw one frozen sample pair, call
/// [`mlmc_hypergrad`], take the outer step, carry the level-0 outputs as
/// warm starts, and advance the `delta_t` recursion with the single-sample
/// noise floor `24 (sigma_f^2 + lam^2 sigma_g^2) / (lam mu (L_f + lam L_g))`.
/// The returned `final_x` is the iterate average over the run.
pub fn run_f3bsa_with_probe<O: BilevelOracle>(
    oracle: &GaussianNoise<O>,
    handles: Option<&dyn AnalyticHandles>,
    x0: &[f64],
    y0: &[f64],
    cfg: &F3Config,
    rng: &mut RngStream,
) -> Result<Trace> {
    let smooth = *oracle.smoothness();
    let lambda = cfg.lambda;
    let sig2 =
        smooth.sigma_f * smooth.sigma_f + lambda * lambda * smooth.sigma_g * smooth.sigma_g;
    let noise_floor = 24.0 * sig2 / (lambda * smooth.mu * smooth.beta_penalty(lambda));

    let mut trace = Trace::new("f3bsa");
    trace.extension_columns = vec!["level_J_max", "mlmc_M", "sfo_calls_step"];
    trace.param("lambda", lambda);
    trace.param("eta_x", cfg.eta_x);
    trace.param("noise_floor", noise_floor);
    trace.param("seed", cfg.seed);
    trace.param(
        "sample_pair_semantics",
        "frozen pair reused across the assembly of every level and draw; inner SGD redraws fresh noise",
    );
    if cfg.record_iterates {
        trace.iterates = Some(Vec::new());
        trace.grad_estimates = Some(Vec::new());
    }

    let mut x = x0.to_vec();
    let delta0 = super::fo::initial_delta(&smooth, handles, x0, y0, lambda, cfg.delta0, cfg.r_warm);
    let mut y = y0.to_vec();
    let mut z = y0.to_vec();
    let mut delta = delta0;
    let mut sfo_total: u64 = 0;
    let mut x_sum = vec![0.0; x.len()];
    let mut recorded = 0usize;
    trace.status = Status::MaxIters;

    for t in 0..cfg.t_max {
        let mlmc_cfg = cfg
            .mlmc
            .unwrap_or_else(|| MlmcConfig::theorem_c(&smooth, lambda, delta, cfg.eps));
        let pair = oracle.freeze_pair(rng);
        let est = mlmc_hypergrad(oracle, &x, &y, &z, &pair, lambda, &mlmc_cfg, rng)?;
        sfo_total += est.sfo_calls;

        let mut rec = TraceRecord {
            t,
            x_norm: linalg::norm(&x),
            grad_est_norm: linalg::norm(&est.g),
            k_t: mlmc_cfg.n_base,
            delta_t: delta,
            oracle_calls: sfo_total,
            level_j_max: Some(est.levels_used),
            mlmc_m: Some(mlmc_cfg.m_avg),
            sfo_calls_step: Some(est.sfo_calls),
            ..Default::default()
        };
        super::fo::probe_record(handles, &x, &mut rec);
        if let Some(it) = trace.iterates.as_mut() {
            it.push(x.clone());
        }
        if let Some(gs) = trace.grad_estimates.as_mut() {
            gs.push(est.g.clone());
        }
        trace.records.push(rec);
        linalg::axpy(&mut x_sum, 1.0, &x);
        recorded += 1;

        let mut x_next = x.clone();
        linalg::axpy(&mut x_next, -cfg.eta_x, &est.g);
        let step_sq = linalg::dist_sq(&x_next, &x);
        delta = crate::penalty::update_delta(delta, step_sq, &smooth, noise_floor)?;
        y = est.y_out;
        z = est.z_out;
        if !linalg::all_finite(&x_next) || linalg::norm(&x_next) > DIVERGENCE_NORM {
            trace.status = Status::Diverged;
            break;
        }
        x = x_next;
    }

    // Output rule: the averaged iterate over the run.
    trace.final_x = if recorded > 0 {
        linalg::scale(&x_sum, 1.0 / recorded as f64)
    } else {
        x
    };
    trace.final_y = y;
    trace.final_z = z;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::QuadraticInstance;
    use crate::oracle::AnalyticHandles;

    fn noiseless() -> GaussianNoise<QuadraticInstance> {
        GaussianNoise::new(QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap(), 0.0, 0.0)
    }

    #[test]
    fn sgd_avg_hand_iteration() {
        // h(x) = x^2/2, eta = 1/2, x0 = 1, K = 4: iterates halve each step
        let mut grad = |x: &[f64], _: &mut RngStream| vec![x[0]];
        let mut rng = RngStream::new(0, 0);
        let out = sgd_avg(&mut grad, &[1.0], 0.5, 4, &mut rng);
        assert!((out[0] - 0.234375).abs() < 1e-15);
        let out = sgd_avg(&mut grad, &[0.0], 0.5, 4, &mut rng);
        assert_eq!(out[0], 0.0);
        // K = 1 returns the single iterate itself
        let out = sgd_avg(&mut grad, &[1.0], 0.5, 1, &mut rng);
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn sgd_sc_cost_formula() {
        // alpha = beta: N * 4 + 8 + 16
        assert_eq!(sgd_sc_cost(2, 2, 1.0, 1.0), 32);
        assert_eq!(sgd_sc_cost(4, 0, 1.0, 1.0), 16);
    }

    #[test]
    fn sgd_sc_noiseless_contraction_and_fixed_point() {
        let mut grad = |x: &[f64], _: &mut RngStream| vec![x[0]];
        let mut rng = RngStream::new(0, 0);
        // N = 4, K = 0: ||x_out||^2 <= ||x0||^2 / 16
        let out = sgd_sc(&mut grad, &[1.0], 4, 0, 1.0, 1.0, &mut rng);
        assert!(out[0] * out[0] <= 1.0 / 16.0 + 1e-12);
        let out = sgd_sc(&mut grad, &[0.0], 4, 3, 1.0, 1.0, &mut rng);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn noiseless_estimator_matches_deterministic_hypergrad() {
        let oracle = noiseless();
        let mut rng = RngStream::new(1, 0);
        let pair = oracle.freeze_pair(&mut rng);
        let est = hypergrad_est(&oracle, &[0.0], &[0.0], &[0.0], &pair, 20, 4, 9.0, &mut rng);
        // exact grad L*_9(0) = -0.9
        assert!((est.g[0] + 0.9).abs() < 1e-4);
        // level monotonicity: solve error shrinks by >= 4x per level (noiseless)
        let exact = -0.9;
        let mut prev = f64::INFINITY;
        for k in 0..4 {
            let e = hypergrad_est(&oracle, &[0.0], &[0.0], &[0.0], &pair, 6, k, 9.0, &mut rng);
            let err = (e.g[0] - exact).abs();
            assert!(err <= prev / 3.0 + 1e-12, "level {k}: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn mlmc_truncation_reduces_to_level_zero_mean() {
        // with s_max = 1 every draw with J > 1 contributes its level-0 estimate
        let oracle = noiseless();
        let mut rng = RngStream::new(7, 0);
        let pair = oracle.freeze_pair(&mut rng);
        let cfg = MlmcConfig {
            m_avg: 8,
            n_base: 10,
            s_max: 1,
        };
        let est = mlmc_hypergrad(&oracle, &[0.5], &[0.0], &[0.0], &pair, 9.0, &cfg, &mut rng).unwrap();
        assert!(est.levels_used <= 1);
        assert!(est.g[0].is_finite());
    }

    #[test]
    fn noiseless_mlmc_close_to_exact_proxy_gradient() {
        let oracle = noiseless();
        let mut rng = RngStream::new(3, 0);
        let pair = oracle.freeze_pair(&mut rng);
        let cfg = MlmcConfig {
            m_avg: 4,
            n_base: 20,
            s_max: 20,
        };
        let est = mlmc_hypergrad(&oracle, &[0.0], &[0.0], &[0.0], &pair, 9.0, &cfg, &mut rng).unwrap();
        assert!((est.g[0] + 0.9).abs() <= 1e-6);
    }

    #[test]
    fn estimator_is_deterministic_given_streams() {
        let oracle = GaussianNoise::new(
            QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap(),
            0.1,
            0.1,
        );
        let run = || {
            let mut rng = RngStream::new(11, 4);
            let pair = oracle.freeze_pair(&mut rng);
            let cfg = MlmcConfig {
                m_avg: 6,
                n_base: 8,
                s_max: 8,
            };
            mlmc_hypergrad(&oracle, &[0.2], &[0.1], &[0.1], &pair, 9.0, &cfg, &mut rng)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.g, b.g);
        assert_eq!(a.sfo_calls, b.sfo_calls);
    }

    #[test]
    fn noiseless_f3bsa_matches_f2ba_terminus() {
        let oracle = noiseless();
        let cfg = F3Config {
            lambda: 9.0,
            eta_x: 0.2,
            t_max: 120,
            eps: 1e-3,
            mlmc: Some(MlmcConfig {
                m_avg: 1,
                n_base: 20,
                s_max: 20,
            }),
            seed: 0,
            record_iterates: false,
            delta0: None,
            r_warm: 1.0,
        };
        let mut rng = RngStream::new(5, 0);
        let trace = run_f3bsa(&oracle, &[0.0], &[0.0], &cfg, &mut rng).unwrap();
        // the proxy minimizer is x = 1; the averaged iterate lags slightly
        let last = trace.records.last().unwrap();
        assert!(last.grad_est_norm < 1e-3);
    }
}
