//! Second-order-stationarity solvers: perturbed F2BA and restarted
//! accelerated F2BA, built on the inexact perturbed-GD and inexact
//! nonconvex-AGD driver parameterizations.

use super::{theorem3_lambda, zeta_for_grad_error, DIVERGENCE_NORM};
use crate::error::{BilevelError, Result};
use crate::linalg;
use crate::oracle::{AnalyticHandles, BilevelOracle, SmoothnessInfo};
use crate::penalty::{hypergrad, inner_gd, schedule_k, update_delta, InnerState, PenaltyParams};
use crate::rng::RngStream;
use crate::solvers::fo::{FoConfig, InnerSchedule};
use crate::trace::{Status, Trace, TraceRecord};

/// Perturbation parameters of the inexact perturbed-GD driver.
#[derive(Debug, Clone, Copy)]
pub struct PerturbConfig {
    /// Target stationarity `eps`.
    pub eps: f64,
    /// Perturbation radius `r`.
    pub r: f64,
    /// Cooldown: no two perturbations within `cal_t` outer steps.
    pub cal_t: usize,
    /// Trigger level `(4/5) eps` on the hypergradient estimate.
    pub threshold: f64,
    /// Log factor `iota >= 1`.
    pub iota: f64,
}

impl PerturbConfig {
    /// Driver defaults: `iota = max(1, ln(d_x / (delta_prob * eps)))`,
    /// `r = eps / (400 iota^3)`, `cal_t = (L / sqrt(rho eps)) iota` with
    /// `L = D3` and `rho = D5` from the smoothness metadata.
    pub fn theorem3(
        smooth: &SmoothnessInfo,
        d_x: usize,
        eps: f64,
        delta_prob: f64,
    ) -> Result<Self> {
        let rho = smooth
            .d5()
            .ok_or(BilevelError::Unsupported(
                "second-order solvers need rho_f and nu_g declared",
            ))?
            .max(1e-12);
        let iota = (d_x as f64 / (delta_prob * eps)).ln().max(1.0);
        Ok(Self {
            eps,
            r: eps / (400.0 * iota.powi(3)),
            cal_t: (smooth.d3() / (rho * eps).sqrt() * iota).ceil().max(1.0) as usize,
            threshold: 0.8 * eps,
            iota,
        })
    }

    /// Inexactness target `zeta = min{1/(20 iota^2), 1/(16 iota^2 2^iota)} eps`
    /// the inner loops must meet for the driver guarantee.
    pub fn grad_accuracy(&self) -> f64 {
        let i2 = self.iota * self.iota;
        (1.0 / (20.0 * i2)).min(1.0 / (16.0 * i2 * self.iota.exp2())) * self.eps
    }
}

/// Perturbed F2BA. `cfg.inner` is normally adaptive with `zeta` derived from
/// [`PerturbConfig::grad_accuracy`]; see [`pf2ba_config`].
pub fn run_pf2ba<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
    perturb: &PerturbConfig,
    rng: &mut RngStream,
) -> Result<Trace> {
    run_pf2ba_with_probe(oracle, None, x0, y0, cfg, perturb, rng)
}

/// Default PF2BA configuration: theorem-3 lambda, practical `eta_x = 1/D3`,
/// adaptive inner schedule meeting the driver's inexactness condition.
pub fn pf2ba_config(
    smooth: &SmoothnessInfo,
    eps: f64,
    delta_gap: f64,
    r_warm: f64,
    t_max: usize,
) -> (FoConfig, PerturbConfig) {
    let lambda = theorem3_lambda(smooth, eps, delta_gap, r_warm);
    let perturb = PerturbConfig::theorem3(smooth, 2, eps, 0.1).unwrap_or(PerturbConfig {
        eps,
        r: eps,
        cal_t: 100,
        threshold: 0.8 * eps,
        iota: 1.0,
    });
    let zeta = zeta_for_grad_error(lambda, smooth.l_g, perturb.grad_accuracy());
    let cfg = FoConfig {
        penalty: PenaltyParams::practical(lambda, smooth),
        eta_x: 1.0 / smooth.d3(),
        t_max,
        inner: InnerSchedule::Adaptive { zeta },
        stop_grad_norm: None,
        batch_out: 1,
        batch_in: 1,
        seed: 0,
        record_iterates: false,
        delta0: None,
        r_warm,
    };
    (cfg, perturb)
}

pub fn run_pf2ba_with_probe<O: BilevelOracle + ?Sized>(
    oracle: &O,
    handles: Option<&dyn AnalyticHandles>,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
    perturb: &PerturbConfig,
    rng: &mut RngStream,
) -> Result<Trace> {
    let smooth = *oracle.smoothness();
    let lambda = cfg.penalty.lambda;
    let mut trace = Trace::new("pf2ba");
    trace.extension_columns = vec!["perturbation_event", "epoch_id", "restart_event"];
    trace.param("lambda", lambda);
    trace.param("eta_x", cfg.eta_x);
    trace.param("perturb_r", perturb.r);
    trace.param("perturb_cal_t", perturb.cal_t);
    trace.param("perturb_threshold", perturb.threshold);
    trace.param("seed", cfg.seed);
    if cfg.record_iterates {
        trace.iterates = Some(Vec::new());
        trace.grad_estimates = Some(Vec::new());
    }

    let mut x = x0.to_vec();
    let delta0 = super::fo::initial_delta(&smooth, handles, x0, y0, lambda, cfg.delta0, cfg.r_warm);
    let mut state = InnerState::new(y0.to_vec(), delta0);
    let mut calls: u64 = 0;
    let mut last_perturbation: Option<usize> = None;
    trace.status = Status::MaxIters;

    for t in 0..cfg.t_max {
        let k_t = match cfg.inner {
            InnerSchedule::FixedK(k) => k,
            InnerSchedule::Adaptive { zeta } => {
                schedule_k(state.delta.max(1e-300), lambda, &smooth, zeta)?
            }
        };
        let (y_k, z_k, evals) = inner_gd(oracle, &x, &state, &cfg.penalty, k_t)?;
        let g = hypergrad(oracle, &x, &y_k, &z_k, lambda)?;
        calls += evals + 3;
        let g_norm = linalg::norm(&g);

        // Perturb before stepping when the estimate is small and the
        // cooldown has elapsed; the gradient step below still uses the
        // estimate computed at the unperturbed point.
        let cooled = last_perturbation.map(|s| t - s > perturb.cal_t).unwrap_or(true);
        let fire = g_norm <= perturb.threshold && cooled;
        let anchor = x.clone();
        if fire {
            last_perturbation = Some(t);
            let xi = rng.uniform_in_ball(x.len(), perturb.r);
            linalg::axpy(&mut x, -cfg.eta_x, &xi);
        }

        let mut rec = TraceRecord {
            t,
            x_norm: linalg::norm(&anchor),
            grad_est_norm: g_norm,
            k_t,
            delta_t: state.delta,
            warm_dist_true: super::fo::warm_dist(handles, &anchor, &state, lambda),
            oracle_calls: calls,
            perturbation_event: Some(fire),
            epoch_id: Some(0),
            restart_event: Some(false),
            ..Default::default()
        };
        super::fo::probe_record(handles, &anchor, &mut rec);
        if let Some(it) = trace.iterates.as_mut() {
            it.push(anchor.clone());
        }
        if let Some(gs) = trace.grad_estimates.as_mut() {
            gs.push(g.clone());
        }
        trace.records.push(rec);

        let mut x_next = x.clone();
        linalg::axpy(&mut x_next, -cfg.eta_x, &g);
        // delta tracks movement between consecutive inner-solve anchors,
        // including the perturbation displacement.
        let step_sq = linalg::dist_sq(&x_next, &anchor);
        state.y = y_k;
        state.z = z_k;
        state.delta = update_delta(state.delta, step_sq, &smooth, 0.0)?;
        if !linalg::all_finite(&x_next) || linalg::norm(&x_next) > DIVERGENCE_NORM {
            trace.status = Status::Diverged;
            break;
        }
        x = x_next;
    }

    trace.final_x = x;
    trace.final_y = state.y;
    trace.final_z = state.z;
    Ok(trace)
}

/// Restart and momentum parameters of the inexact nonconvex-AGD driver.
#[derive(Debug, Clone, Copy)]
pub struct AgdConfig {
    /// Momentum parameter in `(0, 1]`; 1 degenerates to plain gradient steps.
    pub theta: f64,
    /// Restart ball radius `B`; `None` disables restarts (quadratic proxies
    /// have Hessian-Lipschitz constant 0, which sends the theory `B` to
    /// infinity).
    pub ball: Option<f64>,
    /// Per-epoch iteration cap `T = 2 chi / theta`.
    pub t_epoch: usize,
    /// Restart perturbation radius.
    pub r: f64,
    /// Optional practical decaying restart floor `(B0, gamma)`:
    /// use `max(B, B0)` and shrink `B0 *= gamma` after each restart.
    /// Off by default for theory-faithful runs.
    pub restart_floor: Option<(f64, f64)>,
}

impl AgdConfig {
    /// Theorem-4 defaults: `theta = (ell eps / kappa)^(1/4)` clamped into
    /// `(0, 1)`, `chi = ln(d_x / (delta_prob eps))`, `T = 2 chi / theta`,
    /// `B = sqrt(eps / rho) / (288 chi^2)` when `rho = D5 > 0`.
    pub fn theorem4(smooth: &SmoothnessInfo, d_x: usize, eps: f64, delta_prob: f64) -> Self {
        let chi = (d_x as f64 / (delta_prob * eps)).ln().max(1.0);
        let theta = (smooth.ell() * eps / smooth.kappa())
            .powf(0.25)
            .clamp(1e-3, 0.9);
        let rho = smooth.d5().unwrap_or(0.0);
        let ball = if rho > 0.0 {
            Some((eps / rho).sqrt() / (288.0 * chi * chi))
        } else {
            None
        };
        let t_epoch = (2.0 * chi / theta).ceil() as usize;
        let r = match ball {
            Some(b) => {
                let t = t_epoch as f64;
                ((b + b * b) / std::f64::consts::SQRT_2)
                    .min(theta * b / (20.0 * t))
                    .min(theta * b * b / (2.0 * t))
            }
            None => eps,
        };
        Self {
            theta,
            ball,
            t_epoch,
            r,
            restart_floor: None,
        }
    }
}

/// Accelerated F2BA. `cfg.t_max` caps the total iteration count across
/// epochs; each epoch runs at most `agd.t_epoch` iterations before the run
/// terminates and returns the averaged half-point iterate.
pub fn run_accf2ba<O: BilevelOracle + ?Sized>(
    oracle: &O,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
    agd: &AgdConfig,
    rng: &mut RngStream,
) -> Result<Trace> {
    run_accf2ba_with_probe(oracle, None, x0, y0, cfg, agd, rng)
}

pub fn run_accf2ba_with_probe<O: BilevelOracle + ?Sized>(
    oracle: &O,
    handles: Option<&dyn AnalyticHandles>,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
    agd: &AgdConfig,
    rng: &mut RngStream,
) -> Result<Trace> {
    if !(agd.theta > 0.0 && agd.theta <= 1.0) {
        return Err(BilevelError::Domain(format!(
            "momentum parameter theta must lie in (0, 1], got {}",
            agd.theta
        )));
    }
    let smooth = *oracle.smoothness();
    let lambda = cfg.penalty.lambda;
    let mut trace = Trace::new("accf2ba");
    trace.extension_columns = vec!["perturbation_event", "epoch_id", "restart_event"];
    trace.param("lambda", lambda);
    trace.param("eta_x", cfg.eta_x);
    trace.param("theta", agd.theta);
    trace.param(
        "ball",
        agd.ball.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
    );
    trace.param("t_epoch", agd.t_epoch);
    trace.param("seed", cfg.seed);
    if cfg.record_iterates {
        trace.iterates = Some(Vec::new());
        trace.grad_estimates = Some(Vec::new());
    }

    let mut x_prev = x0.to_vec();
    let mut x_cur = x0.to_vec();
    let delta0 = super::fo::initial_delta(&smooth, handles, x0, y0, lambda, cfg.delta0, cfg.r_warm);
    let mut state = InnerState::new(y0.to_vec(), delta0);
    let mut calls: u64 = 0;

    let mut epoch_id = 0usize;
    let mut epoch_t = 0usize; // t within the current epoch
    let mut epoch_step_sq_sum = 0.0;
    let mut epoch_halves: Vec<Vec<f64>> = Vec::new();
    let mut epoch_step_norms: Vec<f64> = Vec::new();
    let mut prev_half: Option<Vec<f64>> = None;
    let mut floor = agd.restart_floor;
    let mut finished_epoch = false;
    trace.status = Status::MaxIters;

    for total in 0..cfg.t_max {
        // Line 3: extrapolation with momentum 1 - theta.
        let mut x_half = x_cur.clone();
        for i in 0..x_half.len() {
            x_half[i] += (1.0 - agd.theta) * (x_cur[i] - x_prev[i]);
        }

        let k_t = match cfg.inner {
            InnerSchedule::FixedK(k) => k,
            InnerSchedule::Adaptive { zeta } => {
                schedule_k(state.delta.max(1e-300), lambda, &smooth, zeta)?
            }
        };
        let (y_k, z_k, evals) = inner_gd(oracle, &x_half, &state, &cfg.penalty, k_t)?;
        let g = hypergrad(oracle, &x_half, &y_k, &z_k, lambda)?;
        calls += evals + 3;

        let mut x_next = x_half.clone();
        linalg::axpy(&mut x_next, -cfg.eta_x, &g);

        // delta recursion moves between consecutive half points.
        let half_step_sq = prev_half
            .as_ref()
            .map(|p| linalg::dist_sq(&x_half, p))
            .unwrap_or(0.0);
        state.y = y_k;
        state.z = z_k;
        state.delta = update_delta(state.delta, half_step_sq, &smooth, 0.0)?;
        prev_half = Some(x_half.clone());

        let mut rec = TraceRecord {
            t: total,
            x_norm: linalg::norm(&x_half),
            grad_est_norm: linalg::norm(&g),
            k_t,
            delta_t: state.delta,
            oracle_calls: calls,
            perturbation_event: Some(false),
            epoch_id: Some(epoch_id),
            restart_event: Some(false),
            ..Default::default()
        };
        super::fo::probe_record(handles, &x_half, &mut rec);
        if let Some(it) = trace.iterates.as_mut() {
            it.push(x_half.clone());
        }
        if let Some(gs) = trace.grad_estimates.as_mut() {
            gs.push(g.clone());
        }

        if !linalg::all_finite(&x_next) || linalg::norm(&x_next) > DIVERGENCE_NORM {
            trace.records.push(rec);
            trace.status = Status::Diverged;
            break;
        }

        epoch_halves.push(x_half.clone());
        epoch_step_norms.push(linalg::dist(&x_next, &x_cur));
        epoch_step_sq_sum += linalg::dist_sq(&x_next, &x_cur);
        x_prev = x_cur;
        x_cur = x_next;
        epoch_t += 1;

        // Line 13: restart when t * sum_j ||x_{j+1} - x_j||^2 exceeds B^2.
        let b_eff = agd.ball.map(|b| match floor {
            Some((b0, _)) => b.max(b0),
            None => b,
        });
        let tripped = b_eff
            .map(|b| epoch_t as f64 * epoch_step_sq_sum > b * b)
            .unwrap_or(false);
        if tripped {
            let b = b_eff.unwrap();
            rec.restart_event = Some(true);
            // Perturb only if the latest estimate was small.
            if linalg::norm(&g) <= b / (2.0 * cfg.eta_x) {
                rec.perturbation_event = Some(true);
                let xi = rng.uniform_in_ball(x_cur.len(), agd.r);
                linalg::axpy(&mut x_cur, 1.0, &xi);
            }
            x_prev = x_cur.clone();
            epoch_id += 1;
            epoch_t = 0;
            epoch_step_sq_sum = 0.0;
            epoch_halves.clear();
            epoch_step_norms.clear();
            if let Some((b0, gamma)) = floor {
                floor = Some((b0 * gamma, gamma));
            }
            trace.records.push(rec);
            continue;
        }
        trace.records.push(rec);

        if epoch_t >= agd.t_epoch {
            finished_epoch = true;
            trace.status = Status::Converged;
            break;
        }
    }

    // Output rule: T0 = argmin_{floor(T/2) <= t <= T-1} ||x_{t+1} - x_t||,
    // return the average of the half points up to T0.
    let t_now = epoch_halves.len();
    trace.final_x = if t_now == 0 {
        x_cur.clone()
    } else {
        let lo = if finished_epoch { t_now / 2 } else { t_now / 2 };
        let mut t0 = lo;
        for t in lo..t_now {
            if epoch_step_norms[t] < epoch_step_norms[t0] {
                t0 = t;
            }
        }
        let mut avg = vec![0.0; x_cur.len()];
        for h in &epoch_halves[..=t0] {
            linalg::axpy(&mut avg, 1.0, h);
        }
        linalg::scale(&avg, 1.0 / (t0 + 1) as f64)
    };
    trace.final_y = state.y;
    trace.final_z = state.z;
    Ok(trace)
}
