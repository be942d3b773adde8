//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test -p bilevel --test acceptance -- --nocapture` to see
//! the per-criterion lines. Every tolerance is pinned in code; the suite is
//! deterministic (fixed seeds throughout).

use bilevel::instances::{QuadraticInstance, RidgeInstance, SaddleInstance};
use bilevel::linalg;
use bilevel::nalgebra::{DMatrix, DVector};
use bilevel::oracle::{AnalyticHandles, BilevelOracle, CountingOracle, GaussianNoise};
use bilevel::parallel::map_auto;
use bilevel::penalty::PenaltyParams;
use bilevel::solvers::{
    expected_sfo, hypergrad_est, mlmc_hypergrad, pf2ba_config, run_accf2ba_with_probe,
    run_f2ba_with_probe, run_f2bsa_with_probe, run_f3bsa_with_probe, run_pf2ba_with_probe,
    sgd_sc, theorem1_fixed_k, theorem2_batches, zeta_for_grad_error, AgdConfig, F3Config,
    FoConfig, InnerSchedule, MlmcConfig,
};
use bilevel::trace::Trace;
use bilevel::verify::{hessian_probe, proxy_error_scan, sym_min_eig};
use bilevel::RngStream;

fn scalar_instance() -> QuadraticInstance {
    QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap()
}

/// 5-dimensional quadratic with condition number kappa = ell/mu = 100
/// realized through the region-certified C_f (L_g stays 2, which keeps the
/// paper-formula step bound D3 = 19 honest and the two-time-scale gap
/// measurable).
fn kappa100_instance() -> QuadraticInstance {
    let a = DVector::from_vec(vec![2.0, -1.0, 1.5, 0.5, -2.0]);
    QuadraticInstance::new(a, DMatrix::identity(5, 5), DMatrix::zeros(5, 5))
        .unwrap()
        .with_c_f(100.0)
}

fn pass_line(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n:>2} {}: {name} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {name} ({detail})");
}

#[test]
fn criterion_01_proxy_gradient_closeness() {
    let inst = scalar_instance();
    let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
    let lambdas = [9.0, 19.0, 39.0, 79.0];
    let rep = proxy_error_scan(&inst, inst.smoothness(), &lambdas, &grid).unwrap();
    let expected = [0.3, 0.15, 0.075, 0.0375];
    let mut ok = true;
    for (lam, want) in lambdas.iter().zip(expected) {
        let got = rep.metric(&format!("max_err_lambda_{lam}")).unwrap();
        ok &= (got - want).abs() <= 1e-9;
    }
    // exact halving between consecutive lambdas
    for w in expected.windows(2) {
        ok &= (w[1] / w[0] - 0.5).abs() <= 1e-9;
    }
    let slope = rep.metric("fitted_decay_exponent").unwrap();
    ok &= (-1.01..=-0.99).contains(&slope);
    pass_line(
        1,
        "proxy gradient closeness",
        ok,
        &format!("errors halve exactly, log-log slope {slope:.6}"),
    );
}

#[test]
fn criterion_02_lambda_independent_smoothness() {
    let inst = scalar_instance();
    let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
    let lambdas = [1e2, 1e3, 1e4];
    let rep = hessian_probe(&inst, inst.smoothness(), &lambdas, &grid).unwrap();
    let bound = 1.0; // ||B'B + P|| for the scalar instance
    let mut ok = rep.pass;
    let mut prev = 0.0;
    for lam in lambdas {
        let sup = rep.metric(&format!("sup_hess_norm_lambda_{lam}")).unwrap();
        ok &= sup <= bound + 1e-12;
        ok &= sup >= prev; // monotone approach to the limit
        prev = sup;
    }
    pass_line(
        2,
        "lambda-independent smoothness of the proxy",
        ok,
        &format!("sup norms approach {bound} from below, final gap {:.2e}", bound - prev),
    );
}

#[test]
fn criterion_03_hessian_closeness_halves() {
    let inst = scalar_instance();
    let grid: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.0], vec![2.0]];
    let mut ok = true;
    let mut worst_ratio: f64 = 0.5;
    for lam in [1e2, 1e3, 1e4] {
        let rep = hessian_probe(&inst, inst.smoothness(), &[lam, 2.0 * lam], &grid).unwrap();
        let e1 = rep.metric(&format!("hess_closeness_lambda_{lam}")).unwrap();
        let e2 = rep
            .metric(&format!("hess_closeness_lambda_{}", 2.0 * lam))
            .unwrap();
        let ratio = e2 / e1;
        ok &= (0.475..=0.525).contains(&ratio);
        if (ratio - 0.5).abs() > (worst_ratio - 0.5).abs() {
            worst_ratio = ratio;
        }
    }
    pass_line(
        3,
        "hessian closeness halves when lambda doubles",
        ok,
        &format!("worst doubling ratio {worst_ratio:.4}"),
    );
}

fn descent_violations(inst: &QuadraticInstance, trace: &Trace, eta_x: f64, lambda: f64) -> f64 {
    let xs = trace.iterates.as_ref().unwrap();
    let gs = trace.grad_estimates.as_ref().unwrap();
    let mut worst = 0.0f64;
    for t in 0..xs.len().saturating_sub(1) {
        let l_now = inst.penalty_value(&xs[t], lambda).unwrap();
        let l_next = inst.penalty_value(&xs[t + 1], lambda).unwrap();
        let grad = inst.penalty_grad(&xs[t], lambda).unwrap();
        let err = linalg::dist_sq(&gs[t], &grad);
        let rhs = l_now - 0.5 * eta_x * linalg::norm_sq(&grad) + 0.5 * eta_x * err;
        worst = worst.max(l_next - rhs);
    }
    worst
}

fn delta_soundness_violation(trace: &Trace) -> f64 {
    trace
        .records
        .iter()
        .filter_map(|r| r.warm_dist_true.map(|d| d - r.delta_t))
        .fold(0.0f64, f64::max)
}

#[test]
fn criterion_04_f2ba_convergence_and_descent() {
    let inst = kappa100_instance();
    let smooth = *inst.smoothness();
    assert!((smooth.kappa() - 100.0).abs() < 1e-12);
    let x0 = vec![0.0; 5];
    let y0 = vec![0.0; 5];
    let delta_gap = inst.phi(&x0).unwrap(); // phi min is 0 here
    let mut cfg = FoConfig::theorem1(&smooth, 1e-3, delta_gap, 1e-6);
    cfg.t_max = 10_000;
    cfg.record_iterates = true;
    let trace = run_f2ba_with_probe(&inst, Some(&inst), &x0, &y0, &cfg).unwrap();

    let hit = trace.first_grad_phi_below(1e-3);
    let descent = descent_violations(&inst, &trace, cfg.eta_x, cfg.penalty.lambda);
    let delta_bad = delta_soundness_violation(&trace);
    let ok = hit.is_some() && descent <= 1e-10 && delta_bad <= 1e-9;
    pass_line(
        4,
        "F2BA paper-default convergence with per-step descent",
        ok,
        &format!(
            "grad phi <= 1e-3 at t={:?} of {}, max descent violation {:.2e}, delta slack {:.2e}",
            hit,
            trace.records.len(),
            descent,
            delta_bad
        ),
    );
}

#[test]
fn criterion_05_two_time_scale_necessity() {
    let inst = kappa100_instance();
    let smooth = *inst.smoothness();
    let x0 = vec![0.0; 5];
    let y0 = vec![0.0; 5];
    let lambda = 1e3;
    let eta_two = 1.0 / smooth.d3();
    let k = theorem1_fixed_k(&smooth, lambda, eta_two);

    let mk = |eta_x: f64| FoConfig {
        penalty: PenaltyParams::theorem1(lambda, &smooth),
        eta_x,
        t_max: 100_000,
        inner: InnerSchedule::FixedK(k),
        stop_grad_norm: Some(5e-4),
        batch_out: 1,
        batch_in: 1,
        seed: 0,
        record_iterates: false,
        delta0: None,
        r_warm: 1e-6,
    };

    let two = run_f2ba_with_probe(&inst, Some(&inst), &x0, &y0, &mk(eta_two)).unwrap();
    let single_cfg = {
        let mut c = mk(0.0);
        c.eta_x = c.penalty.eta_y; // single time scale: eta_x forced to eta_y
        c
    };
    let single = run_f2ba_with_probe(&inst, Some(&inst), &x0, &y0, &single_cfg).unwrap();

    let t_two = two.first_grad_phi_below(1e-3);
    let t_single = single.first_grad_phi_below(1e-3);
    let ok = match (t_two, t_single) {
        (Some(a), Some(b)) => b >= 20 * a.max(1),
        (Some(_), None) => true, // failed within the cap
        _ => false,
    };
    pass_line(
        5,
        "two-time-scale necessity (single scale >= 20x slower)",
        ok,
        &format!("two-time t={t_two:?}, single-time t={t_single:?}"),
    );
}

#[test]
fn criterion_06_f2bsa_expectation_and_delta_certificate() {
    let inst = scalar_instance();
    let noisy = GaussianNoise::new(inst.clone(), 0.1, 0.1);
    let smooth = *noisy.smoothness();
    let eps = 0.05;
    let lambda = 9.0;
    let (b_out, b_in) = theorem2_batches(&smooth, lambda, eps);
    let cfg = FoConfig {
        penalty: PenaltyParams::practical(lambda, &smooth),
        eta_x: 1.0 / smooth.d3(),
        t_max: 80,
        inner: InnerSchedule::Adaptive {
            zeta: zeta_for_grad_error(lambda, smooth.l_g, eps / 2.0),
        },
        stop_grad_norm: None,
        batch_out: b_out,
        batch_in: b_in,
        seed: 0,
        record_iterates: false,
        delta0: None,
        r_warm: 1.0,
    };

    let runs: Vec<(f64, f64)> = map_auto((0..20u64).collect::<Vec<_>>(), |seed| {
        let mut rng = RngStream::new(seed, 0);
        let trace =
            run_f2bsa_with_probe(&noisy, Some(&inst), &[0.0], &[0.0], &cfg, &mut rng).unwrap();
        let final_grad = linalg::norm(&inst.grad_phi(&trace.final_x).unwrap());
        (final_grad, delta_soundness_violation(&trace))
    });

    let mean_grad = runs.iter().map(|r| r.0).sum::<f64>() / runs.len() as f64;
    let worst_delta = runs.iter().map(|r| r.1).fold(0.0f64, f64::max);
    let ok = mean_grad <= eps && worst_delta <= 1e-9;
    pass_line(
        6,
        "F2BSA expected stationarity with sound delta certificate",
        ok,
        &format!(
            "mean final grad phi {mean_grad:.4} (target {eps}), B_out={b_out}, B_in={b_in}, delta slack {worst_delta:.2e}"
        ),
    );
}

#[test]
fn criterion_07_saddle_escape() {
    let inst = SaddleInstance::new();
    let smooth = *inst.smoothness();
    let eps = 1e-3;
    let delta_gap = inst.phi(&[0.0, 1e-6]).unwrap() + 0.25;
    let (mut cfg, perturb) = pf2ba_config(&smooth, eps, delta_gap.max(0.25), 1e-6, 14_000);
    cfg.record_iterates = false;

    let outcomes: Vec<(f64, f64, f64)> = map_auto((0..20u64).collect::<Vec<_>>(), |seed| {
        let mut rng = RngStream::new(seed, 0);
        let trace = run_pf2ba_with_probe(
            &inst,
            Some(&inst),
            &[0.0, 1e-6],
            &[0.0, 1e-6],
            &cfg,
            &perturb,
            &mut rng,
        )
        .unwrap();
        let x = &trace.final_x;
        let grad = linalg::norm(&inst.grad_phi(x).unwrap());
        let min_eig = sym_min_eig(&inst.hess_phi(x).unwrap());
        (grad, min_eig, x[1].abs())
    });

    let successes = outcomes
        .iter()
        .filter(|(g, me, x2)| *g <= eps && *me >= -0.05 && *x2 >= 0.5)
        .count();
    let ok = successes >= 18;
    pass_line(
        7,
        "PF2BA escapes the strict saddle",
        ok,
        &format!("{successes}/20 seeds reached second-order stationarity with |x2| >= 0.5"),
    );
}

#[test]
fn criterion_08_acceleration_on_ill_conditioned_quadratic() {
    // hess phi = B'B = diag(1, 1e-3): condition number 1e3, L_g stays 2.
    let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.001f64.sqrt()]));
    let a = &b * DVector::from_vec(vec![3.0, -2.0]);
    let inst = QuadraticInstance::new(a, b, DMatrix::zeros(2, 2)).unwrap();
    let smooth = *inst.smoothness();
    let lambda = 1e4;
    let eta_x = 1.0 / 4.0; // matched scale: 1/(4 ||hess phi||), the AGD driver step
    let k = theorem1_fixed_k(&smooth, lambda, eta_x);
    let x0 = vec![0.0, 0.0];
    let y0 = vec![0.0, 0.0];

    let fo = FoConfig {
        penalty: PenaltyParams::practical(lambda, &smooth),
        eta_x,
        t_max: 100_000,
        inner: InnerSchedule::FixedK(k),
        stop_grad_norm: Some(5e-4),
        batch_out: 1,
        batch_in: 1,
        seed: 0,
        record_iterates: false,
        delta0: None,
        r_warm: 1e-6,
    };
    let plain = run_f2ba_with_probe(&inst, Some(&inst), &x0, &y0, &fo).unwrap();

    let mut agd_fo = fo.clone();
    agd_fo.stop_grad_norm = None;
    agd_fo.t_max = 50_000;
    let agd = AgdConfig {
        theta: (smooth.ell() * 1e-3 / smooth.kappa()).powf(0.25), // theorem formula
        ball: None, // quadratic proxy: Hessian-Lipschitz constant 0, no restarts
        t_epoch: 50_001,
        r: 1e-3,
        restart_floor: None,
    };
    let mut rng = RngStream::new(0, 0);
    let acc =
        run_accf2ba_with_probe(&inst, Some(&inst), &x0, &y0, &agd_fo, &agd, &mut rng).unwrap();

    let t_plain = plain.first_grad_phi_below(1e-3);
    let t_acc = acc.first_grad_phi_below(1e-3);
    let ok = match (t_plain, t_acc) {
        (Some(p), Some(a)) => 2 * a <= p,
        _ => false,
    };
    pass_line(
        8,
        "AccF2BA at least halves the iteration count",
        ok,
        &format!("f2ba t={t_plain:?}, accf2ba t={t_acc:?} (theta={:.3})", agd.theta),
    );
}

#[test]
fn criterion_09_mlmc_stack() {
    // (a) geometric level law over 1e6 draws, 3 standard errors for j <= 10
    let mut rng = RngStream::new(123, 0);
    let n = 1_000_000usize;
    let mut counts = [0u64; 11];
    for _ in 0..n {
        let j = rng.geometric_level();
        if (j as usize) < counts.len() {
            counts[j as usize] += 1;
        }
    }
    let mut geom_ok = true;
    for j in 1..=10usize {
        let p = 0.5f64.powi(j as i32);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = counts[j] as f64 / n as f64;
        geom_ok &= (freq - p).abs() <= 3.0 * se;
    }

    // (b) telescoping unbiasedness: E[G_mlmc] = E[G^(S)] within 4 pooled SEs
    let inst = scalar_instance();
    let noisy = GaussianNoise::new(inst.clone(), 0.1, 0.1);
    let lambda = 9.0;
    let (n_base, s_max, reps) = (4usize, 3u32, 100_000usize);
    let cfg = MlmcConfig {
        m_avg: 1,
        n_base,
        s_max,
    };
    let x = [0.3];
    let mlmc_draws: Vec<f64> = map_auto(
        {
            let mut r = RngStream::new(7, 1);
            (0..reps).map(|_| r.fork()).collect::<Vec<_>>()
        },
        |mut r| {
            let pair = noisy.freeze_pair(&mut r);
            mlmc_hypergrad(&noisy, &x, &[0.0], &[0.0], &pair, lambda, &cfg, &mut r)
                .unwrap()
                .g[0]
        },
    );
    let level_draws: Vec<f64> = map_auto(
        {
            let mut r = RngStream::new(8, 1);
            (0..reps).map(|_| r.fork()).collect::<Vec<_>>()
        },
        |mut r| {
            let pair = noisy.freeze_pair(&mut r);
            hypergrad_est(
                &noisy,
                &x,
                &[0.0],
                &[0.0],
                &pair,
                n_base,
                s_max as usize,
                lambda,
                &mut r,
            )
            .g[0]
        },
    );
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, (var / v.len() as f64).sqrt())
    };
    let (m1, se1) = stats(&mlmc_draws);
    let (m2, se2) = stats(&level_draws);
    let pooled = (se1 * se1 + se2 * se2).sqrt();
    let tele_ok = (m1 - m2).abs() <= 4.0 * pooled;

    // (c) epoch-doubling SGD bound with factor 1.2 over 1e3 seeds
    let (alpha, beta, sigma) = (1.0, 1.0, 0.5);
    let (n_ep, k_ep) = (3usize, 2usize);
    let x0 = 2.0;
    let sq_dists: Vec<f64> = map_auto((0..1000u64).collect::<Vec<_>>(), |seed| {
        let mut r = RngStream::new(seed, 9);
        let mut grad = |x: &[f64], rr: &mut RngStream| vec![alpha * x[0] + sigma * rr.standard_normal()];
        let out = sgd_sc(&mut grad, &[x0], n_ep, k_ep, alpha, beta, &mut r);
        out[0] * out[0]
    });
    let measured = sq_dists.iter().sum::<f64>() / sq_dists.len() as f64;
    let bound = x0 * x0 / 2f64.powi((n_ep + 2 * k_ep) as i32)
        + sigma * sigma / (2f64.powi(k_ep as i32 - 2) * alpha * beta);
    let sgd_ok = measured <= 1.2 * bound;

    // (d) noiseless F3BSA matches the F2BA terminus
    let clean = GaussianNoise::new(inst.clone(), 0.0, 0.0);
    let f3 = F3Config {
        lambda,
        eta_x: 0.2,
        t_max: 150,
        eps: 1e-3,
        mlmc: Some(MlmcConfig {
            m_avg: 1,
            n_base: 20,
            s_max: 20,
        }),
        seed: 0,
        record_iterates: true,
        delta0: None,
        r_warm: 1.0,
    };
    let mut r = RngStream::new(0, 0);
    let f3_trace = run_f3bsa_with_probe(&clean, Some(&inst), &[0.0], &[0.0], &f3, &mut r).unwrap();
    let fo = FoConfig {
        penalty: PenaltyParams::practical(lambda, inst.smoothness()),
        eta_x: 0.2,
        t_max: 150,
        inner: InnerSchedule::FixedK(60),
        stop_grad_norm: None,
        batch_out: 1,
        batch_in: 1,
        seed: 0,
        record_iterates: false,
        delta0: None,
        r_warm: 1.0,
    };
    let det = run_f2ba_with_probe(&inst, Some(&inst), &[0.0], &[0.0], &fo).unwrap();
    let f3_last = f3_trace.iterates.as_ref().unwrap().last().unwrap().clone();
    let match_ok = (f3_last[0] - det.final_x[0]).abs() <= 1e-3;

    let ok = geom_ok && tele_ok && sgd_ok && match_ok;
    pass_line(
        9,
        "MLMC stack (geometric law, telescoping, SGD bound, noiseless match)",
        ok,
        &format!(
            "telescoping gap {:.2e} vs 4SE {:.2e}; SGD {:.3} <= 1.2x{:.3}; |x_f3 - x_f2| = {:.2e}",
            (m1 - m2).abs(),
            4.0 * pooled,
            measured,
            bound,
            (f3_last[0] - det.final_x[0]).abs()
        ),
    );
}

#[test]
fn criterion_10_distributed_equivalence() {
    let inst = scalar_instance();
    let mut rng = RngStream::new(5, 0);
    let part = bilevel::distributed::quadratic_partition(&inst, 4, &mut rng).unwrap();
    let smooth = *inst.smoothness();
    let k = 25usize;
    let cfg = FoConfig {
        penalty: PenaltyParams::theorem1(9.0, &smooth),
        eta_x: 0.3,
        t_max: 60,
        inner: InnerSchedule::FixedK(k),
        stop_grad_norm: None,
        batch_out: 1,
        batch_in: 1,
        seed: 0,
        record_iterates: true,
        delta0: None,
        r_warm: 1.0,
    };
    let (dist, net) =
        bilevel::distributed::run_distributed_f2ba(&part, &[0.0], &[0.0], &cfg).unwrap();
    let global = part.global();
    let central = run_f2ba_with_probe(&global, None, &[0.0], &[0.0], &cfg).unwrap();

    let xi_d = dist.iterates.as_ref().unwrap();
    let xi_c = central.iterates.as_ref().unwrap();
    let mut worst = 0.0f64;
    for (a, b) in xi_d.iter().zip(xi_c) {
        for i in 0..a.len() {
            worst = worst.max((a[i] - b[i]).abs());
        }
    }
    let rounds_ok = net.rounds == (cfg.t_max as u64) * (k as u64 + 1);
    let ok = worst <= 1e-9 && rounds_ok && xi_d.len() == xi_c.len();
    pass_line(
        10,
        "distributed equivalence on the mean variables",
        ok,
        &format!(
            "max per-coordinate deviation {worst:.2e} over {} iterations, rounds {} = T(K+1)",
            xi_d.len(),
            net.rounds
        ),
    );
}

#[test]
fn criterion_11_regularizer_tuning() {
    let (a_tr, b_tr, a_val, b_val) = bilevel::instances::synth::ridge_dataset(100, 40, 8, 0);
    let inst = RidgeInstance::new(a_tr, b_tr, a_val, b_val).unwrap();
    let smooth = *inst.smoothness();
    let lambda = 1e4;
    // Inner steps tuned to the operating region (the global region bound on
    // L_g is far too conservative for |x| <= 2): the inner Hessian in y is
    // A_val'A_val + lam (A_tr'A_tr + e^x I).
    let beta_op = smooth.l_f + lambda * (16.0 + (2.0f64).exp());
    let penalty = PenaltyParams::new(lambda, 1.0 / beta_op, 1.0 / beta_op).unwrap();
    let y0 = vec![0.0; 8];
    let x0 = vec![0.0];

    // step-size grid search mirroring the experimental protocol
    let grid = [1e-2, 1e-1, 1.0, 1e1, 1e2];
    let mut best: Option<(f64, Trace)> = None;
    for eta_x in grid {
        let cfg = FoConfig {
            penalty,
            eta_x,
            t_max: 4000,
            inner: InnerSchedule::FixedK(10), // the experimental inner-loop count
            stop_grad_norm: None,
            batch_out: 1,
            batch_in: 1,
            seed: 0,
            record_iterates: false,
            delta0: None,
            r_warm: 1.0,
        };
        let trace = run_f2ba_with_probe(&inst, Some(&inst), &x0, &y0, &cfg).unwrap();
        let final_grad = trace
            .last()
            .and_then(|r| r.grad_phi_norm)
            .unwrap_or(f64::INFINITY);
        if best.as_ref().map(|(g, _)| final_grad < *g).unwrap_or(true) {
            best = Some((final_grad, trace));
        }
    }
    let (final_grad, trace) = best.unwrap();
    let x_fin = &trace.final_x;
    let y_res = linalg::dist(
        &trace.final_y,
        &inst.y_lambda_star(x_fin, lambda).unwrap(),
    );
    let z_res = linalg::dist(&trace.final_z, &inst.y_star(x_fin).unwrap());
    let ok = final_grad < 1e-4 && y_res < 1e-4 && z_res < 1e-4;
    pass_line(
        11,
        "ridge regularizer tuning drives all three residuals down",
        ok,
        &format!(
            "grad phi {final_grad:.2e}, ||y - y*_lam|| {y_res:.2e}, ||z - y*|| {z_res:.2e} at x = {:.4}",
            x_fin[0]
        ),
    );
}

#[test]
fn criterion_12_oracle_consistency() {
    // finite-difference suite on every shipped instance
    let mut worst_fd = 0.0f64;
    {
        let quad = kappa100_instance();
        let saddle = SaddleInstance::new();
        let (a_tr, b_tr, a_val, b_val) = bilevel::instances::synth::ridge_dataset(30, 12, 5, 1);
        let ridge = RidgeInstance::new(a_tr, b_tr, a_val, b_val).unwrap();
        let mut rng = RngStream::new(2, 0);
        let sources: Vec<bilevel::instances::LogisticData> = (0..3)
            .map(|i| {
                bilevel::instances::LogisticData::synthetic(
                    20,
                    4,
                    if i == 0 { 0.0 } else { 0.7 },
                    &mut rng,
                )
            })
            .collect();
        let val = bilevel::instances::LogisticData::synthetic(12, 4, 0.0, &mut rng);
        let weighting = bilevel::instances::WeightingInstance::new(sources, val, 1e-2).unwrap();

        let probe = |oracle: &dyn BilevelOracle, seed: u64| {
            let mut rng = RngStream::new(seed, 3);
            let probes: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
                .map(|_| {
                    (
                        rng.normal_vec(oracle.d_x(), 0.7),
                        rng.normal_vec(oracle.d_y(), 0.7),
                    )
                })
                .collect();
            bilevel::verify::gradient_consistency(oracle, &probes)
        };
        worst_fd = worst_fd
            .max(probe(&quad, 1))
            .max(probe(&saddle, 2))
            .max(probe(&ridge, 3))
            .max(probe(&weighting, 4));
    }

    // hypergradient with tight inner solves vs finite differences of L*_lam,
    // every L* evaluation through an independent high-accuracy inner solve
    let mut worst_hg = 0.0f64;
    {
        let inst = scalar_instance();
        let lambda = 9.0;
        for x in [-1.0, 0.2, 1.5] {
            let y0 = vec![0.0];
            let (_, y_t, z_t) =
                bilevel::penalty::penalty_value_high_acc(&inst, &[x], &y0, lambda, 1e-10).unwrap();
            let hg = bilevel::penalty::hypergrad(&inst, &[x], &y_t, &z_t, lambda).unwrap();
            let fd = bilevel::verify::finite_diff_gradient_scaled(
                |xv| {
                    bilevel::penalty::penalty_value_high_acc(&inst, xv, &y0, lambda, 1e-12)
                        .unwrap()
                        .0
                },
                &[x],
            );
            worst_hg = worst_hg.max((hg[0] - fd[0]).abs() / (1.0 + hg[0].abs()));
        }
        let saddle = SaddleInstance::new();
        let lambda = 50.0;
        for x in [[-0.4, 0.8], [0.3, -1.2]] {
            let y0 = vec![0.0, 0.0];
            let (_, y_t, z_t) =
                bilevel::penalty::penalty_value_high_acc(&saddle, &x, &y0, lambda, 1e-10).unwrap();
            let hg = bilevel::penalty::hypergrad(&saddle, &x, &y_t, &z_t, lambda).unwrap();
            let fd = bilevel::verify::finite_diff_gradient_scaled(
                |xv| {
                    bilevel::penalty::penalty_value_high_acc(&saddle, xv, &y0, lambda, 1e-12)
                        .unwrap()
                        .0
                },
                &x,
            );
            for i in 0..2 {
                worst_hg = worst_hg.max((hg[i] - fd[i]).abs() / (1.0 + hg[i].abs()));
            }
        }
    }

    let ok = worst_fd <= 1e-5 && worst_hg <= 1e-4;
    pass_line(
        12,
        "oracle consistency (FD gradients and hypergradient vs FD of the proxy)",
        ok,
        &format!("worst FD error {worst_fd:.2e}, worst hypergrad-vs-FD {worst_hg:.2e}"),
    );
}

/// Supporting check for the estimator-accounting identity used by the MLMC
/// criterion: reported SFO equals an independent sampler-call counter, and
/// the measured expected SFO matches the exact counting formula.
#[test]
fn mlmc_sfo_accounting_identity() {
    let inst = scalar_instance();
    let lambda = 9.0;
    let cfg = MlmcConfig {
        m_avg: 4,
        n_base: 4,
        s_max: 6,
    };

    // (a) exact agreement with an independent counter: every SFO draw is one
    // deterministic gradient evaluation of the wrapped oracle, and the fixed
    // assembly on the frozen pair adds exactly 3 more.
    let counter = CountingOracle::new(&inst);
    let noisy = GaussianNoise::new(counter, 0.1, 0.1);
    let mut rng = RngStream::new(3, 0);
    let pair = noisy.freeze_pair(&mut rng);
    let est = hypergrad_est(&noisy, &[0.2], &[0.0], &[0.0], &pair, 4, 3, lambda, &mut rng);
    assert_eq!(est.sfo_calls + 3, noisy.inner().grad_calls());

    // same ledger inside the MLMC wrapper: each of the M draws re-assembles
    // at level 0 plus two more levels when its geometric draw is truncated in
    let counter = CountingOracle::new(&inst);
    let noisy = GaussianNoise::new(counter, 0.1, 0.1);
    let mut rng = RngStream::new(3, 0);
    let pair = noisy.freeze_pair(&mut rng);
    let est = mlmc_hypergrad(&noisy, &[0.2], &[0.0], &[0.0], &pair, lambda, &cfg, &mut rng).unwrap();
    let assembly_grads = noisy.inner().grad_calls() - est.sfo_calls;
    assert_eq!(assembly_grads % 3, 0);
    let assemblies = assembly_grads / 3;
    assert!(assemblies >= cfg.m_avg as u64 && assemblies <= 3 * cfg.m_avg as u64);

    // (b) measured mean SFO across draws matches the exact expectation
    let noisy = GaussianNoise::new(inst.clone(), 0.1, 0.1);
    let reps = 40_000usize;
    let totals: Vec<u64> = map_auto(
        {
            let mut r = RngStream::new(4, 0);
            (0..reps).map(|_| r.fork()).collect::<Vec<_>>()
        },
        |mut r| {
            let pair = noisy.freeze_pair(&mut r);
            mlmc_hypergrad(&noisy, &[0.2], &[0.0], &[0.0], &pair, lambda, &cfg, &mut r)
                .unwrap()
                .sfo_calls
        },
    );
    let mean = totals.iter().sum::<u64>() as f64 / reps as f64;
    let expect = expected_sfo(&cfg, noisy.smoothness(), lambda);
    let sd = {
        let var = totals
            .iter()
            .map(|&t| (t as f64 - mean).powi(2))
            .sum::<f64>()
            / (reps - 1) as f64;
        (var / reps as f64).sqrt()
    };
    assert!(
        (mean - expect).abs() <= 5.0 * sd,
        "measured {mean} vs expected {expect} (se {sd})"
    );
    // the paper-style asymptotic count is the same quantity up to ceilings
    let paper = 8.0 * (noisy.smoothness().l_f + lambda * noisy.smoothness().l_g)
        / (lambda * noisy.smoothness().mu)
        * ((cfg.n_base as f64 + cfg.s_max as f64) * cfg.m_avg as f64);
    let ratio = mean / paper;
    assert!((0.3..5.0).contains(&ratio), "ratio to paper formula {ratio}");
}
