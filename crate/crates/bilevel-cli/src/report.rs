//! Plot-script emission and the verification probe suite.

use anyhow::{anyhow, bail, Context, Result};
use bilevel::instances::{analytic_penalty_proxy, QuadraticInstance, SaddleInstance};
use bilevel::oracle::{AnalyticHandles, BilevelOracle, GaussianNoise};
use bilevel::penalty::penalty_value_high_acc;
use bilevel::verify::{
    gradient_consistency, grid_brute_min, hessian_probe, mlmc_bias_probe, proxy_error_scan,
    ProbeReport,
};
use bilevel::RngStream;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const BASE_COLUMNS: [&str; 7] = [
    "t",
    "grad_est_norm",
    "grad_phi_norm",
    "phi",
    "K_t",
    "delta_t",
    "oracle_calls",
];

/// Write a gnuplot-compatible script plotting gradient norm against oracle
/// calls (log scale), one labeled curve per CSV.
pub fn emit_plot_script(csvs: &[PathBuf], kind: &str, out: &Path) -> Result<()> {
    if csvs.is_empty() {
        bail!("no CSV files given; nothing to plot");
    }
    if kind != "grad_vs_calls" {
        bail!("unknown plot kind '{kind}' (supported: grad_vs_calls)");
    }
    for path in csvs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let header = text
            .lines()
            .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .ok_or_else(|| anyhow!("{}: no header line", path.display()))?;
        let cols: Vec<&str> = header.split(',').collect();
        for (i, expected) in BASE_COLUMNS.iter().enumerate() {
            match cols.get(i) {
                Some(got) if got == expected => {}
                Some(got) => bail!(
                    "{}: schema mismatch at column {} (expected '{expected}', found '{got}')",
                    path.display(),
                    i + 1
                ),
                None => bail!(
                    "{}: schema mismatch, missing column '{expected}'",
                    path.display()
                ),
            }
        }
    }
    let mut script = String::new();
    let _ = writeln!(script, "set datafile separator ','");
    let _ = writeln!(script, "set logscale y");
    let _ = writeln!(script, "set xlabel 'first-order oracle calls'");
    let _ = writeln!(script, "set ylabel 'hypergradient estimate norm'");
    let _ = writeln!(script, "set key top right");
    let mut parts = Vec::new();
    for path in csvs {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        parts.push(format!(
            "'{}' using 7:2 with lines title '{}'",
            path.display(),
            label.replace('\'', "_")
        ));
    }
    let _ = writeln!(script, "plot {}", parts.join(", \\\n     "));
    std::fs::write(out, script).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn fd_probe<O: BilevelOracle + ?Sized>(oracle: &O, label: &str, seed: u64) -> ProbeReport {
    let mut rng = RngStream::new(seed, 21);
    let probes: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
        .map(|_| {
            (
                rng.normal_vec(oracle.d_x(), 0.8),
                rng.normal_vec(oracle.d_y(), 0.8),
            )
        })
        .collect();
    let worst = gradient_consistency(oracle, &probes);
    let mut rep = ProbeReport {
        name: format!("finite_difference_consistency_{label}"),
        grid: "20 random probe points".into(),
        max_violation: worst,
        bound: 1e-5,
        slack: 0.0,
        pass: false,
        metrics: vec![("max_relative_error".into(), worst)],
    };
    rep.pass = rep.evaluate();
    rep
}

fn quadratic_exactness_probe(inst: &QuadraticInstance) -> ProbeReport {
    let mut rng = RngStream::new(3, 5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = rng.normal_vec(inst.d_x(), 1.0);
        let lam = rng.uniform(2.5, 60.0);
        let (exact, _) = analytic_penalty_proxy(inst, &x, lam).unwrap();
        let y0 = vec![0.0; inst.d_y()];
        let (solved, _, _) = penalty_value_high_acc(inst, &x, &y0, lam, 1e-12).unwrap();
        worst = worst.max((exact - solved).abs());
    }
    let mut rep = ProbeReport {
        name: "quadratic_penalty_exactness".into(),
        grid: "50 random (x, lambda) pairs".into(),
        max_violation: worst,
        bound: 1e-9,
        slack: 0.0,
        pass: false,
        metrics: vec![("max_abs_gap".into(), worst)],
    };
    rep.pass = rep.evaluate();
    rep
}

/// Run the verification probe suite for the named instance kind.
pub fn verify_instance(kind: &str) -> Result<Vec<ProbeReport>> {
    match kind {
        "scalar_quadratic" | "quadratic" => {
            let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0)?;
            let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
            Ok(vec![
                fd_probe(&inst, "quadratic", 1),
                proxy_error_scan(&inst, inst.smoothness(), &[9.0, 19.0, 39.0, 79.0], &grid)?,
                hessian_probe(
                    &inst,
                    inst.smoothness(),
                    &[100.0, 1000.0, 10000.0],
                    &grid,
                )?,
                quadratic_exactness_probe(&inst),
            ])
        }
        "saddle" => {
            let inst = SaddleInstance::new();
            let (arg, val) = grid_brute_min(
                |x| inst.phi(x).unwrap(),
                &[(-2.0, 2.0), (-2.0, 2.0)],
                401,
            )?;
            let mut min_rep = ProbeReport {
                name: "saddle_grid_minimum".into(),
                grid: "401x401 lattice on [-2,2]^2".into(),
                max_violation: (val + 0.25).abs(),
                bound: 2e-4,
                slack: 0.0,
                pass: false,
                metrics: vec![
                    ("argmin_x1".into(), arg[0]),
                    ("argmin_x2".into(), arg[1]),
                    ("min_value".into(), val),
                ],
            };
            min_rep.pass = min_rep.evaluate();
            Ok(vec![fd_probe(&inst, "saddle", 2), min_rep])
        }
        "ridge" => {
            let (a_tr, b_tr, a_val, b_val) = bilevel::instances::synth::ridge_dataset(40, 16, 5, 0);
            let inst = bilevel::instances::RidgeInstance::new(a_tr, b_tr, a_val, b_val)?;
            // analytic hypergradient against finite differences of phi
            let mut worst = 0.0f64;
            for x in [-1.0, 0.0, 0.7] {
                let fd = bilevel::verify::finite_diff_gradient_scaled(
                    |xv| inst.phi(xv).unwrap(),
                    &[x],
                );
                let an = inst.grad_phi(&[x]).unwrap();
                worst = worst.max((fd[0] - an[0]).abs() / (1.0 + an[0].abs()));
            }
            let mut rep = ProbeReport {
                name: "ridge_hypergradient_vs_fd".into(),
                grid: "x in {-1, 0, 0.7}".into(),
                max_violation: worst,
                bound: 1e-5,
                slack: 0.0,
                pass: false,
                metrics: vec![("max_relative_error".into(), worst)],
            };
            rep.pass = rep.evaluate();
            Ok(vec![fd_probe(&inst, "ridge", 3), rep])
        }
        "weighting" => {
            let mut rng = RngStream::new(9, 0);
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
            let val = bilevel::instances::LogisticData::synthetic(15, 4, 0.0, &mut rng);
            let inst = bilevel::instances::WeightingInstance::new(sources, val, 1e-2)?;
            Ok(vec![fd_probe(&inst, "weighting", 4)])
        }
        "mlmc" => {
            let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0)?;
            let noisy = GaussianNoise::new(inst.clone(), 0.0, 0.1);
            let mut rng = RngStream::new(17, 0);
            let rep = mlmc_bias_probe(
                &noisy,
                &inst,
                &[0.3],
                &[0.0],
                9.0,
                4,
                &[2, 6],
                20_000,
                &mut rng,
            )?;
            Ok(vec![rep])
        }
        other => bail!(
            "unknown instance '{other}' (valid: scalar_quadratic, quadratic, saddle, ridge, weighting, mlmc)"
        ),
    }
}

/// Pretty pass/fail line for a report.
pub fn report_line(rep: &ProbeReport) -> String {
    format!(
        "{} {:<42} violation {:.3e} vs bound {:.3e}",
        if rep.pass { "PASS" } else { "FAIL" },
        rep.name,
        rep.max_violation,
        rep.bound
    )
}
