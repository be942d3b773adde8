//! Experiment construction and execution.

use crate::config::ExperimentConfig;
use crate::libsvm;
use anyhow::{anyhow, bail, Context, Result};
use bilevel::instances::{
    LogisticData, QuadraticInstance, RidgeInstance, SaddleInstance, WeightingInstance,
};
use bilevel::nalgebra::{DMatrix, DVector};
use bilevel::oracle::{AnalyticHandles, BilevelOracle, GaussianNoise};
use bilevel::penalty::PenaltyParams;
use bilevel::solvers::{
    pf2ba_config, run_accf2ba_with_probe, run_f2ba_with_probe, run_f2bsa_with_probe,
    run_f3bsa_with_probe, run_pf2ba_with_probe, theorem2_batches, AgdConfig,
    F3Config, FoConfig, InnerSchedule, MlmcConfig,
};
use bilevel::trace::{GradStats, RunSummary, Status, Trace};
use bilevel::{distributed, linalg, RngStream};
use std::fs;
use std::path::Path;

pub const VALID_SOLVERS: &[&str] = &["f2ba", "f2bsa", "pf2ba", "accf2ba", "f3bsa", "dist-f2ba"];

/// Raised for an unrecognized solver kind; the CLI maps it to exit code 2.
#[derive(Debug)]
pub struct UnknownSolver(pub String);

impl std::fmt::Display for UnknownSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "unknown solver '{}'; valid solvers: {}",
            self.0,
            VALID_SOLVERS.join(", ")
        )
    }
}

impl std::error::Error for UnknownSolver {}

pub enum BuiltInstance {
    Quadratic(QuadraticInstance),
    Saddle(SaddleInstance),
    Ridge(RidgeInstance),
    Weighting(WeightingInstance),
}

impl BuiltInstance {
    pub fn oracle(&self) -> &dyn BilevelOracle {
        match self {
            Self::Quadratic(i) => i,
            Self::Saddle(i) => i,
            Self::Ridge(i) => i,
            Self::Weighting(i) => i,
        }
    }

    pub fn handles(&self) -> Option<&dyn AnalyticHandles> {
        match self {
            Self::Quadratic(i) => Some(i),
            Self::Saddle(i) => Some(i),
            Self::Ridge(i) => Some(i),
            Self::Weighting(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Quadratic(_) => "quadratic",
            Self::Saddle(_) => "saddle",
            Self::Ridge(_) => "ridge",
            Self::Weighting(_) => "weighting",
        }
    }
}

fn parse_vec(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{s}' in vector"))
        })
        .collect()
}

/// Build the instance described by the `[instance]` section.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<BuiltInstance> {
    let inst = cfg.section("instance")?;
    let kind = inst.get("kind").ok_or_else(|| anyhow!("instance.kind missing"))?;
    match kind {
        "scalar_quadratic" => {
            let a = inst.f64_opt("a")?.unwrap_or(1.0);
            let b = inst.f64_opt("b")?.unwrap_or(1.0);
            let p = inst.f64_opt("p")?.unwrap_or(0.0);
            let mut q = QuadraticInstance::scalar(a, b, p)?;
            if let Some(cf) = inst.f64_opt("c_f")? {
                q = q.with_c_f(cf);
            }
            Ok(BuiltInstance::Quadratic(q))
        }
        "quadratic" => {
            let a = parse_vec(inst.get("a").ok_or_else(|| anyhow!("quadratic needs 'a'"))?)?;
            let b_diag = parse_vec(
                inst.get("b_diag")
                    .ok_or_else(|| anyhow!("quadratic needs 'b_diag'"))?,
            )?;
            let p_diag = match inst.get("p_diag") {
                Some(raw) => parse_vec(raw)?,
                None => vec![0.0; b_diag.len()],
            };
            if a.len() != b_diag.len() || p_diag.len() != b_diag.len() {
                bail!("quadratic: a, b_diag and p_diag must share length");
            }
            let d = a.len();
            let mut q = QuadraticInstance::new(
                DVector::from_vec(a),
                DMatrix::from_diagonal(&DVector::from_vec(b_diag)),
                DMatrix::from_diagonal(&DVector::from_vec(p_diag)),
            )?;
            let _ = d;
            if let Some(r) = inst.f64_opt("region_radius")? {
                q = q.with_region_radius(r);
            }
            if let Some(cf) = inst.f64_opt("c_f")? {
                q = q.with_c_f(cf);
            }
            Ok(BuiltInstance::Quadratic(q))
        }
        "saddle" => Ok(BuiltInstance::Saddle(SaddleInstance::new())),
        "ridge" => {
            if let (Some(tr), Some(val)) = (inst.get("train_path"), inst.get("val_path")) {
                let tr_text = fs::read_to_string(tr)
                    .with_context(|| format!("reading training data '{tr}'"))?;
                let val_text = fs::read_to_string(val)
                    .with_context(|| format!("reading validation data '{val}'"))?;
                let tr_ds = libsvm::parse_libsvm(&tr_text)?;
                let val_ds = libsvm::parse_libsvm(&val_text)?;
                if tr_ds.is_empty() || val_ds.is_empty() {
                    bail!(
                        "ridge needs nonempty datasets (train has {} rows, validation {})",
                        tr_ds.len(),
                        val_ds.len()
                    );
                }
                let p = tr_ds.n_features.max(val_ds.n_features);
                let mut tr_ds = tr_ds;
                let mut val_ds = val_ds;
                tr_ds.n_features = p;
                val_ds.n_features = p;
                let (a_tr, b_tr) = tr_ds.to_dense();
                let (a_val, b_val) = val_ds.to_dense();
                Ok(BuiltInstance::Ridge(RidgeInstance::new(
                    a_tr, b_tr, a_val, b_val,
                )?))
            } else {
                let n_tr = inst.usize_opt("n_tr")?.unwrap_or(100);
                let n_val = inst.usize_opt("n_val")?.unwrap_or(40);
                let p = inst.usize_opt("p")?.unwrap_or(8);
                let seed = inst.usize_opt("seed")?.unwrap_or(0) as u64;
                let (a_tr, b_tr, a_val, b_val) =
                    bilevel::instances::synth::ridge_dataset(n_tr, n_val, p, seed);
                Ok(BuiltInstance::Ridge(RidgeInstance::new(
                    a_tr, b_tr, a_val, b_val,
                )?))
            }
        }
        "weighting" => {
            let m = inst.usize_opt("sources")?.unwrap_or(2);
            let n = inst.usize_opt("n_per_source")?.unwrap_or(40);
            let p = inst.usize_opt("p")?.unwrap_or(6);
            let corrupt = inst.f64_opt("corrupt")?.unwrap_or(0.8);
            let mu0 = inst.f64_opt("mu0")?.unwrap_or(1e-2);
            let seed = inst.usize_opt("seed")?.unwrap_or(0) as u64;
            let mut rng = RngStream::new(seed, 13);
            let sources: Vec<LogisticData> = (0..m)
                .map(|i| {
                    LogisticData::synthetic(n, p, if i == 0 { 0.0 } else { corrupt }, &mut rng)
                })
                .collect();
            let val = LogisticData::synthetic(n, p, 0.0, &mut rng);
            Ok(BuiltInstance::Weighting(WeightingInstance::new(
                sources, val, mu0,
            )?))
        }
        other => bail!("unknown instance kind '{other}'"),
    }
}

struct SolverSection<'a> {
    sec: &'a crate::config::Section,
}

impl<'a> SolverSection<'a> {
    fn eps(&self) -> Result<f64> {
        Ok(self.sec.f64_opt("eps")?.unwrap_or(1e-3))
    }
}

/// Assemble the first-order config shared by every solver from the
/// `[solver]` section, falling back to the paper-formula defaults.
fn fo_config(
    built: &BuiltInstance,
    sec: &crate::config::Section,
    x0: &[f64],
    y0: &[f64],
    seed: u64,
) -> Result<FoConfig> {
    let smooth = *built.oracle().smoothness();
    let eps = sec.f64_opt("eps")?.unwrap_or(1e-3);
    let delta_gap = sec.f64_opt("delta_gap")?.unwrap_or_else(|| {
        built
            .handles()
            .and_then(|h| h.phi(x0))
            .map(|v| v.abs().max(1.0))
            .unwrap_or(1.0)
    });
    let r_warm = sec.f64_opt("r_warm")?.unwrap_or_else(|| {
        built
            .handles()
            .and_then(|h| h.y_star(x0))
            .map(|ys| linalg::dist_sq(y0, &ys).max(1e-6))
            .unwrap_or(1.0)
    });
    let mut cfg = FoConfig::paper_defaults(&smooth, eps, delta_gap, r_warm);
    if let Some(lam) = sec.f64_opt("lambda")? {
        cfg.penalty = PenaltyParams::practical(lam, &smooth);
    }
    if let Some(eta_y) = sec.f64_opt("eta_y")? {
        cfg.penalty.eta_y = eta_y;
    }
    if let Some(eta_z) = sec.f64_opt("eta_z")? {
        cfg.penalty.eta_z = eta_z;
    }
    if let Some(eta_x) = sec.f64_opt("eta_x")? {
        cfg.eta_x = eta_x;
    }
    if let Some(t) = sec.usize_opt("t_max")? {
        cfg.t_max = t;
    }
    if let Some(k) = sec.usize_opt("k")? {
        cfg.inner = InnerSchedule::FixedK(k);
    } else if let Some(z) = sec.f64_opt("zeta")? {
        cfg.inner = InnerSchedule::Adaptive { zeta: z };
    }
    match sec.f64_opt("stop")? {
        Some(s) if s > 0.0 => cfg.stop_grad_norm = Some(s),
        Some(_) => cfg.stop_grad_norm = None,
        None => {}
    }
    cfg.record_iterates = sec.bool_or("record_iterates", false)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn start_points(
    built: &BuiltInstance,
    sec: &crate::config::Section,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let o = built.oracle();
    let x0 = match sec.get("x0") {
        Some(raw) => parse_vec(raw)?,
        None => vec![0.0; o.d_x()],
    };
    let y0 = match sec.get("y0") {
        Some(raw) => parse_vec(raw)?,
        None => vec![0.0; o.d_y()],
    };
    if x0.len() != o.d_x() || y0.len() != o.d_y() {
        bail!(
            "start point dimensions ({}, {}) do not match the instance ({}, {})",
            x0.len(),
            y0.len(),
            o.d_x(),
            o.d_y()
        );
    }
    Ok((x0, y0))
}

/// Run one seed of the configured solver.
pub fn run_seed(cfg: &ExperimentConfig, built: &BuiltInstance, seed: u64) -> Result<Trace> {
    let sec = cfg.section("solver")?;
    let kind = sec.get("kind").ok_or_else(|| anyhow!("solver.kind missing"))?;
    let (x0, y0) = start_points(built, sec)?;
    let handles = built.handles();
    let oracle = built.oracle();
    let smooth = *oracle.smoothness();
    let eps = SolverSection { sec }.eps()?;
    let sigma_f = sec.f64_opt("sigma_f")?.unwrap_or(0.0);
    let sigma_g = sec.f64_opt("sigma_g")?.unwrap_or(0.0);

    match kind {
        "f2ba" => {
            let fo = fo_config(built, sec, &x0, &y0, seed)?;
            Ok(run_f2ba_with_probe(&oracle, handles, &x0, &y0, &fo)?)
        }
        "f2bsa" => {
            let noisy = GaussianNoise::new(oracle, sigma_f, sigma_g);
            let mut fo = fo_config(built, sec, &x0, &y0, seed)?;
            let (b_out, b_in) = theorem2_batches(noisy.smoothness(), fo.penalty.lambda, eps);
            fo.batch_out = sec.usize_opt("batch_out")?.unwrap_or(b_out);
            fo.batch_in = sec.usize_opt("batch_in")?.unwrap_or(b_in);
            let mut rng = RngStream::new(seed, 0);
            Ok(run_f2bsa_with_probe(&noisy, handles, &x0, &y0, &fo, &mut rng)?)
        }
        "pf2ba" => {
            let delta_gap = sec.f64_opt("delta_gap")?.unwrap_or(1.0);
            let r_warm = sec.f64_opt("r_warm")?.unwrap_or(1.0);
            let t_max = sec.usize_opt("t_max")?.unwrap_or(20_000);
            let (mut fo, mut perturb) = pf2ba_config(&smooth, eps, delta_gap, r_warm, t_max);
            fo.seed = seed;
            fo.record_iterates = sec.bool_or("record_iterates", false)?;
            if let Some(lam) = sec.f64_opt("lambda")? {
                fo.penalty = PenaltyParams::practical(lam, &smooth);
            }
            if let Some(eta_x) = sec.f64_opt("eta_x")? {
                fo.eta_x = eta_x;
            }
            if let Some(r) = sec.f64_opt("r")? {
                perturb.r = r;
            }
            if let Some(ct) = sec.usize_opt("cal_t")? {
                perturb.cal_t = ct;
            }
            let mut rng = RngStream::new(seed, 0);
            Ok(run_pf2ba_with_probe(
                &oracle, handles, &x0, &y0, &fo, &perturb, &mut rng,
            )?)
        }
        "accf2ba" => {
            let mut fo = fo_config(built, sec, &x0, &y0, seed)?;
            fo.stop_grad_norm = None;
            let mut agd = AgdConfig::theorem4(&smooth, oracle.d_x(), eps, 0.1);
            if let Some(theta) = sec.f64_opt("theta")? {
                agd.theta = theta;
            }
            if let Some(b) = sec.f64_opt("ball")? {
                agd.ball = if b > 0.0 { Some(b) } else { None };
            }
            if let Some(te) = sec.usize_opt("t_epoch")? {
                agd.t_epoch = te;
            }
            if let Some(r) = sec.f64_opt("r")? {
                agd.r = r;
            }
            let mut rng = RngStream::new(seed, 0);
            Ok(run_accf2ba_with_probe(
                &oracle, handles, &x0, &y0, &fo, &agd, &mut rng,
            )?)
        }
        "f3bsa" => {
            let noisy = GaussianNoise::new(oracle, sigma_f, sigma_g);
            let delta_gap = sec.f64_opt("delta_gap")?.unwrap_or(1.0);
            let r_warm = sec.f64_opt("r_warm")?.unwrap_or(1.0);
            let mut f3 = F3Config::theorem_defaults(noisy.smoothness(), eps, delta_gap, r_warm);
            f3.seed = seed;
            f3.record_iterates = sec.bool_or("record_iterates", false)?;
            if let Some(lam) = sec.f64_opt("lambda")? {
                f3.lambda = lam;
            }
            if let Some(eta_x) = sec.f64_opt("eta_x")? {
                f3.eta_x = eta_x;
            }
            if let Some(t) = sec.usize_opt("t_max")? {
                f3.t_max = t;
            }
            if let (Some(m), Some(n), Some(s)) = (
                sec.usize_opt("m_avg")?,
                sec.usize_opt("n_base")?,
                sec.usize_opt("s_max")?,
            ) {
                f3.mlmc = Some(MlmcConfig {
                    m_avg: m,
                    n_base: n,
                    s_max: s as u32,
                });
            }
            let mut rng = RngStream::new(seed, 0);
            Ok(run_f3bsa_with_probe(&noisy, handles, &x0, &y0, &f3, &mut rng)?)
        }
        "dist-f2ba" => {
            let BuiltInstance::Quadratic(q) = built else {
                bail!("dist-f2ba runs on quadratic finite-sum instances");
            };
            let agents = sec.usize_opt("agents")?.unwrap_or(4);
            let mut fo = fo_config(built, sec, &x0, &y0, seed)?;
            if !matches!(fo.inner, InnerSchedule::FixedK(_)) {
                fo.inner = InnerSchedule::FixedK(sec.usize_opt("k")?.unwrap_or(30));
            }
            let mut rng = RngStream::new(seed, 1);
            let part = distributed::quadratic_partition(q, agents, &mut rng)?;
            let (trace, _) =
                distributed::run_distributed_f2ba_with_probe(&part, handles, &x0, &y0, &fo)?;
            Ok(trace)
        }
        other => Err(anyhow::Error::new(UnknownSolver(other.to_string()))),
    }
}

/// Run every seed (concurrently), write one CSV per seed plus the summary
/// JSON, and return the summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let built = build_instance(cfg)?;
    let sec = cfg.section("solver")?;
    let kind = sec
        .get("kind")
        .ok_or_else(|| anyhow!("solver.kind missing"))?
        .to_string();
    if !VALID_SOLVERS.contains(&kind.as_str()) {
        return Err(anyhow::Error::new(UnknownSolver(kind)));
    }
    let seeds = cfg.seeds()?;
    let name = cfg.name();
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let results: Vec<Result<(u64, Trace)>> = bilevel::parallel::map_auto(
        seeds.clone(),
        |seed| -> Result<(u64, Trace)> {
            let trace = run_seed(cfg, &built, seed)?;
            Ok((seed, trace))
        },
    );

    fs::write(
        out_dir.join(format!("{name}_config.ini")),
        cfg.to_config_string(),
    )
    .context("writing resolved config")?;

    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut finals = Vec::new();
    let mut total_calls = 0u64;
    let mut all_ok = true;
    for r in results {
        let (seed, trace) = r?;
        let path = out_dir.join(format!("{name}_{}_seed{seed}.csv", trace.solver));
        fs::write(&path, trace.to_csv(Some(ts)))
            .with_context(|| format!("writing {}", path.display()))?;
        let last = trace
            .last()
            .ok_or_else(|| anyhow!("seed {seed}: empty trace"))?;
        finals.push(last.grad_phi_norm.unwrap_or(last.grad_est_norm));
        total_calls += last.oracle_calls;
        all_ok &= trace.status != Status::Diverged;
    }
    let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
    let max = finals.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = sec.f64_opt("eps")?.unwrap_or(1e-3);
    let summary = RunSummary {
        solver: kind,
        instance: built.kind().to_string(),
        seeds,
        final_grad_stats: GradStats { mean, max },
        total_oracle_calls: total_calls,
        pass: all_ok && mean <= eps,
    };
    let json_path = out_dir.join(format!("{name}_summary.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok(summary)
}
