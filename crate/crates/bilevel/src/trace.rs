//! Per-iteration run records and their CSV serialization.
//!
//! The CSV schema is stable: the column header is exactly
//! `t,grad_est_norm,grad_phi_norm,phi,K_t,delta_t,oracle_calls` plus the
//! solver-specific extension columns documented in the `# columns` comment
//! line. `grad_phi_norm` and `phi` are written empty (not zero) when the
//! instance has no analytic handle, so absence stays distinguishable from a
//! true zero. Identical config and seed produce byte-identical files except
//! for the `# timestamp_unix` comment line.

use crate::Vector;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    /// Stopped on the gradient-norm threshold.
    Converged,
    /// Exhausted the outer iteration budget.
    MaxIters,
    /// Divergence guard tripped (non-finite iterate or `||x|| > 1e8`).
    Diverged,
}

/// One outer-iteration record.
#[derive(Debug, Clone, Default)]
pub struct TraceRecord {
    pub t: usize,
    pub x_norm: f64,
    /// `||G_t||`, the norm of the hypergradient estimate actually used.
    pub grad_est_norm: f64,
    /// `||grad phi(x_t)||` when an analytic handle exists.
    pub grad_phi_norm: Option<f64>,
    pub phi: Option<f64>,
    pub k_t: usize,
    /// Certified warm-start distance bound at the start of this iteration.
    pub delta_t: f64,
    /// True `||y - y*_lam(x_t)||^2 + ||z - y*(x_t)||^2` at the start of the
    /// iteration, when analytic handles exist. Not serialized; used by the
    /// soundness checks of the `delta_t` certificate.
    pub warm_dist_true: Option<f64>,
    /// Cumulative first-order oracle calls (samples, for stochastic solvers).
    pub oracle_calls: u64,
    // Extension columns; only the solver's own set is serialized.
    pub perturbation_event: Option<bool>,
    pub epoch_id: Option<usize>,
    pub restart_event: Option<bool>,
    pub level_j_max: Option<u32>,
    pub mlmc_m: Option<usize>,
    pub sfo_calls_step: Option<u64>,
    pub comm_rounds: Option<u64>,
    pub scalars_moved: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub solver: String,
    /// Parameter log emitted as `# key=value` comment lines.
    pub params: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
    /// Outer iterates, populated when `record_iterates` is set.
    pub iterates: Option<Vec<Vector>>,
    /// Hypergradient estimates matching `iterates`.
    pub grad_estimates: Option<Vec<Vector>>,
    pub final_x: Vector,
    pub final_y: Vector,
    pub final_z: Vector,
    pub status: Status,
    /// Names of the active extension columns, in serialization order.
    pub extension_columns: Vec<&'static str>,
}

pub const BASE_COLUMNS: &str = "t,grad_est_norm,grad_phi_norm,phi,K_t,delta_t,oracle_calls";

impl Trace {
    pub fn new(solver: &str) -> Self {
        Self {
            solver: solver.to_string(),
            params: Vec::new(),
            records: Vec::new(),
            iterates: None,
            grad_estimates: None,
            final_x: Vec::new(),
            final_y: Vec::new(),
            final_z: Vec::new(),
            status: Status::MaxIters,
            extension_columns: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.push((key.to_string(), value.to_string()));
    }

    /// Index of the first record with `grad_phi_norm <= tol`, if any.
    pub fn first_grad_phi_below(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.grad_phi_norm.map(|g| g <= tol).unwrap_or(false))
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    fn ext_value(rec: &TraceRecord, col: &str) -> String {
        fn b(v: Option<bool>) -> String {
            v.map(|x| if x { "1" } else { "0" }.to_string()).unwrap_or_default()
        }
        match col {
            "perturbation_event" => b(rec.perturbation_event),
            "restart_event" => b(rec.restart_event),
            "epoch_id" => rec.epoch_id.map(|v| v.to_string()).unwrap_or_default(),
            "level_J_max" => rec.level_j_max.map(|v| v.to_string()).unwrap_or_default(),
            "mlmc_M" => rec.mlmc_m.map(|v| v.to_string()).unwrap_or_default(),
            "sfo_calls_step" => rec.sfo_calls_step.map(|v| v.to_string()).unwrap_or_default(),
            "comm_rounds" => rec.comm_rounds.map(|v| v.to_string()).unwrap_or_default(),
            "scalars_moved" => rec.scalars_moved.map(|v| v.to_string()).unwrap_or_default(),
            _ => String::new(),
        }
    }

    /// Serialize to the stable CSV schema.
    pub fn to_csv(&self, timestamp_unix: Option<u64>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# solver={}", self.solver);
        for (k, v) in &self.params {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# status={:?}", self.status);
        if let Some(ts) = timestamp_unix {
            let _ = writeln!(out, "# timestamp_unix={ts}");
        }
        if self.extension_columns.is_empty() {
            let _ = writeln!(out, "# columns: base schema, no extension columns");
            let _ = writeln!(out, "{BASE_COLUMNS}");
        } else {
            let _ = writeln!(
                out,
                "# columns: base schema plus extensions: {}",
                self.extension_columns.join(",")
            );
            let _ = writeln!(out, "{BASE_COLUMNS},{}", self.extension_columns.join(","));
        }
        for r in &self.records {
            let gp = r.grad_phi_norm.map(|v| v.to_string()).unwrap_or_default();
            let ph = r.phi.map(|v| v.to_string()).unwrap_or_default();
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.t, r.grad_est_norm, gp, ph, r.k_t, r.delta_t, r.oracle_calls
            );
            for col in &self.extension_columns {
                let _ = write!(out, ",{}", Self::ext_value(r, col));
            }
            out.push('\n');
        }
        out
    }
}

/// Summary statistics serialized into the experiment JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub solver: String,
    pub instance: String,
    pub seeds: Vec<u64>,
    pub final_grad_stats: GradStats,
    pub total_oracle_calls: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradStats {
    pub mean: f64,
    pub max: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_stable_header_and_empty_optionals() {
        let mut t = Trace::new("f2ba");
        t.param("lambda", 9.0);
        t.records.push(TraceRecord {
            t: 0,
            grad_est_norm: 0.5,
            k_t: 3,
            delta_t: 1.0,
            oracle_calls: 12,
            ..Default::default()
        });
        let csv = t.to_csv(None);
        assert!(csv.contains(BASE_COLUMNS));
        // grad_phi_norm and phi columns are empty, not zero
        assert!(csv.lines().last().unwrap().starts_with("0,0.5,,,3,1,12"));
    }

    #[test]
    fn extension_columns_serialize_in_order() {
        let mut t = Trace::new("pf2ba");
        t.extension_columns = vec!["perturbation_event", "epoch_id", "restart_event"];
        t.records.push(TraceRecord {
            t: 1,
            perturbation_event: Some(true),
            epoch_id: Some(0),
            restart_event: Some(false),
            ..Default::default()
        });
        let csv = t.to_csv(None);
        assert!(csv.contains("oracle_calls,perturbation_event,epoch_id,restart_event"));
        assert!(csv.lines().last().unwrap().ends_with(",1,0,0"));
    }
}
