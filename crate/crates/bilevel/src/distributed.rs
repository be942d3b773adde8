//! Simulated synchronous distributed execution over finite-sum objectives.
//!
//! Each of `m` agents holds local objectives `f_i, g_i` with
//! `f = (1/m) sum f_i`, `g = (1/m) sum g_i` and its own copies of the
//! iterates. Every inner step evaluates local gradients in parallel and runs
//! one aggregate-broadcast round (the mean-then-replicate operator
//! `Pi = (1/m) 11'`); the hypergradient assembly adds one more round, so an
//! outer iteration costs exactly `K + 1` rounds. Running on the mean
//! variables is equivalent to the single-machine loop on the averaged
//! problem; aggregation uses pairwise summation so the equivalence holds to
//! 1e-9 at desk scale.
//!
//! The simulation is sequential and in-process: rounds are a strict barrier,
//! transport is not modeled.

use crate::error::{BilevelError, Result};
use crate::instances::QuadraticInstance;
use crate::linalg;
use crate::oracle::{AnalyticHandles, BilevelOracle, SmoothnessInfo};
use crate::parallel::map_auto;
use crate::rng::RngStream;
use crate::solvers::{FoConfig, InnerSchedule};
use crate::trace::{Status, Trace, TraceRecord};
use crate::Vector;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Communication accounting: one round per "aggregate and broadcast" line,
/// `2 m w` scalars per round of payload width `w` (gather plus broadcast).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct NetworkStats {
    pub rounds: u64,
    pub scalars_moved: u64,
}

/// Column-wise mean of the rows, replicated back to every agent.
pub fn aggregate_broadcast(rows: &[Vector]) -> Vec<Vector> {
    assert!(!rows.is_empty());
    let mean = linalg::pairwise_mean(rows);
    vec![mean; rows.len()]
}

/// `m` local oracles whose means reproduce a global objective pair.
pub struct AgentPartition<O: BilevelOracle> {
    locals: Vec<O>,
}

impl<O: BilevelOracle> AgentPartition<O> {
    pub fn new(locals: Vec<O>) -> Result<Self> {
        if locals.is_empty() {
            return Err(BilevelError::Construction("need at least one agent".into()));
        }
        let (dx, dy) = (locals[0].d_x(), locals[0].d_y());
        if locals.iter().any(|o| o.d_x() != dx || o.d_y() != dy) {
            return Err(BilevelError::Construction(
                "all local oracles must share dimensions".into(),
            ));
        }
        Ok(Self { locals })
    }

    pub fn m(&self) -> usize {
        self.locals.len()
    }

    pub fn locals(&self) -> &[O] {
        &self.locals
    }

    /// The averaged problem as a single-machine oracle (pairwise means, so
    /// its gradients match the distributed aggregation bit for bit at m = 1
    /// and to rounding otherwise).
    pub fn global(&self) -> MeanOracle<'_, O> {
        let mut smooth = *self.locals[0].smoothness();
        for o in &self.locals[1..] {
            let s = o.smoothness();
            smooth.mu = smooth.mu.min(s.mu);
            smooth.l_f = smooth.l_f.max(s.l_f);
            smooth.l_g = smooth.l_g.max(s.l_g);
            smooth.c_f = smooth.c_f.max(s.c_f);
            smooth.rho_g = smooth.rho_g.max(s.rho_g);
        }
        MeanOracle {
            locals: &self.locals,
            smooth,
        }
    }
}

/// Mean of the local oracles.
pub struct MeanOracle<'a, O: BilevelOracle> {
    locals: &'a [O],
    smooth: SmoothnessInfo,
}

impl<'a, O: BilevelOracle> BilevelOracle for MeanOracle<'a, O> {
    fn d_x(&self) -> usize {
        self.locals[0].d_x()
    }
    fn d_y(&self) -> usize {
        self.locals[0].d_y()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        self.locals.iter().map(|o| o.eval_f(x, y)).sum::<f64>() / self.locals.len() as f64
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        self.locals.iter().map(|o| o.eval_g(x, y)).sum::<f64>() / self.locals.len() as f64
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let parts: Vec<(Vector, Vector)> = self.locals.iter().map(|o| o.grad_f(x, y)).collect();
        let gx: Vec<Vector> = parts.iter().map(|p| p.0.clone()).collect();
        let gy: Vec<Vector> = parts.iter().map(|p| p.1.clone()).collect();
        (linalg::pairwise_mean(&gx), linalg::pairwise_mean(&gy))
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let parts: Vec<(Vector, Vector)> = self.locals.iter().map(|o| o.grad_g(x, y)).collect();
        let gx: Vec<Vector> = parts.iter().map(|p| p.0.clone()).collect();
        let gy: Vec<Vector> = parts.iter().map(|p| p.1.clone()).collect();
        (linalg::pairwise_mean(&gx), linalg::pairwise_mean(&gy))
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

/// Distributed F2BA over the partition.
///
/// Requires a fixed inner count (`InnerSchedule::FixedK`); the adaptive
/// schedule would need `delta_t` consensus, which the algorithm does not
/// specify. All agents start from the broadcast `(x0, y0)`.
pub fn run_distributed_f2ba<O: BilevelOracle>(
    partition: &AgentPartition<O>,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
) -> Result<(Trace, NetworkStats)> {
    run_distributed_f2ba_with_probe(partition, None, x0, y0, cfg)
}

pub fn run_distributed_f2ba_with_probe<O: BilevelOracle>(
    partition: &AgentPartition<O>,
    handles: Option<&dyn AnalyticHandles>,
    x0: &[f64],
    y0: &[f64],
    cfg: &FoConfig,
) -> Result<(Trace, NetworkStats)> {
    let k_fixed = match cfg.inner {
        InnerSchedule::FixedK(k) if k >= 1 => k,
        InnerSchedule::FixedK(_) => {
            return Err(BilevelError::Contract("inner iteration count K must be >= 1".into()))
        }
        InnerSchedule::Adaptive { .. } => {
            return Err(BilevelError::Unsupported(
                "distributed F2BA runs with a fixed inner count",
            ))
        }
    };
    let m = partition.m();
    let (d_x, d_y) = (partition.locals[0].d_x(), partition.locals[0].d_y());
    crate::error::check_dim("distributed: x0", d_x, x0.len())?;
    crate::error::check_dim("distributed: y0", d_y, y0.len())?;
    let lambda = cfg.penalty.lambda;

    let mut trace = Trace::new("dist-f2ba");
    trace.extension_columns = vec!["comm_rounds", "scalars_moved"];
    trace.param("agents", m);
    trace.param("lambda", lambda);
    trace.param("eta_x", cfg.eta_x);
    trace.param("k_fixed", k_fixed);
    if cfg.record_iterates {
        trace.iterates = Some(Vec::new());
        trace.grad_estimates = Some(Vec::new());
    }

    // Consensus state: every agent holds identical copies throughout.
    let mut xs: Vec<Vector> = vec![x0.to_vec(); m];
    let mut ys: Vec<Vector> = vec![y0.to_vec(); m];
    let mut zs: Vec<Vector> = vec![y0.to_vec(); m];
    let mut net = NetworkStats::default();
    let mut calls: u64 = 0;
    trace.status = Status::MaxIters;

    for t in 0..cfg.t_max {
        for _ in 0..k_fixed {
            // Local gradient evaluation may run concurrently within the round.
            let grads: Vec<(Vector, Vector)> = map_auto(
                (0..m).collect::<Vec<_>>(),
                |i| {
                    let o = &partition.locals[i];
                    let (_, gz) = o.grad_g(&xs[i], &zs[i]);
                    let v: Vector = linalg::scale(&gz, lambda);
                    let (_, fy) = o.grad_f(&xs[i], &ys[i]);
                    let (_, gy) = o.grad_g(&xs[i], &ys[i]);
                    let u: Vector = (0..fy.len()).map(|j| fy[j] + lambda * gy[j]).collect();
                    (v, u)
                },
            );
            calls += 3 * m as u64;
            let v_rows: Vec<Vector> = grads.iter().map(|g| g.0.clone()).collect();
            let u_rows: Vec<Vector> = grads.iter().map(|g| g.1.clone()).collect();
            // One aggregate-broadcast round carries both V and U.
            let v_bar = linalg::pairwise_mean(&v_rows);
            let u_bar = linalg::pairwise_mean(&u_rows);
            net.rounds += 1;
            net.scalars_moved += 2 * (m as u64) * (2 * d_y as u64);
            for i in 0..m {
                linalg::axpy(&mut zs[i], -cfg.penalty.eta_z, &v_bar);
                linalg::axpy(&mut ys[i], -cfg.penalty.eta_y, &u_bar);
            }
        }

        let h_rows: Vec<Vector> = map_auto(
            (0..m).collect::<Vec<_>>(),
            |i| {
                let o = &partition.locals[i];
                let (fx, _) = o.grad_f(&xs[i], &ys[i]);
                let (gx_y, _) = o.grad_g(&xs[i], &ys[i]);
                let (gx_z, _) = o.grad_g(&xs[i], &zs[i]);
                (0..fx.len())
                    .map(|j| fx[j] + lambda * (gx_y[j] - gx_z[j]))
                    .collect()
            },
        );
        calls += 3 * m as u64;
        let h_bar = linalg::pairwise_mean(&h_rows);
        net.rounds += 1;
        net.scalars_moved += 2 * (m as u64) * d_x as u64;

        let mut rec = TraceRecord {
            t,
            x_norm: linalg::norm(&xs[0]),
            grad_est_norm: linalg::norm(&h_bar),
            k_t: k_fixed,
            delta_t: 0.0,
            oracle_calls: calls,
            comm_rounds: Some(net.rounds),
            scalars_moved: Some(net.scalars_moved),
            ..Default::default()
        };
        if let Some(h) = handles {
            rec.grad_phi_norm = h.grad_phi(&xs[0]).map(|g| linalg::norm(&g));
            rec.phi = h.phi(&xs[0]);
        }
        if let Some(it) = trace.iterates.as_mut() {
            it.push(xs[0].clone());
        }
        if let Some(gs) = trace.grad_estimates.as_mut() {
            gs.push(h_bar.clone());
        }
        trace.records.push(rec);

        if let Some(stop) = cfg.stop_grad_norm {
            if linalg::norm(&h_bar) <= stop {
                trace.status = Status::Converged;
                break;
            }
        }
        for x in xs.iter_mut() {
            linalg::axpy(x, -cfg.eta_x, &h_bar);
        }
        if !linalg::all_finite(&xs[0]) || linalg::norm(&xs[0]) > crate::solvers::DIVERGENCE_NORM
        {
            trace.status = Status::Diverged;
            break;
        }
    }

    trace.final_x = xs[0].clone();
    trace.final_y = ys[0].clone();
    trace.final_z = zs[0].clone();
    Ok((trace, net))
}

/// One shard of a quadratic finite-sum split: the shards vary the `f`-offset
/// `a_i`, scale the `P`-term and add a zero-sum linear tilt to `g`, so their
/// means reproduce the source instance's gradients exactly.
#[derive(Debug, Clone)]
pub struct QuadraticShard {
    a_i: DVector<f64>,
    b: DMatrix<f64>,
    p: DMatrix<f64>,
    c_i: f64,
    tilt: DVector<f64>,
    smooth: SmoothnessInfo,
}

impl BilevelOracle for QuadraticShard {
    fn d_x(&self) -> usize {
        self.b.ncols()
    }
    fn d_y(&self) -> usize {
        self.a_i.len()
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        0.5 * (&yv - &self.a_i).norm_squared()
            + 0.5 * self.c_i * (xv.transpose() * &self.p * &xv)[(0, 0)]
    }
    fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = DVector::from_column_slice(y) - &self.b * DVector::from_column_slice(x);
        0.5 * r.norm_squared() + self.tilt.dot(&r)
    }
    fn grad_f(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let fx = (&self.p * DVector::from_column_slice(x)) * self.c_i;
        let fy: Vector = y
            .iter()
            .zip(self.a_i.iter())
            .map(|(yi, ai)| yi - ai)
            .collect();
        (fx.as_slice().to_vec(), fy)
    }
    fn grad_g(&self, x: &[f64], y: &[f64]) -> (Vector, Vector) {
        let r = DVector::from_column_slice(y) - &self.b * DVector::from_column_slice(x);
        let gy = &r + &self.tilt;
        let gx = -(self.b.transpose() * &gy);
        (gx.as_slice().to_vec(), gy.as_slice().to_vec())
    }
    fn smoothness(&self) -> &SmoothnessInfo {
        &self.smooth
    }
}

/// Split a quadratic instance into `m` shards whose means reproduce it.
/// Perturbations are drawn round-robin with the last shard balancing the
/// sum to zero, so the partition is deterministic given the stream.
pub fn quadratic_partition(
    inst: &QuadraticInstance,
    m: usize,
    rng: &mut RngStream,
) -> Result<AgentPartition<QuadraticShard>> {
    if m == 0 {
        return Err(BilevelError::Construction("need at least one agent".into()));
    }
    let d_y = inst.d_y();
    let a = inst.offset_a().clone();
    let mut offsets: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut tilts: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut scales: Vec<f64> = Vec::with_capacity(m);
    let mut off_sum = DVector::zeros(d_y);
    let mut tilt_sum = DVector::zeros(d_y);
    let mut scale_sum = 0.0;
    for _ in 0..m.saturating_sub(1) {
        let o = DVector::from_vec(rng.normal_vec(d_y, 0.3));
        let t = DVector::from_vec(rng.normal_vec(d_y, 0.3));
        let s = rng.uniform(-0.4, 0.4);
        off_sum += &o;
        tilt_sum += &t;
        scale_sum += s;
        offsets.push(o);
        tilts.push(t);
        scales.push(s);
    }
    offsets.push(-off_sum);
    tilts.push(-tilt_sum);
    scales.push(-scale_sum);

    let locals = (0..m)
        .map(|i| QuadraticShard {
            a_i: &a + &offsets[i],
            b: inst.matrix_b().clone(),
            p: inst.matrix_p().clone(),
            c_i: 1.0 + scales[i],
            tilt: tilts[i].clone(),
            smooth: *inst.smoothness(),
        })
        .collect();
    AgentPartition::new(locals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyParams;

    #[test]
    fn aggregate_broadcast_examples() {
        let out = aggregate_broadcast(&[vec![1.0, 3.0], vec![3.0, 1.0]]);
        assert_eq!(out, vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        // idempotent on consensus
        let again = aggregate_broadcast(&out);
        assert_eq!(again, out);
        // single agent: identity
        let one = aggregate_broadcast(&[vec![0.5, -0.5]]);
        assert_eq!(one, vec![vec![0.5, -0.5]]);
    }

    #[test]
    fn partition_means_match_global_gradients() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(2, 0);
        let part = quadratic_partition(&inst, 4, &mut rng).unwrap();
        let global = part.global();
        for probe in [([0.3], [0.7]), ([-1.2], [0.4]), ([2.0], [-0.3])] {
            let (x, y) = (probe.0.to_vec(), probe.1.to_vec());
            let (gfx, gfy) = global.grad_f(&x, &y);
            let (efx, efy) = inst.grad_f(&x, &y);
            let (ggx, ggy) = global.grad_g(&x, &y);
            let (egx, egy) = inst.grad_g(&x, &y);
            assert!((gfx[0] - efx[0]).abs() < 1e-12);
            assert!((gfy[0] - efy[0]).abs() < 1e-12);
            assert!((ggx[0] - egx[0]).abs() < 1e-12);
            assert!((ggy[0] - egy[0]).abs() < 1e-12);
        }
    }

    fn dist_cfg(inst: &QuadraticInstance) -> FoConfig {
        FoConfig {
            penalty: PenaltyParams::theorem1(9.0, inst.smoothness()),
            eta_x: 0.3,
            t_max: 60,
            inner: InnerSchedule::FixedK(25),
            stop_grad_norm: None,
            batch_out: 1,
            batch_in: 1,
            seed: 0,
            record_iterates: true,
            delta0: None,
            r_warm: 1.0,
        }
    }

    #[test]
    fn single_agent_is_bit_compatible_with_f2ba() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let part = quadratic_partition(&inst, 1, &mut rng).unwrap();
        let cfg = dist_cfg(&inst);
        let (dist, _) = run_distributed_f2ba(&part, &[0.0], &[0.0], &cfg).unwrap();
        let det = crate::solvers::run_f2ba(&part.locals()[0], &[0.0], &[0.0], &cfg).unwrap();
        let a = dist.iterates.as_ref().unwrap();
        let b = det.iterates.as_ref().unwrap();
        for (xa, xb) in a.iter().zip(b) {
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn rounds_count_is_k_plus_one_per_outer_iteration() {
        let inst = QuadraticInstance::scalar(1.0, 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(4, 0);
        let part = quadratic_partition(&inst, 3, &mut rng).unwrap();
        let mut cfg = dist_cfg(&inst);
        cfg.t_max = 7;
        let (trace, net) = run_distributed_f2ba(&part, &[0.0], &[0.0], &cfg).unwrap();
        let k = 25;
        assert_eq!(trace.records.len(), 7);
        assert_eq!(net.rounds, 7 * (k + 1) as u64);
    }
}
