//! The solver iteration over a simulated cluster.
//!
//! The master (machine 0) holds the first row block and drives the loop.
//! Root finding uses the surrogate loss: the master's own least-squares fit
//! is corrected by one exchange of `|A|`-length gradients. The dual vector
//! `d` and curvature `g` are either averaged over all machines (CESDAR) or
//! taken from the master shard alone (ECESDAR), which removes every
//! `p`-length transfer.

mod cluster;
mod ledger;
mod partition;
mod protocol;

pub use cluster::{Cluster, ClusterOptions, FailurePlan};
pub use ledger::{CommLedger, Direction, LedgerEntry};
pub use partition::{partition, Partition};
pub use protocol::{byte_size_for, decode_frames, MessageKind, Payload, WorkerMessage, HEADER_BYTES, ITEM_BYTES};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{gram_submatrix, spd_solve, xt_vec_submatrix};
use crate::sdar::{attach_active, dual_and_curvature, dual_at, run_sdar, solve_active, Backend, FitOutput, IterState, SolverConfig};
use crate::sparse::SparseCoefficients;
use cluster::active_gradient;

/// Where the `(d, g)` pair driving support detection comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualSource {
    /// Averaged over all machines (CESDAR).
    Averaged,
    /// Master shard only (ECESDAR).
    Master,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedFit {
    pub fit: FitOutput,
    pub ledger: CommLedger,
    pub machines: usize,
    /// Wall time of the whole simulated run, workers executed in turn.
    pub wall_seconds: f64,
    /// Wall time with each worker round charged only for its slowest worker.
    pub simulated_seconds: f64,
    /// Encoded message frames, when requested.
    pub frames: Option<Vec<u8>>,
}

/// Surrogate-loss root finding on `active`.
///
/// The master fits least squares on its shard (the anchor), the workers
/// report their gradients at the anchor, and the master solves
/// `H_1 beta = b_1 + grad l_1(anchor) - grad l_N(anchor)` with `H_1`, `b_1`
/// its own normal equations. The global gradient weights each shard by its
/// row count. With one machine the anchor is returned as is.
pub fn surrogate_root_find(cluster: &mut Cluster, iteration: usize, active: &[usize]) -> Result<SparseCoefficients> {
    Ok(surrogate_step(cluster, iteration, active)?.0)
}

fn surrogate_step(cluster: &mut Cluster, iteration: usize, active: &[usize]) -> Result<(SparseCoefficients, bool)> {
    let p = cluster.p();
    if let Some(&i) = active.iter().find(|&&i| i >= p) {
        return Err(Error::IndexOutOfRange { index: i, bound: p });
    }
    let (anchor, jittered) = solve_active(cluster.master(), active)?;
    if cluster.machines() == 1 || active.is_empty() {
        return Ok((anchor, jittered));
    }
    cluster.broadcast(
        iteration,
        WorkerMessage::indices(MessageKind::BroadcastActiveSet, active.to_vec())?,
    )?;
    cluster.broadcast(
        iteration,
        WorkerMessage::reals(MessageKind::BroadcastAnchor, anchor.values().to_vec())?,
    )?;
    cluster.run_workers()?;
    let reports = cluster.collect(iteration, MessageKind::ReportGradient)?;

    let master = cluster.master();
    let n1 = master.n() as f64;
    let local = active_gradient(master, &anchor, active)?;
    let mut global: Vec<f64> = local.iter().map(|g| g * n1).collect();
    for (grad, rows) in reports.iter().zip(cluster.worker_rows()) {
        for (acc, g) in global.iter_mut().zip(grad) {
            *acc += g * rows as f64;
        }
    }
    let total = cluster.rows() as f64;
    let gram = gram_submatrix(master.x(), active, n1)?;
    let mut rhs = xt_vec_submatrix(master.x(), active, master.y(), n1)?;
    for ((r, l), g) in rhs.iter_mut().zip(&local).zip(&global) {
        *r += l - g / total;
    }
    let sol = spd_solve(&gram, &rhs).map_err(|e| attach_active(e, active))?;
    Ok((
        SparseCoefficients::from_parts_unchecked(p, active.to_vec(), sol.x),
        jittered || sol.jittered,
    ))
}

/// `(first + rest[0] + rest[1] + ...) / machines`, summed in that order.
fn average(mut first: Vec<f64>, rest: &[Vec<f64>], machines: usize) -> Vec<f64> {
    for v in rest {
        for (a, b) in first.iter_mut().zip(v) {
            *a += b;
        }
    }
    let m = machines as f64;
    for a in &mut first {
        *a /= m;
    }
    first
}

struct ClusterBackend<'a> {
    cluster: &'a mut Cluster,
    source: DualSource,
}

impl Backend for ClusterBackend<'_> {
    fn p(&self) -> usize {
        self.cluster.p()
    }

    fn bootstrap(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let zero = SparseCoefficients::zeros(self.cluster.p());
        let (d, g) = dual_and_curvature(self.cluster.master(), &zero)?;
        let m = self.cluster.machines();
        if self.source == DualSource::Master || m == 1 {
            return Ok((d, g));
        }
        self.cluster.initial_reports()?;
        let gs = self.cluster.collect(0, MessageKind::ReportCurvature)?;
        let ds = self.cluster.collect(0, MessageKind::ReportDual)?;
        Ok((average(d, &ds, m), average(g, &gs, m)))
    }

    fn root_find(&mut self, iteration: usize, active: &[usize]) -> Result<(SparseCoefficients, bool)> {
        surrogate_step(self.cluster, iteration, active)
    }

    fn dual(&mut self, iteration: usize, beta: &SparseCoefficients) -> Result<Vec<f64>> {
        let d = dual_at(self.cluster.master(), beta)?;
        let m = self.cluster.machines();
        if self.source == DualSource::Master || m == 1 {
            return Ok(d);
        }
        // Workers already hold this iteration's active set from root finding.
        self.cluster.broadcast(
            iteration,
            WorkerMessage::reals(MessageKind::BroadcastFinal, beta.values().to_vec())?,
        )?;
        self.cluster.run_workers()?;
        let ds = self.cluster.collect(iteration, MessageKind::ReportDual)?;
        Ok(average(d, &ds, m))
    }

    fn loss(&mut self, beta: &SparseCoefficients) -> Result<f64> {
        self.cluster.master().loss(beta)
    }
}

impl Cluster {
    /// Runs one fit on this cluster. Ledger, frames and timers cover this fit
    /// only.
    pub fn fit(&mut self, source: DualSource, cfg: &SolverConfig, warm: Option<&IterState>) -> Result<DistributedFit> {
        self.take_records();
        let start = Instant::now();
        let fit = run_sdar(&mut ClusterBackend { cluster: self, source }, cfg, warm);
        let wall = start.elapsed().as_secs_f64();
        let (ledger, frames, worker_total, worker_critical) = self.take_records();
        let fit = fit?;
        Ok(DistributedFit {
            fit,
            ledger,
            machines: self.machines(),
            wall_seconds: wall,
            simulated_seconds: (wall - worker_total + worker_critical).max(0.0),
            frames,
        })
    }
}

pub fn cesdar_fit(data: &Dataset, machines: usize, cfg: &SolverConfig) -> Result<DistributedFit> {
    Cluster::new(data, machines, ClusterOptions::default())?.fit(DualSource::Averaged, cfg, None)
}

pub fn ecesdar_fit(data: &Dataset, machines: usize, cfg: &SolverConfig) -> Result<DistributedFit> {
    Cluster::new(data, machines, ClusterOptions::default())?.fit(DualSource::Master, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};
    use crate::linalg::DenseMatrix;
    use crate::sdar::{esdar_fit, kkt_residual_state, root_find_local};

    fn stacked(copies: usize, shard: &Dataset) -> Dataset {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..copies {
            x.extend_from_slice(shard.x().data());
            y.extend_from_slice(shard.y());
        }
        let rows = shard.n() * copies;
        Dataset::with_default_names(DenseMatrix::new(rows, shard.p(), x).unwrap(), y).unwrap()
    }

    #[test]
    fn single_machine_matches_esdar_bitwise() {
        let (data, _) = generate(&SyntheticSpec::new(300, 40, 5, 17)).unwrap();
        let cfg = SolverConfig::new(5);
        let base = esdar_fit(&data, &cfg).unwrap();
        for fit in [cesdar_fit(&data, 1, &cfg).unwrap(), ecesdar_fit(&data, 1, &cfg).unwrap()] {
            assert_eq!(fit.fit.beta, base.beta);
            assert_eq!(fit.fit.iterations, base.iterations);
            assert_eq!(fit.fit.active_trace, base.active_trace);
            assert_eq!(fit.ledger.message_count(), 0);
        }
    }

    #[test]
    fn surrogate_near_global_least_squares() {
        let (data, truth) = generate(&SyntheticSpec::new(400, 20, 3, 2)).unwrap();
        let active = truth.support;
        let mut c = Cluster::new(&data, 4, ClusterOptions::default()).unwrap();
        let sur = surrogate_root_find(&mut c, 1, &active).unwrap();
        let global = root_find_local(&data, &active).unwrap();
        let diff: f64 = sur.values().iter().zip(global.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = global.values().iter().map(|b| b * b).sum();
        assert!(diff.sqrt() <= 0.1 * norm.sqrt());
    }

    #[test]
    fn identical_shards_reduce_to_local_fit() {
        let (shard, _) = generate(&SyntheticSpec::new(80, 15, 3, 5)).unwrap();
        let data = stacked(4, &shard);
        let cfg = SolverConfig::new(3);
        let base = esdar_fit(&shard, &cfg).unwrap();
        let fit = cesdar_fit(&data, 4, &cfg).unwrap();
        assert_eq!(fit.fit.active_trace, base.active_trace);
        for (a, b) in fit.fit.beta.values().iter().zip(base.beta.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut c = Cluster::new(&data, 4, ClusterOptions::default()).unwrap();
        let sur = surrogate_root_find(&mut c, 1, &[0, 3]).unwrap();
        let local = root_find_local(&shard, &[0, 3]).unwrap();
        for (a, b) in sur.values().iter().zip(local.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ledger_schedule_and_asymmetry() {
        let (data, _) = generate(&SyntheticSpec::new(400, 60, 4, 9)).unwrap();
        let cfg = SolverConfig::new(4);
        let c = cesdar_fit(&data, 4, &cfg).unwrap();
        let e = ecesdar_fit(&data, 4, &cfg).unwrap();
        assert!(c.ledger.is_sound() && e.ledger.is_sound());
        for w in 1..4 {
            assert_eq!(c.ledger.report_items(0, w), 2 * 60);
            assert_eq!(e.ledger.report_items(0, w), 0);
            for k in 1..=c.fit.iterations {
                assert_eq!(c.ledger.report_items(k, w), 4 + 60);
            }
            for k in 1..=e.fit.iterations {
                assert_eq!(e.ledger.report_items(k, w), 4);
            }
        }
        let per_iter_c = 3 * (16 + 8 * 4) * 3 + 3 * (16 + 8 * 4) + 3 * (16 + 8 * 60);
        assert_eq!(
            c.ledger.total_bytes(),
            3 * 2 * (16 + 8 * 60) + c.fit.iterations * per_iter_c
        );
        assert!(e.ledger.bytes_to_master() < c.ledger.bytes_to_master());
    }

    #[test]
    fn frames_mirror_ledger() {
        let (data, _) = generate(&SyntheticSpec::new(200, 30, 3, 4)).unwrap();
        let mut cl = Cluster::new(
            &data,
            3,
            ClusterOptions {
                record_frames: true,
                ..Default::default()
            },
        )
        .unwrap();
        let fit = cl.fit(DualSource::Averaged, &SolverConfig::new(3), None).unwrap();
        let msgs = decode_frames(fit.frames.as_ref().unwrap()).unwrap();
        assert_eq!(msgs.len(), fit.ledger.message_count());
        for (m, e) in msgs.iter().zip(fit.ledger.entries()) {
            assert_eq!(m.kind, e.kind);
            assert_eq!(m.byte_size(), e.bytes);
        }
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let (data, _) = generate(&SyntheticSpec::new(600, 50, 5, 21)).unwrap();
        let cfg = SolverConfig::new(5);
        for fit in [cesdar_fit(&data, 3, &cfg).unwrap(), ecesdar_fit(&data, 3, &cfg).unwrap()] {
            if fit.fit.converged {
                let s = &fit.fit.state;
                assert!(kkt_residual_state(&s.beta, &s.d, &s.g, 5, 0.5).unwrap() <= 1e-8);
            }
        }
    }

    #[test]
    fn worker_failure_aborts() {
        let (data, _) = generate(&SyntheticSpec::new(200, 30, 3, 4)).unwrap();
        let mut cl = Cluster::new(
            &data,
            3,
            ClusterOptions {
                failure: Some(FailurePlan { worker: 1, iteration: 1 }),
                record_frames: false,
            },
        )
        .unwrap();
        let err = cl.fit(DualSource::Master, &SolverConfig::new(3), None).unwrap_err();
        assert!(matches!(err, Error::WorkerUnavailable { worker: 1 }));
    }
}
