//! In-process simulation of the master and its workers.
//!
//! Workers own their shard and talk to the master only through
//! [`WorkerMessage`] values placed on queues. Every message is audited for
//! shape, recorded in the [`CommLedger`], and optionally framed into a byte
//! log. Workers run one after another; the time each spends is tracked so
//! the run can also be reported as if workers had run in parallel.

use std::collections::VecDeque;
use std::time::Instant;

use crate::data::Dataset;
use crate::distributed::ledger::{CommLedger, Direction};
use crate::distributed::partition::{partition, Partition};
use crate::distributed::protocol::{MessageKind, Payload, WorkerMessage};
use crate::error::{Error, Result};
use crate::linalg::xt_vec_submatrix;
use crate::sdar::dual_at;
use crate::sparse::SparseCoefficients;

/// Makes `worker` unreachable from `iteration` on (fail-stop).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailurePlan {
    pub worker: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterOptions {
    pub failure: Option<FailurePlan>,
    /// Keep every message as an encoded frame.
    pub record_frames: bool,
}

/// Least-squares gradient `-X_A'(y - X beta)/n` restricted to `active`.
pub(crate) fn active_gradient(data: &Dataset, beta: &SparseCoefficients, active: &[usize]) -> Result<Vec<f64>> {
    let r = data.residual(beta)?;
    let mut g = xt_vec_submatrix(data.x(), active, &r, data.n() as f64)?;
    for v in &mut g {
        *v = -*v;
    }
    Ok(g)
}

struct Worker {
    id: usize,
    shard: Dataset,
    active: Vec<usize>,
}

impl Worker {
    fn coefficients(&self, values: &[f64]) -> Result<SparseCoefficients> {
        if values.len() != self.active.len() {
            return Err(Error::DimensionMismatch {
                context: "worker coefficients vs active set",
                expected: self.active.len(),
                found: values.len(),
            });
        }
        Ok(SparseCoefficients::from_parts_unchecked(
            self.shard.p(),
            self.active.clone(),
            values.to_vec(),
        ))
    }

    fn handle(&mut self, msg: WorkerMessage) -> Result<Option<WorkerMessage>> {
        match (msg.kind, msg.payload) {
            (MessageKind::BroadcastActiveSet, Payload::Indices(active)) => {
                self.active = active;
                Ok(None)
            }
            (MessageKind::BroadcastAnchor, Payload::Reals(anchor)) => {
                let beta = self.coefficients(&anchor)?;
                let grad = active_gradient(&self.shard, &beta, &self.active)?;
                Ok(Some(WorkerMessage::reals(MessageKind::ReportGradient, grad)?))
            }
            (MessageKind::BroadcastFinal, Payload::Reals(values)) => {
                let beta = self.coefficients(&values)?;
                let d = dual_at(&self.shard, &beta)?;
                Ok(Some(WorkerMessage::reals(MessageKind::ReportDual, d)?))
            }
            (kind, _) => Err(Error::Format {
                what: "worker inbox",
                detail: format!("worker {} cannot handle {kind}", self.id),
            }),
        }
    }

    /// Curvature and dual at `beta = 0`, sent once at start-up.
    fn initial_reports(&self) -> Result<[WorkerMessage; 2]> {
        let zero = SparseCoefficients::zeros(self.shard.p());
        Ok([
            WorkerMessage::reals(MessageKind::ReportCurvature, self.shard.curvature().to_vec())?,
            WorkerMessage::reals(MessageKind::ReportDual, dual_at(&self.shard, &zero)?)?,
        ])
    }
}

pub struct Cluster {
    partition: Partition,
    master: Dataset,
    workers: Vec<Worker>,
    inboxes: Vec<VecDeque<WorkerMessage>>,
    to_master: VecDeque<(usize, WorkerMessage)>,
    ledger: CommLedger,
    frames: Option<Vec<u8>>,
    options: ClusterOptions,
    active_len: usize,
    rows: usize,
    worker_seconds: f64,
    critical_seconds: f64,
}

impl Cluster {
    pub fn new(data: &Dataset, machines: usize, options: ClusterOptions) -> Result<Self> {
        let (partition, mut shards) = partition(data, machines)?;
        let rest = shards.split_off(1);
        let master = shards.pop().expect("at least one machine");
        let workers: Vec<Worker> = rest
            .into_iter()
            .enumerate()
            .map(|(i, shard)| Worker {
                id: i + 1,
                shard,
                active: Vec::new(),
            })
            .collect();
        Ok(Self {
            partition,
            master,
            inboxes: workers.iter().map(|_| VecDeque::new()).collect(),
            workers,
            to_master: VecDeque::new(),
            ledger: CommLedger::new(),
            frames: options.record_frames.then(Vec::new),
            options,
            active_len: 0,
            rows: data.n(),
            worker_seconds: 0.0,
            critical_seconds: 0.0,
        })
    }

    pub fn machines(&self) -> usize {
        self.partition.machines
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn master(&self) -> &Dataset {
        &self.master
    }

    pub fn p(&self) -> usize {
        self.master.p()
    }

    /// Total rows across all machines.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn worker_rows(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.shard.n()).collect()
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    /// Hands over the ledger and frame log accumulated so far and resets
    /// both, along with the worker timers.
    pub(crate) fn take_records(&mut self) -> (CommLedger, Option<Vec<u8>>, f64, f64) {
        let ledger = std::mem::take(&mut self.ledger);
        let frames = self.frames.as_mut().map(std::mem::take);
        let times = (self.worker_seconds, self.critical_seconds);
        self.worker_seconds = 0.0;
        self.critical_seconds = 0.0;
        (ledger, frames, times.0, times.1)
    }

    fn check_alive(&self, worker: usize, iteration: usize) -> Result<()> {
        match self.options.failure {
            Some(f) if f.worker == worker && iteration >= f.iteration => Err(Error::WorkerUnavailable { worker }),
            _ => Ok(()),
        }
    }

    fn log_frame(&mut self, msg: &WorkerMessage) {
        if let Some(buf) = self.frames.as_mut() {
            msg.encode_frame(buf);
        }
    }

    /// Sends `msg` to every worker.
    pub(crate) fn broadcast(&mut self, iteration: usize, msg: WorkerMessage) -> Result<()> {
        if msg.kind.is_report() {
            return Err(Error::Format {
                what: "broadcast",
                detail: format!("{} is a worker report", msg.kind),
            });
        }
        if let Payload::Indices(active) = &msg.payload {
            self.active_len = active.len();
        }
        msg.audit(self.active_len, self.p())?;
        for w in &self.workers {
            self.check_alive(w.id, iteration)?;
        }
        for (slot, w) in self.workers.iter().enumerate() {
            self.ledger.record(iteration, &msg, Direction::ToWorker(w.id));
            self.inboxes[slot].push_back(msg.clone());
        }
        for _ in 0..self.workers.len() {
            self.log_frame(&msg);
        }
        Ok(())
    }

    fn timed_round<F>(&mut self, mut work: F) -> Result<()>
    where
        F: FnMut(&mut Worker, &mut VecDeque<WorkerMessage>) -> Result<Vec<WorkerMessage>>,
    {
        let mut slowest = 0.0f64;
        for slot in 0..self.workers.len() {
            let start = Instant::now();
            let replies = work(&mut self.workers[slot], &mut self.inboxes[slot])?;
            let elapsed = start.elapsed().as_secs_f64();
            self.worker_seconds += elapsed;
            slowest = slowest.max(elapsed);
            let id = self.workers[slot].id;
            self.to_master.extend(replies.into_iter().map(|m| (id, m)));
        }
        self.critical_seconds += slowest;
        Ok(())
    }

    /// Lets every worker drain its inbox.
    pub(crate) fn run_workers(&mut self) -> Result<()> {
        self.timed_round(|worker, inbox| {
            let mut replies = Vec::new();
            while let Some(msg) = inbox.pop_front() {
                if let Some(r) = worker.handle(msg)? {
                    replies.push(r);
                }
            }
            Ok(replies)
        })
    }

    /// Start-up round: each worker reports curvature and the dual at zero.
    pub(crate) fn initial_reports(&mut self) -> Result<()> {
        for w in &self.workers {
            self.check_alive(w.id, 0)?;
        }
        self.timed_round(|worker, _| Ok(worker.initial_reports()?.to_vec()))
    }

    /// Takes one `kind` report from every worker, in worker order.
    pub(crate) fn collect(&mut self, iteration: usize, kind: MessageKind) -> Result<Vec<Vec<f64>>> {
        let mut picked = Vec::with_capacity(self.workers.len());
        let mut kept = VecDeque::new();
        while let Some((id, msg)) = self.to_master.pop_front() {
            if msg.kind == kind {
                picked.push((id, msg));
            } else {
                kept.push_back((id, msg));
            }
        }
        self.to_master = kept;
        if picked.len() != self.workers.len() {
            return Err(Error::WorkerCountMismatch {
                expected: self.workers.len(),
                found: picked.len(),
            });
        }
        picked.sort_by_key(|(id, _)| *id);
        let mut out = Vec::with_capacity(picked.len());
        for (id, msg) in picked {
            msg.audit(self.active_len, self.p())?;
            self.ledger.record(iteration, &msg, Direction::ToMaster(id));
            self.log_frame(&msg);
            match msg.payload {
                Payload::Reals(v) => out.push(v),
                Payload::Indices(_) => unreachable!("reports carry reals"),
            }
        }
        Ok(out)
    }

    /// Combined wall time spent inside workers, and the sum over rounds of
    /// the slowest worker.
    pub fn worker_seconds(&self) -> (f64, f64) {
        (self.worker_seconds, self.critical_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    #[test]
    fn gradient_report_matches_shard_gradient() {
        let (data, _) = generate(&SyntheticSpec::new(60, 6, 2, 3)).unwrap();
        let mut c = Cluster::new(&data, 3, ClusterOptions::default()).unwrap();
        assert_eq!(c.worker_rows(), vec![20, 20]);
        c.broadcast(1, WorkerMessage::indices(MessageKind::BroadcastActiveSet, vec![1, 4]).unwrap())
            .unwrap();
        c.broadcast(1, WorkerMessage::reals(MessageKind::BroadcastAnchor, vec![0.5, -1.0]).unwrap())
            .unwrap();
        c.run_workers().unwrap();
        let grads = c.collect(1, MessageKind::ReportGradient).unwrap();
        let beta = SparseCoefficients::new(6, vec![1, 4], vec![0.5, -1.0]).unwrap();
        for (m, g) in grads.iter().enumerate() {
            let shard = data.slice_rows(20 * (m + 1), 20).unwrap();
            let r = shard.residual(&beta).unwrap();
            for (k, &j) in [1usize, 4].iter().enumerate() {
                let want: f64 = -(0..20).map(|i| shard.x().get(i, j) * r[i]).sum::<f64>() / 20.0;
                assert!((g[k] - want).abs() < 1e-12);
            }
        }
        assert_eq!(c.ledger().message_count(), 6);
    }

    #[test]
    fn audit_rejects_misshaped_broadcast() {
        let (data, _) = generate(&SyntheticSpec::new(40, 5, 1, 0)).unwrap();
        let mut c = Cluster::new(&data, 2, ClusterOptions::default()).unwrap();
        c.broadcast(1, WorkerMessage::indices(MessageKind::BroadcastActiveSet, vec![0, 2]).unwrap())
            .unwrap();
        let err = c
            .broadcast(1, WorkerMessage::reals(MessageKind::BroadcastAnchor, vec![0.0; 40]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::PrivacyViolation { .. }));
    }

    #[test]
    fn failed_worker_is_unavailable() {
        let (data, _) = generate(&SyntheticSpec::new(40, 5, 1, 0)).unwrap();
        let opts = ClusterOptions {
            failure: Some(FailurePlan { worker: 2, iteration: 0 }),
            record_frames: false,
        };
        let mut c = Cluster::new(&data, 3, opts).unwrap();
        assert!(matches!(c.initial_reports(), Err(Error::WorkerUnavailable { worker: 2 })));
    }
}
