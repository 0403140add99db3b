//! Choosing the sparsity level: a warm-started sweep over `T` scored by
//! HBIC.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributed::{Cluster, ClusterOptions, DistributedFit, DualSource};
use crate::error::{Error, Result};
use crate::sdar::{IterState, SolverConfig};
use crate::sparse::SparseCoefficients;

/// An HBIC score. `degenerate` marks a zero residual, scored `-inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hbic {
    pub value: f64,
    pub degenerate: bool,
}

/// `C_N * log p / N`, with `C_N = log log N`.
pub fn hbic_penalty(n: usize, p: usize) -> f64 {
    let n = n as f64;
    n.ln().ln() * (p as f64).ln() / n
}

/// `log(||y - X beta||^2 / N) + log(log N) * log(p) / N * |supp(beta)|`.
pub fn hbic(data: &Dataset, beta: &SparseCoefficients) -> Result<Hbic> {
    let mse = data.mse(beta)?;
    let penalty = hbic_penalty(data.n(), data.p()) * beta.nnz() as f64;
    if mse == 0.0 {
        return Ok(Hbic {
            value: f64::NEG_INFINITY,
            degenerate: true,
        });
    }
    Ok(Hbic {
        value: mse.ln() + penalty,
        degenerate: false,
    })
}

/// `J = floor(n / (log(log n) * log p))`, the largest sparsity the sweep
/// visits.
pub fn max_sparsity_cap(n: usize, p: usize) -> Result<usize> {
    if n < 16 {
        return Err(Error::Config(format!(
            "sweep cap needs at least 16 rows per machine (got {n}); set j_override"
        )));
    }
    if p < 2 {
        return Err(Error::Config("sweep cap needs p >= 2; set j_override".into()));
    }
    Ok(cap_formula(n, (p as f64).ln()))
}

fn cap_formula(n: usize, ln_p: f64) -> usize {
    let n = n as f64;
    (n / (n.ln().ln() * ln_p)).floor() as usize
}

fn default_step() -> usize {
    1
}

fn default_machines() -> usize {
    1
}

fn default_warm_tolerance() -> f64 {
    1e-8
}

fn default_solver() -> SolverConfig {
    SolverConfig::new(1)
}

fn default_source() -> DualSource {
    DualSource::Averaged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Increment `e` between consecutive sparsity levels.
    #[serde(default = "default_step")]
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_override: Option<usize>,
    #[serde(default = "default_machines")]
    pub machines: usize,
    /// Inner solver settings; its `sparsity` is replaced along the path.
    #[serde(default = "default_solver")]
    pub solver: SolverConfig,
    /// A warm-started fit is kept only if its loss is within this much of the
    /// cold-started fit at the same `T`. A negative value always falls back.
    #[serde(default = "default_warm_tolerance")]
    pub warm_start_tolerance: f64,
    #[serde(default = "default_source")]
    pub dual_source: DualSource,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            step: default_step(),
            j_override: None,
            machines: default_machines(),
            solver: default_solver(),
            warm_start_tolerance: default_warm_tolerance(),
            dual_source: default_source(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub sparsity: usize,
    pub beta: SparseCoefficients,
    pub hbic: Hbic,
    pub iterations: usize,
    pub converged: bool,
    /// Full-data least-squares loss `(1/2N)||y - X beta||^2`.
    pub loss: f64,
    /// Whether the warm-started fit was kept.
    pub warm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutput {
    /// Index into `path` of the selected point.
    pub best: usize,
    pub path: Vec<PathPoint>,
    /// Sweep cap `J` in effect.
    pub cap: usize,
    pub total_bytes: usize,
    pub bytes_to_master: usize,
    pub wall_seconds: f64,
    pub simulated_seconds: f64,
    /// Final state of the selected fit.
    pub state: IterState,
}

impl TuningOutput {
    pub fn selected(&self) -> &PathPoint {
        &self.path[self.best]
    }

    /// Root-finding steps summed over the path.
    pub fn total_iterations(&self) -> usize {
        self.path.iter().map(|p| p.iterations).sum()
    }

    /// Writes `T, HBIC, support-size, iterations, loss` per path point.
    pub fn write_path_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["T", "hbic", "support_size", "iterations", "loss"])?;
        for pt in &self.path {
            out.write_record([
                pt.sparsity.to_string(),
                pt.hbic.value.to_string(),
                pt.beta.nnz().to_string(),
                pt.iterations.to_string(),
                pt.loss.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("path csv", e))?;
        Ok(())
    }
}

/// Sparsity levels the sweep visits: `e, 2e, ...` up to `min(J, p)`.
pub fn sweep_levels(step: usize, cap: usize, p: usize) -> Vec<usize> {
    if step == 0 {
        return Vec::new();
    }
    (1..).map(|l| l * step).take_while(|&t| t <= cap && t <= p).collect()
}

/// Adaptive sweep: fits each `T = e, 2e, ...` not above the cap, each
/// warm-started from the previous level, and returns the path with the
/// smallest-HBIC point selected (ties go to the smaller `T`).
pub fn acesdar_fit(data: &Dataset, tune: &TuningConfig) -> Result<TuningOutput> {
    if tune.step == 0 {
        return Err(Error::Config("step must be positive".into()));
    }
    let mut cluster = Cluster::new(data, tune.machines, ClusterOptions::default())?;
    let cap = match tune.j_override {
        Some(j) => j,
        None => max_sparsity_cap(cluster.master().n(), data.p())?,
    };
    log::info!("sparsity sweep cap J = {cap}");
    let levels = sweep_levels(tune.step, cap, data.p());
    if levels.is_empty() {
        return Err(Error::Config(format!("empty sweep: step {} exceeds cap {cap}", tune.step)));
    }

    let mut path: Vec<PathPoint> = Vec::with_capacity(levels.len());
    let mut states: Vec<IterState> = Vec::with_capacity(levels.len());
    let (mut total_bytes, mut bytes_to_master) = (0, 0);
    let (mut wall, mut simulated) = (0.0, 0.0);
    let mut account = |f: &DistributedFit| {
        total_bytes += f.ledger.total_bytes();
        bytes_to_master += f.ledger.bytes_to_master();
        wall += f.wall_seconds;
        simulated += f.simulated_seconds;
    };

    for &t in &levels {
        let cfg = SolverConfig {
            sparsity: t,
            ..tune.solver.clone()
        };
        let cold = cluster.fit(tune.dual_source, &cfg, None)?;
        account(&cold);
        let cold_loss = data.loss(&cold.fit.beta)?;
        let (fit, loss, warm) = match states.last() {
            None => (cold, cold_loss, false),
            Some(prev) => {
                let warm = cluster.fit(tune.dual_source, &cfg, Some(prev))?;
                account(&warm);
                let warm_loss = data.loss(&warm.fit.beta)?;
                if warm_loss <= cold_loss + tune.warm_start_tolerance {
                    (warm, warm_loss, true)
                } else {
                    log::debug!("T = {t}: warm start lost to cold start ({warm_loss} vs {cold_loss})");
                    (cold, cold_loss, false)
                }
            }
        };
        path.push(PathPoint {
            sparsity: t,
            hbic: hbic(data, &fit.fit.beta)?,
            beta: fit.fit.beta,
            iterations: fit.fit.iterations,
            converged: fit.fit.converged,
            loss,
            warm,
        });
        states.push(fit.fit.state);
    }

    let mut best = 0;
    for (i, pt) in path.iter().enumerate() {
        if pt.hbic.value < path[best].hbic.value {
            best = i;
        }
    }
    if path[best].hbic.degenerate {
        log::warn!("selected fit at T = {} interpolates the response exactly", path[best].sparsity);
    }
    Ok(TuningOutput {
        best,
        state: states.swap_remove(best),
        path,
        cap,
        total_bytes,
        bytes_to_master,
        wall_seconds: wall,
        simulated_seconds: simulated,
    })
}
