use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::metrics::{
    discovery_rates, estimation_error, matches_oracle, prediction_error, MetricsSummary, TrialResult,
};
use crate::bench::theory::{bound_check, design_diagnostics, BoundReport};
use crate::data::{generate, generate_test, Dataset, GroundTruth, SyntheticSpec};
use crate::distributed::{surrogate_root_find, Cluster, ClusterOptions, DualSource};
use crate::error::{Error, Result};
use crate::sdar::{esdar_fit, root_find_local, SolverConfig};
use crate::sparse::SparseCoefficients;
use crate::tuning::{acesdar_fit, TuningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Esdar,
    Cesdar,
    Ecesdar,
    Acesdar,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Esdar, Algorithm::Cesdar, Algorithm::Ecesdar, Algorithm::Acesdar];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Esdar => "esdar",
            Algorithm::Cesdar => "cesdar",
            Algorithm::Ecesdar => "ecesdar",
            Algorithm::Acesdar => "acesdar",
        }
    }

    /// Upper-case label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Esdar => "ESDAR",
            Algorithm::Cesdar => "CESDAR",
            Algorithm::Ecesdar => "ECESDAR",
            Algorithm::Acesdar => "ACESDAR",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// The output of one fit, whatever the algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub beta: SparseCoefficients,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub sparsity: usize,
    pub bytes_total: usize,
    pub bytes_to_master: usize,
    pub compute_seconds: f64,
    /// What this algorithm returns when run on the true support, used to
    /// decide whether it reached the oracle fit.
    pub oracle_reference: Option<SparseCoefficients>,
}

/// Fits `data` with `algorithm`. When `a_star` is given, also computes the
/// algorithm's own fit restricted to `a_star`.
pub fn fit_with(
    data: &Dataset,
    algorithm: Algorithm,
    machines: usize,
    solver: &SolverConfig,
    tuning: &TuningConfig,
    a_star: Option<&[usize]>,
) -> Result<FitSummary> {
    match algorithm {
        Algorithm::Esdar => {
            let start = std::time::Instant::now();
            let fit = esdar_fit(data, solver)?;
            let secs = start.elapsed().as_secs_f64();
            let oracle_reference = a_star.map(|a| root_find_local(data, a)).transpose()?;
            Ok(FitSummary {
                active: fit.state.active.clone(),
                beta: fit.beta,
                iterations: fit.iterations,
                converged: fit.converged,
                sparsity: solver.sparsity,
                bytes_total: 0,
                bytes_to_master: 0,
                compute_seconds: secs,
                oracle_reference,
            })
        }
        Algorithm::Cesdar | Algorithm::Ecesdar => {
            let source = if algorithm == Algorithm::Cesdar {
                DualSource::Averaged
            } else {
                DualSource::Master
            };
            let mut cluster = Cluster::new(data, machines, ClusterOptions::default())?;
            let out = cluster.fit(source, solver, None)?;
            let oracle_reference = a_star.map(|a| surrogate_root_find(&mut cluster, 0, a)).transpose()?;
            Ok(FitSummary {
                active: out.fit.state.active.clone(),
                beta: out.fit.beta,
                iterations: out.fit.iterations,
                converged: out.fit.converged,
                sparsity: solver.sparsity,
                bytes_total: out.ledger.total_bytes(),
                bytes_to_master: out.ledger.bytes_to_master(),
                compute_seconds: out.simulated_seconds,
                oracle_reference,
            })
        }
        Algorithm::Acesdar => {
            let tune = TuningConfig {
                machines,
                solver: solver.clone(),
                ..tuning.clone()
            };
            let out = acesdar_fit(data, &tune)?;
            let oracle_reference = match a_star {
                Some(a) => {
                    let mut cluster = Cluster::new(data, machines, ClusterOptions::default())?;
                    Some(surrogate_root_find(&mut cluster, 0, a)?)
                }
                None => None,
            };
            let pick = out.selected();
            Ok(FitSummary {
                beta: pick.beta.clone(),
                active: out.state.active.clone(),
                iterations: out.total_iterations(),
                converged: pick.converged,
                sparsity: pick.sparsity,
                bytes_total: out.total_bytes,
                bytes_to_master: out.bytes_to_master,
                compute_seconds: out.simulated_seconds,
                oracle_reference,
            })
        }
    }
}

fn default_replicates() -> usize {
    100
}

fn default_n_test() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.05
}

fn default_zeta() -> f64 {
    0.5
}

/// Settings for the optional error-bound diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryOptions {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Random subset pairs for the spectrum constants when `p > 14`; zero
    /// skips them.
    #[serde(default)]
    pub src_samples: usize,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            src_samples: 0,
            zeta: default_zeta(),
        }
    }
}

/// One simulation cell: a data design, an algorithm, and a replicate count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Design; its `seed` is replaced by `base_seed + replicate`.
    pub spec: SyntheticSpec,
    pub algorithm: Algorithm,
    pub machines: usize,
    pub solver: SolverConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Fresh rows per replicate for the prediction error.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Cap on concurrently running replicates; `None` uses every core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryOptions>,
}

impl CellConfig {
    pub fn new(spec: SyntheticSpec, algorithm: Algorithm, machines: usize, sparsity: usize) -> Self {
        let solver = SolverConfig {
            tau: spec.tau,
            ..SolverConfig::new(sparsity)
        };
        Self {
            spec,
            algorithm,
            machines,
            solver,
            tuning: TuningConfig::default(),
            replicates: default_replicates(),
            base_seed: 0,
            n_test: default_n_test(),
            jobs: None,
            theory: None,
        }
    }
}

/// A replicate that ended in an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub replicate: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub config: CellConfig,
    pub summary: MetricsSummary,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    /// Per completed trial, when diagnostics were requested.
    pub bounds: Vec<BoundReport>,
}

/// The data one replicate sees.
pub fn replicate_data(config: &CellConfig, replicate: usize) -> Result<(Dataset, GroundTruth, Dataset)> {
    let spec = SyntheticSpec {
        seed: config.base_seed.wrapping_add(replicate as u64),
        ..config.spec.clone()
    };
    let (data, truth) = generate(&spec)?;
    let test = generate_test(&spec, &truth, config.n_test)?;
    Ok((data, truth, test))
}

fn run_trial(config: &CellConfig, replicate: usize) -> Result<(TrialResult, Option<BoundReport>)> {
    let seed = config.base_seed.wrapping_add(replicate as u64);
    let (data, truth, test) = replicate_data(config, replicate)?;
    let fit = fit_with(
        &data,
        config.algorithm,
        config.machines,
        &config.solver,
        &config.tuning,
        Some(&truth.support),
    )?;
    let (pdr, agree) = discovery_rates(&fit.beta.nonzero_support(), &truth.support, data.p())?;
    let oracle = fit
        .oracle_reference
        .as_ref()
        .is_some_and(|r| matches_oracle(&fit.beta, &truth.support, r));
    let bounds = match &config.theory {
        Some(opts) => {
            let design = design_diagnostics(data.x(), fit.sparsity, opts.src_samples, seed)?;
            Some(bound_check(
                &fit.beta,
                &fit.active,
                &truth,
                config.spec.noise_sd,
                data.n(),
                fit.sparsity,
                opts.alpha,
                &design,
                opts.zeta,
            )?)
        }
        None => None,
    };
    let trial = TrialResult {
        replicate,
        seed,
        estimation_error: estimation_error(&fit.beta, &truth.beta_star)?,
        prediction_error: prediction_error(&test, &fit.beta)?,
        positive_discovery: pdr,
        inactive_agreement: agree,
        oracle,
        iterations: fit.iterations,
        converged: fit.converged,
        sparsity: fit.sparsity,
        bytes_total: fit.bytes_total,
        bytes_to_master: fit.bytes_to_master,
        beta_hat: fit.beta,
        compute_seconds: fit.compute_seconds,
    };
    Ok((trial, bounds))
}

/// Runs every replicate of a cell. Replicate `a` uses seed `base_seed + a`;
/// failed replicates are recorded and left out of the summary.
pub fn run_cell(config: &CellConfig) -> Result<CellResult> {
    if config.replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    config.spec.validate()?;
    config.solver.validate(config.spec.p)?;
    let run = || -> Vec<Result<(TrialResult, Option<BoundReport>)>> {
        (0..config.replicates)
            .into_par_iter()
            .map(|a| run_trial(config, a))
            .collect()
    };
    let outcomes = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    let mut bounds = Vec::new();
    for (a, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((t, b)) => {
                trials.push(t);
                bounds.extend(b);
            }
            Err(e) => {
                log::warn!("replicate {a} failed: {e}");
                failures.push(TrialFailure {
                    replicate: a,
                    seed: config.base_seed.wrapping_add(a as u64),
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(CellResult {
        summary: MetricsSummary::fold(&trials, config.replicates),
        config: config.clone(),
        trials,
        failures,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> CellConfig {
        let mut c = CellConfig::new(SyntheticSpec::new(400, 30, 3, 0), algorithm, 2, 3);
        c.replicates = 4;
        c.base_seed = 11;
        c.tuning.j_override = Some(5);
        c
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("lasso".parse::<Algorithm>().is_err());
    }

    #[test]
    fn same_seed_same_summary() {
        for alg in Algorithm::ALL {
            let a = run_cell(&small(alg)).unwrap();
            let b = run_cell(&small(alg)).unwrap();
            assert_eq!(a.trials.len(), 4);
            let strip = |mut t: Vec<TrialResult>| {
                t.iter_mut().for_each(|x| x.compute_seconds = 0.0);
                t
            };
            assert_eq!(strip(a.trials), strip(b.trials));
            assert_eq!(a.summary.aee, b.summary.aee);
            assert_eq!(a.summary.ora, b.summary.ora);
        }
    }

    #[test]
    fn oracle_implies_consistent_metrics() {
        let mut c = small(Algorithm::Esdar);
        c.spec.n = 1000;
        let r = run_cell(&c).unwrap();
        for t in r.trials.iter().filter(|t| t.oracle) {
            assert_eq!(t.positive_discovery, 1.0);
            assert_eq!(t.inactive_agreement, 1.0);
        }
        assert!(r.summary.ora > 0.0);
    }

    #[test]
    fn noiseless_orthogonal_like_cell_is_exact() {
        let mut c = small(Algorithm::Esdar);
        c.spec.noise_sd = 0.0;
        c.spec.n = 2000;
        c.replicates = 1;
        let r = run_cell(&c).unwrap();
        assert!(r.summary.aee.mean < 1e-20);
        assert_eq!(r.summary.ora, 1.0);
    }

    #[test]
    fn failures_are_recorded_per_trial() {
        let mut c = small(Algorithm::Cesdar);
        c.machines = 1000;
        let r = run_cell(&c).unwrap();
        assert_eq!(r.failures.len(), 4);
        assert_eq!(r.failures[0].kind, "too_many_machines");
        assert_eq!(r.summary.completed, 0);
    }
}
