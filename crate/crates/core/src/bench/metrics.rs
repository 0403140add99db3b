use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sdar::root_find_local;
use crate::sparse::SparseCoefficients;

/// Coefficients counted as reproducing the oracle fit when within this
/// distance in the max norm.
pub const ORACLE_TOL: f64 = 1e-8;

/// `||beta_hat - beta_star||_2^2`.
pub fn estimation_error(beta_hat: &SparseCoefficients, beta_star: &SparseCoefficients) -> Result<f64> {
    if beta_hat.dim() != beta_star.dim() {
        return Err(Error::DimensionMismatch {
            context: "estimation error",
            expected: beta_star.dim(),
            found: beta_hat.dim(),
        });
    }
    let (a, b) = (beta_hat.to_dense(), beta_star.to_dense());
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `(1/n_test) ||X_test beta_hat - y_test||^2`.
pub fn prediction_error(test: &Dataset, beta_hat: &SparseCoefficients) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::EmptyTestSet);
    }
    test.mse(beta_hat)
}

/// `(|A_hat ∩ A*| / |A*|, |I_hat ∩ I*| / |I*|)`.
///
/// The second term is reported as AFDR in the literature this follows, but
/// it is the share of truly inactive coordinates left inactive.
pub fn discovery_rates(support_hat: &[usize], a_star: &[usize], p: usize) -> Result<(f64, f64)> {
    if let Some(&i) = support_hat.iter().chain(a_star).find(|&&i| i >= p) {
        return Err(Error::IndexOutOfRange { index: i, bound: p });
    }
    let mut hat = vec![false; p];
    let mut star = vec![false; p];
    support_hat.iter().for_each(|&i| hat[i] = true);
    a_star.iter().for_each(|&i| star[i] = true);
    let n_star = star.iter().filter(|s| **s).count();
    if n_star == 0 {
        return Err(Error::EmptySupport("true active set"));
    }
    if n_star == p {
        return Err(Error::EmptySupport("true inactive set"));
    }
    let hits = hat.iter().zip(&star).filter(|(h, s)| **h && **s).count();
    let quiet = hat.iter().zip(&star).filter(|(h, s)| !**h && !**s).count();
    Ok((hits as f64 / n_star as f64, quiet as f64 / (p - n_star) as f64))
}

/// Whether `beta_hat` has support exactly `a_star` and matches `reference`
/// within [`ORACLE_TOL`].
pub fn matches_oracle(beta_hat: &SparseCoefficients, a_star: &[usize], reference: &SparseCoefficients) -> bool {
    if beta_hat.nonzero_support() != a_star {
        return false;
    }
    a_star
        .iter()
        .all(|&i| (beta_hat.get(i) - reference.get(i)).abs() <= ORACLE_TOL)
}

/// Support equals `a_star` and the values equal the full-data least-squares
/// fit on `a_star`.
pub fn oracle_indicator(data: &Dataset, beta_hat: &SparseCoefficients, a_star: &[usize]) -> Result<bool> {
    if beta_hat.nonzero_support() != a_star {
        return Ok(false);
    }
    let oracle = root_find_local(data, a_star)?;
    Ok(matches_oracle(beta_hat, a_star, &oracle))
}

/// One replicate's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub replicate: usize,
    pub seed: u64,
    pub estimation_error: f64,
    pub prediction_error: f64,
    pub positive_discovery: f64,
    pub inactive_agreement: f64,
    pub oracle: bool,
    pub iterations: usize,
    pub converged: bool,
    /// Sparsity level used (the selected one for the adaptive sweep).
    pub sparsity: usize,
    pub bytes_total: usize,
    pub bytes_to_master: usize,
    pub beta_hat: SparseCoefficients,
    /// Compute time with worker rounds charged at their slowest worker.
    #[serde(default)]
    pub compute_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub aee: MeanSd,
    pub ape: MeanSd,
    pub apdr: f64,
    /// Mean inactive-set agreement rate (reported as AFDR).
    pub afdr: f64,
    pub ora: f64,
    pub ani: f64,
    /// Mean compute seconds; excluded from the deterministic outputs.
    #[serde(skip)]
    pub art: f64,
    pub replicates: usize,
    pub completed: usize,
}

impl MetricsSummary {
    /// Averages over the completed trials, in the order given.
    pub fn fold(trials: &[TrialResult], replicates: usize) -> Self {
        let mean = |f: &dyn Fn(&TrialResult) -> f64| -> f64 {
            if trials.is_empty() {
                f64::NAN
            } else {
                trials.iter().map(f).sum::<f64>() / trials.len() as f64
            }
        };
        let aee: Vec<f64> = trials.iter().map(|t| t.estimation_error).collect();
        let ape: Vec<f64> = trials.iter().map(|t| t.prediction_error).collect();
        Self {
            aee: MeanSd::of(&aee),
            ape: MeanSd::of(&ape),
            apdr: mean(&|t| t.positive_discovery),
            afdr: mean(&|t| t.inactive_agreement),
            ora: mean(&|t| if t.oracle { 1.0 } else { 0.0 }),
            ani: mean(&|t| t.iterations as f64),
            art: mean(&|t| t.compute_seconds),
            replicates,
            completed: trials.len(),
        }
    }
}
