//! Gaussian-design simulation data.
//!
//! All randomness comes from ChaCha8 seeded with the experiment seed. Each
//! consumer reads its own ChaCha stream so adding draws to one never shifts
//! another:
//!
//! | stream | consumer |
//! |-------:|----------|
//! | 0 | training design, true support, coefficients, noise |
//! | 1 | train/test row split |
//! | 2 | appended noise features during CSV ingestion |
//! | 3 | held-out test rows |

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::sparse::SparseCoefficients;

pub const STREAM_DATASET: u64 = 0;
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_NOISE_FEATURES: u64 = 2;
pub const STREAM_TEST: u64 = 3;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_ratio() -> f64 {
    20.0
}

fn default_tau() -> f64 {
    0.5
}

fn default_noise_sd() -> f64 {
    1.0
}

/// One simulated design: rows `N(0, I_p)`, `s` nonzero coefficients drawn
/// from `Uniform(r_lo, R * r_lo)` with `r_lo = sqrt(2 log p / N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    #[serde(default = "default_ratio")]
    pub signal_ratio: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the coefficient range `(lo, hi)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_bounds: Option<(f64, f64)>,
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, s: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            s,
            signal_ratio: default_ratio(),
            tau: default_tau(),
            noise_sd: default_noise_sd(),
            seed,
            beta_bounds: None,
        }
    }

    /// `r_* = sqrt(2 log p / N)`.
    pub fn r_lower(&self) -> f64 {
        (2.0 * (self.p as f64).ln() / self.n as f64).sqrt()
    }

    /// `r^* = R * r_*`.
    pub fn r_upper(&self) -> f64 {
        self.signal_ratio * self.r_lower()
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.beta_bounds.unwrap_or((self.r_lower(), self.r_upper()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Config("synthetic N and p must be positive".into()));
        }
        if self.s > self.p {
            return Err(Error::Config(format!("s = {} exceeds p = {}", self.s, self.p)));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau = {} outside (0, 1]", self.tau)));
        }
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("invalid coefficient range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// The true coefficients and support behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_star: SparseCoefficients,
    pub support: Vec<usize>,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Result<DenseMatrix> {
    let data: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::new(n, p, data)
}

fn response(x: &DenseMatrix, beta: &SparseCoefficients, noise_sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let mut fit = 0.0;
            for (j, b) in beta.iter() {
                fit += row[j] * b;
            }
            let z: f64 = StandardNormal.sample(rng);
            fit + noise_sd * z
        })
        .collect()
}

/// Draws a training dataset and its ground truth. Identical specs give
/// bitwise-identical output.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_DATASET);
    let x = gaussian_rows(&mut rng, spec.n, spec.p)?;
    let mut support = sample(&mut rng, spec.p, spec.s).into_vec();
    support.sort_unstable();
    let (lo, hi) = spec.bounds();
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    let values: Vec<f64> = support.iter().map(|_| rng.sample(dist)).collect();
    let beta_star = SparseCoefficients::new(spec.p, support.clone(), values)?;
    let y = response(&x, &beta_star, spec.noise_sd, &mut rng);
    let data = Dataset::with_default_names(x, y)?;
    Ok((data, GroundTruth { beta_star, support }))
}

/// Fresh rows from the same model, for prediction error.
pub fn generate_test(spec: &SyntheticSpec, truth: &GroundTruth, n_test: usize) -> Result<Dataset> {
    if n_test == 0 {
        return Err(Error::EmptyTestSet);
    }
    let mut rng = rng_for(spec.seed, STREAM_TEST);
    let x = gaussian_rows(&mut rng, n_test, spec.p)?;
    let y = response(&x, &truth.beta_star, spec.noise_sd, &mut rng);
    let names = (0..spec.p).map(|i| format!("x{i}")).collect();
    Dataset::evaluation_only(x, y, names, None)
}
