//! Error-bound diagnostics: noise levels, mutual coherence, sparse spectrum
//! constants, and a per-trial check of the resulting bounds.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{rng_for, GroundTruth};
use crate::error::{Error, Result};
use crate::linalg::{gram_submatrix, DenseMatrix};
use crate::sparse::SparseCoefficients;

/// Designs with at most this many columns get exact spectrum constants.
pub const EXACT_SRC_MAX_P: usize = 14;

/// Largest absolute correlation between two distinct columns.
pub fn mutual_coherence(x: &DenseMatrix) -> Result<f64> {
    let p = x.cols();
    if p < 2 {
        return Err(Error::Config("mutual coherence needs at least two columns".into()));
    }
    let cols: Vec<usize> = (0..p).collect();
    let gram = gram_submatrix(x, &cols, 1.0)?;
    coherence_of_gram(&gram)
}

fn coherence_of_gram(gram: &DenseMatrix) -> Result<f64> {
    let p = gram.rows();
    let norms: Vec<f64> = (0..p).map(|i| gram.get(i, i).sqrt()).collect();
    if let Some(i) = norms.iter().position(|n| !(*n > 0.0)) {
        return Err(Error::DegenerateColumn {
            index: i,
            name: format!("x{i}"),
        });
    }
    let mut mu = 0.0f64;
    for i in 0..p {
        for j in i + 1..p {
            mu = mu.max(gram.get(i, j).abs() / (norms[i] * norms[j]));
        }
    }
    Ok(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryBounds {
    /// `sigma * sqrt(T) * sqrt(2 log(p/alpha) / N)`.
    pub eta1: f64,
    /// `sigma * sqrt(2 log(p/alpha) / N)`.
    pub eta2: f64,
    /// `(1 + 2T mu) T mu / (1 - (T-1) mu) + 2T mu`; `None` when
    /// `(T-1) mu >= 1`.
    pub gamma_mu: Option<f64>,
}

fn eta2(sigma: f64, p: usize, n: usize, alpha: f64) -> f64 {
    sigma * (2.0 * (p as f64 / alpha).ln() / n as f64).sqrt()
}

/// `(1 + 2T mu) T mu / (1 - (T-1) mu) + 2T mu`.
pub fn gamma_mu(t: usize, mu: f64) -> Result<f64> {
    let t = t as f64;
    let product = (t - 1.0) * mu;
    if product >= 1.0 {
        return Err(Error::GammaUndefined { product });
    }
    Ok((1.0 + 2.0 * t * mu) * t * mu / (1.0 - product) + 2.0 * t * mu)
}

/// `16 / (3 (1 - gamma_mu)) + 5/3`.
pub fn c_mu(gamma_mu: f64) -> f64 {
    16.0 / (3.0 * (1.0 - gamma_mu)) + 5.0 / 3.0
}

pub fn theory_bounds(sigma: f64, t: usize, p: usize, n: usize, alpha: f64, mu: f64) -> Result<TheoryBounds> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!("alpha = {alpha} outside (0, 1/2)")));
    }
    if t == 0 || p == 0 || n == 0 {
        return Err(Error::Config("T, p and N must be positive".into()));
    }
    let e2 = eta2(sigma, p, n, alpha);
    Ok(TheoryBounds {
        eta1: (t as f64).sqrt() * e2,
        eta2: e2,
        gamma_mu: gamma_mu(t, mu).ok(),
    })
}

/// Sparse spectrum constants of order `T`: extreme eigenvalues of
/// `X_A'X_A/N` over `|A| = T`, and `theta_{T,T}`, the largest spectral norm
/// of `X_A'X_B/N` over disjoint `A`, `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrcConstants {
    pub order: usize,
    pub c_minus: f64,
    pub c_plus: f64,
    pub theta: f64,
    /// False when the extremes come from random subsets.
    pub exact: bool,
    /// Subsets (or subset pairs) examined.
    pub samples: usize,
}

/// Quantities derived from [`SrcConstants`]: the contraction `gamma` and the
/// constants `b1`, `b2`, `c = b1 + b2` of the l2 bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Constants {
    pub gamma: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
}

impl SrcConstants {
    /// `None` unless `gamma` lands in `[0, 1)`. At `theta = 0` the ratio
    /// `gamma / theta` in `b2` is taken at its limit.
    pub fn l2_constants(&self) -> Option<L2Constants> {
        let (th, cm) = (self.theta, self.c_minus);
        if !(th >= 0.0 && cm > 0.0) {
            return None;
        }
        let r2 = 1.0 + std::f64::consts::SQRT_2;
        let gamma_per_theta = (2.0 + r2 * th) / (cm * cm) + r2 / cm;
        let gamma = gamma_per_theta * th;
        if !(gamma < 1.0) {
            return None;
        }
        let b1 = 1.0 + th / cm;
        let b2 = gamma_per_theta / (1.0 - gamma) * b1 + 1.0 / cm;
        Some(L2Constants { gamma, b1, b2, c: b1 + b2 })
    }
}

fn submatrix(gram: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| gram.get(rows[i], cols[j]))
}

struct Extremes {
    c_minus: f64,
    c_plus: f64,
    theta: f64,
    samples: usize,
}

impl Extremes {
    fn new() -> Self {
        Self {
            c_minus: f64::INFINITY,
            c_plus: 0.0,
            theta: 0.0,
            samples: 0,
        }
    }

    fn visit(&mut self, gram: &DenseMatrix, a: &[usize], b: &[usize]) {
        let eig = submatrix(gram, a, a).symmetric_eigenvalues();
        self.c_minus = self.c_minus.min(eig.min());
        self.c_plus = self.c_plus.max(eig.max());
        if !b.is_empty() {
            let sv = submatrix(gram, a, b).singular_values();
            self.theta = self.theta.max(sv.max());
        }
        self.samples += 1;
    }
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic
/// order; false after the last one.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Spectrum constants of order `t` from the scaled Gram matrix `X'X/N`.
/// Exhaustive for `p <= 14`; otherwise `samples` random subset pairs drawn
/// from `seed`, in which case `c_minus` is an upper estimate and `c_plus`,
/// `theta` lower estimates.
pub fn src_constants(gram: &DenseMatrix, t: usize, samples: usize, seed: u64) -> Result<SrcConstants> {
    let p = gram.rows();
    if t == 0 || t > p {
        return Err(Error::InvalidSparsity { sparsity: t, dim: p });
    }
    let tb = t.min(p - t);
    let mut ext = Extremes::new();
    let exact = p <= EXACT_SRC_MAX_P;
    if exact {
        let mut a: Vec<usize> = (0..t).collect();
        loop {
            let rest: Vec<usize> = (0..p).filter(|i| !a.contains(i)).collect();
            if tb == 0 {
                ext.visit(gram, &a, &[]);
            } else {
                let mut bi: Vec<usize> = (0..tb).collect();
                loop {
                    let b: Vec<usize> = bi.iter().map(|&i| rest[i]).collect();
                    ext.visit(gram, &a, &b);
                    if !next_combination(&mut bi, rest.len()) {
                        break;
                    }
                }
            }
            if !next_combination(&mut a, p) {
                break;
            }
        }
    } else {
        let mut rng = rng_for(seed, 0);
        for _ in 0..samples.max(1) {
            let picked = sample(&mut rng, p, t + tb).into_vec();
            let (a, b) = picked.split_at(t);
            ext.visit(gram, a, b);
        }
    }
    Ok(SrcConstants {
        order: t,
        c_minus: ext.c_minus,
        c_plus: ext.c_plus,
        theta: ext.theta,
        exact,
        samples: ext.samples,
    })
}

/// Design-level quantities shared by every trial on one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub mu: f64,
    pub src: Option<SrcConstants>,
}

/// Mutual coherence and, if `src_samples > 0`, spectrum constants of order
/// `t`, from one pass over the Gram matrix.
pub fn design_diagnostics(x: &DenseMatrix, t: usize, src_samples: usize, seed: u64) -> Result<DesignDiagnostics> {
    let cols: Vec<usize> = (0..x.cols()).collect();
    let gram = gram_submatrix(x, &cols, x.rows() as f64)?;
    let mu = coherence_of_gram(&gram)?;
    let src = if src_samples > 0 || x.cols() <= EXACT_SRC_MAX_P {
        Some(src_constants(&gram, t, src_samples, seed)?)
    } else {
        None
    };
    Ok(DesignDiagnostics { mu, src })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l2_error: f64,
    pub linf_error: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub mu: f64,
    pub gamma_mu: Option<f64>,
    /// `T mu <= 1/4` and `T >= s`.
    pub coherence_premise: bool,
    /// `c_mu * eta2`, when the coherence premise holds.
    pub linf_bound: Option<f64>,
    pub linf_holds: Option<bool>,
    pub l2_constants: Option<L2Constants>,
    /// `c * eta1`, when `T >= s` and `gamma` lies in `[0, 1)`.
    pub l2_bound: Option<f64>,
    pub l2_holds: Option<bool>,
    pub constants_estimated: bool,
    /// Final active set contains the true support.
    pub covers_support: bool,
    /// Some minimum-signal condition for support coverage holds.
    pub signal_premise: bool,
    /// `Some(covers_support)` when `signal_premise` holds.
    pub covers_verdict: Option<bool>,
}

/// Checks a fitted coefficient vector against the l2 and l-infinity error
/// bounds. Bounds whose premises fail are left unset; the report is then
/// informational.
#[allow(clippy::too_many_arguments)]
pub fn bound_check(
    beta_hat: &SparseCoefficients,
    active: &[usize],
    truth: &GroundTruth,
    sigma: f64,
    n: usize,
    t: usize,
    alpha: f64,
    design: &DesignDiagnostics,
    zeta: f64,
) -> Result<BoundReport> {
    let p = beta_hat.dim();
    let (hat, star) = (beta_hat.to_dense(), truth.beta_star.to_dense());
    if hat.len() != star.len() {
        return Err(Error::DimensionMismatch {
            context: "bound check",
            expected: star.len(),
            found: hat.len(),
        });
    }
    let diff: Vec<f64> = hat.iter().zip(&star).map(|(a, b)| a - b).collect();
    let l2_error = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linf_error = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bounds = theory_bounds(sigma, t, p, n, alpha, design.mu)?;
    let s = truth.support.len();
    let coherence_premise = t >= s && t as f64 * design.mu <= 0.25 && bounds.gamma_mu.is_some_and(|g| g < 1.0);
    let linf_bound = bounds.gamma_mu.filter(|_| coherence_premise).map(|g| c_mu(g) * bounds.eta2);
    let l2_constants = design.src.as_ref().and_then(|c| c.l2_constants());
    let l2_bound = l2_constants.filter(|_| t >= s).map(|c| c.c * bounds.eta1);

    let beta_min = truth
        .beta_star
        .iter()
        .filter(|(_, v)| *v != 0.0)
        .fold(f64::INFINITY, |m, (_, v)| m.min(v.abs()));
    let mut signal_premise = false;
    if let (true, Some(g)) = (coherence_premise, bounds.gamma_mu) {
        signal_premise |= beta_min >= 4.0 * bounds.eta2 / ((1.0 - g) * zeta);
    }
    if let (Some(c), Some(src)) = (l2_constants, design.src.as_ref()) {
        // gamma / ((1 - gamma) theta), finite at theta = 0
        let ratio = (c.b2 - 1.0 / src.c_minus) / c.b1;
        signal_premise |= beta_min >= bounds.eta1 * ratio / zeta;
    }
    let covers_support = truth.support.iter().all(|i| active.contains(i));
    Ok(BoundReport {
        l2_error,
        linf_error,
        eta1: bounds.eta1,
        eta2: bounds.eta2,
        mu: design.mu,
        gamma_mu: bounds.gamma_mu,
        coherence_premise,
        linf_holds: linf_bound.map(|b| linf_error <= b),
        linf_bound,
        l2_constants,
        l2_holds: l2_bound.map(|b| l2_error <= b),
        l2_bound,
        constants_estimated: design.src.as_ref().is_some_and(|c| !c.exact),
        covers_support,
        signal_premise,
        covers_verdict: signal_premise.then_some(covers_support),
    })
}
