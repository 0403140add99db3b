//! Datasets: the dense design matrix, response, and standardization state.

mod cache;
mod ingest;
mod synthetic;

pub use cache::{decode_dataset, encode_dataset, read_cache, write_cache, CACHE_MAGIC};
pub use ingest::{ingest_csv, split, DummyEncoding, IngestOptions};
pub use synthetic::{
    generate, generate_test, rng_for, GroundTruth, SyntheticSpec, STREAM_DATASET, STREAM_NOISE_FEATURES,
    STREAM_SPLIT, STREAM_TEST,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::sparse::SparseCoefficients;

/// Per-column affine map recorded by standardization: `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
    /// `0.0` / `1.0` when the response was left unscaled.
    pub response_mean: f64,
    pub response_scale: f64,
}

impl Standardization {
    pub fn response_standardized(&self) -> bool {
        self.response_mean != 0.0 || self.response_scale != 1.0
    }
}

/// Dense regression data `y = X beta + eps`.
///
/// Every column has nonzero norm; the per-column curvature `||x_i||^2 / N`
/// is computed once at construction and reused by every solver iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    y: Vec<f64>,
    feature_names: Vec<String>,
    standardization: Option<Standardization>,
    curvature: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let data = Self::assemble(x, y, feature_names, None)?;
        data.check_columns()?;
        Ok(data)
    }

    /// Names columns `x0, x1, ...`.
    pub fn with_default_names(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        let names = (0..x.cols()).map(|i| format!("x{i}")).collect();
        Self::new(x, y, names)
    }

    pub fn with_standardization(mut self, st: Option<Standardization>) -> Result<Self> {
        if let Some(s) = &st {
            if s.column_means.len() != self.p() || s.column_scales.len() != self.p() {
                return Err(Error::DimensionMismatch {
                    context: "standardization stats",
                    expected: self.p(),
                    found: s.column_means.len().min(s.column_scales.len()),
                });
            }
        }
        self.standardization = st;
        Ok(self)
    }

    /// Construction for held-out evaluation data, where a column may be
    /// identically zero (e.g. a dummy level absent from the test rows).
    /// Such datasets are only valid for prediction, not for fitting.
    pub(crate) fn evaluation_only(
        x: DenseMatrix,
        y: Vec<f64>,
        feature_names: Vec<String>,
        standardization: Option<Standardization>,
    ) -> Result<Self> {
        Self::assemble(x, y, feature_names, standardization)
    }

    fn assemble(
        x: DenseMatrix,
        y: Vec<f64>,
        feature_names: Vec<String>,
        standardization: Option<Standardization>,
    ) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: x.rows(),
                found: y.len(),
            });
        }
        if feature_names.len() != x.cols() {
            return Err(Error::DimensionMismatch {
                context: "feature names",
                expected: x.cols(),
                found: feature_names.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "response" });
        }
        let n = x.rows().max(1) as f64;
        let mut sq = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (s, v) in sq.iter_mut().zip(x.row(r)) {
                *s += v * v;
            }
        }
        let curvature = sq.into_iter().map(|s| s / n).collect();
        Ok(Self {
            x,
            y,
            feature_names,
            standardization,
            curvature,
        })
    }

    fn check_columns(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::Config("dataset has no rows".into()));
        }
        match self.curvature.iter().position(|g| !(*g > 0.0)) {
            Some(index) => Err(Error::DegenerateColumn {
                index,
                name: self.feature_names[index].clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization.is_some()
    }

    /// `g_i = ||x_i||^2 / N`.
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// Contiguous row block as a standalone dataset (a machine's shard).
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Self> {
        let x = self.x.row_block(start, count)?;
        let y = self.y[start..start + count].to_vec();
        let data = Self::assemble(x, y, self.feature_names.clone(), self.standardization.clone())?;
        data.check_columns()?;
        Ok(data)
    }

    /// `y - X beta`, each row accumulated over the support in index order.
    pub fn residual(&self, beta: &SparseCoefficients) -> Result<Vec<f64>> {
        if beta.dim() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "coefficients vs features",
                expected: self.p(),
                found: beta.dim(),
            });
        }
        Ok((0..self.n())
            .map(|r| {
                let row = self.x.row(r);
                let mut fit = 0.0;
                for (j, b) in beta.iter() {
                    fit += row[j] * b;
                }
                self.y[r] - fit
            })
            .collect())
    }

    /// `(1/N) ||y - X beta||^2`.
    pub fn mse(&self, beta: &SparseCoefficients) -> Result<f64> {
        let r = self.residual(beta)?;
        Ok(r.iter().map(|v| v * v).sum::<f64>() / self.n() as f64)
    }

    /// The least-squares loss `(1/2N) ||X beta - y||^2`.
    pub fn loss(&self, beta: &SparseCoefficients) -> Result<f64> {
        Ok(0.5 * self.mse(beta)?)
    }

    /// Centers and scales every column (and the response, if asked) to mean
    /// zero and population variance one. Applying it to already standardized
    /// data composes the recorded statistics.
    pub fn standardize(&self, response: bool) -> Result<Self> {
        let skip = vec![false; self.p()];
        self.standardize_except(response, &skip)
    }

    pub(crate) fn standardize_except(&self, response: bool, skip: &[bool]) -> Result<Self> {
        let (n, p) = (self.n(), self.p());
        let nf = n as f64;
        let mut means = vec![0.0; p];
        for r in 0..n {
            for (m, v) in means.iter_mut().zip(self.x.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= nf);
        let mut vars = vec![0.0; p];
        for r in 0..n {
            for ((s, v), m) in vars.iter_mut().zip(self.x.row(r)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let mut scales: Vec<f64> = vars.iter().map(|s| (s / nf).sqrt()).collect();
        for j in 0..p {
            if skip[j] {
                means[j] = 0.0;
                scales[j] = 1.0;
            } else if !(scales[j] > 0.0) {
                return Err(Error::ConstantColumn(self.feature_names[j].clone()));
            }
        }
        let (y_mean, y_scale) = if response {
            let m = self.y.iter().sum::<f64>() / nf;
            let s = (self.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf).sqrt();
            if !(s > 0.0) {
                return Err(Error::ConstantColumn("response".into()));
            }
            (m, s)
        } else {
            (0.0, 1.0)
        };
        let stats = Standardization {
            column_means: means,
            column_scales: scales,
            response_mean: y_mean,
            response_scale: y_scale,
        };
        let mut out = self.apply_stats(&stats)?;
        out.standardization = Some(match &self.standardization {
            None => stats,
            Some(prev) => compose(prev, &stats),
        });
        out.check_columns()?;
        Ok(out)
    }

    /// Applies externally computed statistics (e.g. a training split's) to
    /// this data. The result may contain zero columns and is marked with the
    /// given statistics.
    pub(crate) fn apply_stats(&self, stats: &Standardization) -> Result<Self> {
        let mut x = self.x.clone();
        let p = self.p();
        for (idx, v) in x.data_mut().iter_mut().enumerate() {
            let j = idx % p;
            *v = (*v - stats.column_means[j]) / stats.column_scales[j];
        }
        let y = self
            .y
            .iter()
            .map(|v| (v - stats.response_mean) / stats.response_scale)
            .collect();
        Self::assemble(x, y, self.feature_names.clone(), Some(stats.clone()))
    }

    /// Inverts the recorded standardization, returning raw-scale data.
    pub(crate) fn destandardize(&self) -> Result<Self> {
        let Some(st) = &self.standardization else {
            return Ok(self.clone());
        };
        let mut x = self.x.clone();
        let p = self.p();
        for (idx, v) in x.data_mut().iter_mut().enumerate() {
            let j = idx % p;
            *v = *v * st.column_scales[j] + st.column_means[j];
        }
        let y = self
            .y
            .iter()
            .map(|v| v * st.response_scale + st.response_mean)
            .collect();
        Self::assemble(x, y, self.feature_names.clone(), None)
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows)?;
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Self::assemble(x, y, self.feature_names.clone(), self.standardization.clone())
    }

    pub(crate) fn validated(self) -> Result<Self> {
        self.check_columns()?;
        Ok(self)
    }
}

fn compose(first: &Standardization, second: &Standardization) -> Standardization {
    // z2 = ((x - m1)/s1 - m2)/s2 = (x - (m1 + s1 m2)) / (s1 s2)
    let column_means = first
        .column_means
        .iter()
        .zip(&first.column_scales)
        .zip(&second.column_means)
        .map(|((m1, s1), m2)| m1 + s1 * m2)
        .collect();
    let column_scales = first
        .column_scales
        .iter()
        .zip(&second.column_scales)
        .map(|(s1, s2)| s1 * s2)
        .collect();
    Standardization {
        column_means,
        column_scales,
        response_mean: first.response_mean + first.response_scale * second.response_mean,
        response_scale: first.response_scale * second.response_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 4.0]]).unwrap();
        Dataset::with_default_names(x, vec![1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn rejects_zero_column() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let err = Dataset::with_default_names(x, vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateColumn { index: 1, .. }));
    }

    #[test]
    fn rejects_length_mismatch() {
        let x = DenseMatrix::identity(2);
        assert!(Dataset::with_default_names(x.clone(), vec![1.0]).is_err());
        assert!(Dataset::new(x, vec![1.0, 2.0], vec!["a".into()]).is_err());
    }

    #[test]
    fn curvature_is_column_norm_over_n() {
        let d = small();
        assert!((d.curvature()[0] - (1.0 + 9.0 + 0.25) / 3.0).abs() < 1e-15);
        assert!((d.curvature()[1] - (4.0 + 1.0 + 16.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_moments_and_idempotence() {
        let d = small().standardize(true).unwrap();
        for j in 0..2 {
            let col = d.x().column(j);
            let m = col.iter().sum::<f64>() / 3.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 3.0;
            assert!(m.abs() <= 1e-12);
            assert!((v - 1.0).abs() <= 1e-12);
        }
        let again = d.standardize(true).unwrap();
        for (a, b) in d.x().data().iter().zip(again.x().data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let raw = again.destandardize().unwrap();
        for (a, b) in raw.x().data().iter().zip(small().x().data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap();
        let d = Dataset::with_default_names(x, vec![0.0, 1.0]).unwrap();
        assert!(matches!(d.standardize(false), Err(Error::ConstantColumn(name)) if name == "x0"));
    }
}
