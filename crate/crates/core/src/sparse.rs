use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A length-`dim` coefficient vector stored by its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCoefficients {
    dim: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCoefficients {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from a strictly increasing support. Explicit zeros are kept;
    /// call [`canonicalize`](Self::canonicalize) to drop them.
    pub fn new(dim: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "sparse support/values",
                expected: support.len(),
                found: values.len(),
            });
        }
        if let Some(&i) = support.iter().find(|&&i| i >= dim) {
            return Err(Error::IndexOutOfRange { index: i, bound: dim });
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format {
                what: "sparse support",
                detail: "indices must be strictly increasing".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "sparse values",
            });
        }
        Ok(Self { dim, support, values })
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (support, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self {
            dim: dense.len(),
            support,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of stored entries with a nonzero value.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.support.binary_search(&i) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// Drops stored zeros.
    pub fn canonicalize(mut self) -> Self {
        let mut k = 0;
        for j in 0..self.support.len() {
            if self.values[j] != 0.0 {
                self.support[k] = self.support[j];
                self.values[k] = self.values[j];
                k += 1;
            }
        }
        self.support.truncate(k);
        self.values.truncate(k);
        self
    }

    /// Indices carrying a nonzero value.
    pub fn nonzero_support(&self) -> Vec<usize> {
        self.iter().filter(|(_, v)| *v != 0.0).map(|(i, _)| i).collect()
    }

    pub(crate) fn from_parts_unchecked(dim: usize, support: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(support.len(), values.len());
        Self { dim, support, values }
    }
}
