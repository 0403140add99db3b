//! Dense linear algebra used by the solvers.
//!
//! Everything here accumulates in a fixed order (row by row, left to right)
//! so that identical inputs give bitwise-identical outputs. The single-machine
//! and one-machine distributed solvers rely on that to agree exactly.

use crate::error::{Error, Result};

/// Largest system `spd_solve` accepts. Active sets are tens of columns wide.
pub const MAX_SOLVE_DIM: usize = 4096;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "matrix" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Copies the contiguous row block `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.rows {
            return Err(Error::IndexOutOfRange {
                index: start + count,
                bound: self.rows,
            });
        }
        Ok(Self {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        })
    }

    /// Copies the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    bound: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        })
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// `A x`, accumulated left to right along each row.
pub fn matvec(a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::DimensionMismatch {
            context: "matvec",
            expected: a.cols,
            found: x.len(),
        });
    }
    Ok((0..a.rows)
        .map(|r| {
            let mut acc = 0.0;
            for (aij, xj) in a.row(r).iter().zip(x) {
                acc += aij * xj;
            }
            acc
        })
        .collect())
}

/// `X_A' X_A / scale` for the column subset `cols`.
///
/// Only the upper triangle is accumulated; the lower triangle is a mirror, so
/// the result is exactly symmetric.
pub fn gram_submatrix(x: &DenseMatrix, cols: &[usize], scale: f64) -> Result<DenseMatrix> {
    check_columns(x, cols)?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("gram scale must be positive, got {scale}")));
    }
    let k = cols.len();
    let mut acc = vec![0.0; k * k];
    let mut buf = vec![0.0; k];
    for r in 0..x.rows {
        let row = x.row(r);
        for (b, &c) in buf.iter_mut().zip(cols) {
            *b = row[c];
        }
        for a in 0..k {
            let va = buf[a];
            for b in a..k {
                acc[a * k + b] += va * buf[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = acc[a * k + b] / scale;
            acc[a * k + b] = v;
            acc[b * k + a] = v;
        }
    }
    Ok(DenseMatrix {
        rows: k,
        cols: k,
        data: acc,
    })
}

/// `X_A' v / scale` for the column subset `cols`.
pub fn xt_vec_submatrix(x: &DenseMatrix, cols: &[usize], v: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_columns(x, cols)?;
    if v.len() != x.rows {
        return Err(Error::DimensionMismatch {
            context: "X_A' v",
            expected: x.rows,
            found: v.len(),
        });
    }
    let mut out = vec![0.0; cols.len()];
    for (r, &vr) in v.iter().enumerate() {
        let row = x.row(r);
        for (o, &c) in out.iter_mut().zip(cols) {
            *o += row[c] * vr;
        }
    }
    for o in &mut out {
        *o /= scale;
    }
    Ok(out)
}

/// `X' v / scale` over all columns.
pub fn xt_vec(x: &DenseMatrix, v: &[f64], scale: f64) -> Result<Vec<f64>> {
    if v.len() != x.rows {
        return Err(Error::DimensionMismatch {
            context: "X' v",
            expected: x.rows,
            found: v.len(),
        });
    }
    let mut out = vec![0.0; x.cols];
    for (r, &vr) in v.iter().enumerate() {
        for (o, &xij) in out.iter_mut().zip(x.row(r)) {
            *o += xij * vr;
        }
    }
    for o in &mut out {
        *o /= scale;
    }
    Ok(out)
}

fn check_columns(x: &DenseMatrix, cols: &[usize]) -> Result<()> {
    match cols.iter().find(|&&c| c >= x.cols) {
        Some(&c) => Err(Error::IndexOutOfRange {
            index: c,
            bound: x.cols,
        }),
        None => Ok(()),
    }
}

/// Solution of a symmetric positive-definite system.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// True when the plain factorization failed and diagonal jitter was added.
    pub jittered: bool,
}

/// Lower-triangular Cholesky factor, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a + shift*I`. Returns `None` when a pivot is not safely positive.
    pub fn factor(a: &DenseMatrix, shift: f64) -> Option<Self> {
        let n = a.rows;
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let floor = f64::EPSILON * (n.max(1) as f64) * max_diag.max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.get(i, j);
                if i == j {
                    sum += shift;
                }
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > floor) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * z[k];
            }
            z[i] = sum / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = z[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` via Cholesky.
///
/// On factorization failure the solve is retried once with
/// `1e-10 * trace(A) / dim` added to the diagonal and the result is flagged.
/// Persistent failure yields [`Error::SingularSystem`] with an empty active
/// set; callers that know the active set attach it.
pub fn spd_solve(a: &DenseMatrix, b: &[f64]) -> Result<SpdSolution> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::DimensionMismatch {
            context: "spd_solve square",
            expected: n,
            found: a.cols,
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "spd_solve rhs",
            expected: n,
            found: b.len(),
        });
    }
    if n > MAX_SOLVE_DIM {
        return Err(Error::SystemTooLarge {
            dim: n,
            cap: MAX_SOLVE_DIM,
        });
    }
    if a.data.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "spd_solve" });
    }
    if n == 0 {
        return Ok(SpdSolution {
            x: Vec::new(),
            jittered: false,
        });
    }
    if let Some(f) = Cholesky::factor(a, 0.0) {
        return Ok(SpdSolution {
            x: f.solve(b),
            jittered: false,
        });
    }
    let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
    let jitter = 1e-10 * trace / n as f64;
    match Cholesky::factor(a, jitter) {
        Some(f) if jitter > 0.0 => Ok(SpdSolution {
            x: f.solve(b),
            jittered: true,
        }),
        _ => Err(Error::SingularSystem { active: Vec::new() }),
    }
}
