//! CSV ingestion and train/test splitting for real data.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::synthetic::{rng_for, STREAM_NOISE_FEATURES, STREAM_SPLIT};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// How a categorical column becomes indicator columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DummyEncoding {
    /// One indicator per level except the first (sorted) level.
    #[default]
    DropFirst,
    /// One indicator per level.
    KeepAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub response: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub encoding: DummyEncoding,
    #[serde(default)]
    pub n_noise_features: usize,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "yes")]
    pub standardize: bool,
    /// Scale the response along with the design (only when `standardize`).
    #[serde(default = "yes")]
    pub standardize_response: bool,
    /// Append an all-ones column, left out of standardization.
    #[serde(default)]
    pub intercept: bool,
}

fn yes() -> bool {
    true
}

impl IngestOptions {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            categorical: Vec::new(),
            encoding: DummyEncoding::default(),
            n_noise_features: 0,
            noise_seed: 0,
            standardize: true,
            standardize_response: true,
            intercept: false,
        }
    }
}

pub const INTERCEPT_NAME: &str = "(intercept)";

/// Reads a headed CSV into a dataset.
///
/// Column order: numeric columns in file order, then each categorical
/// column's indicators (`name=level`, levels sorted), then the appended
/// `noise_k` features, then the intercept if requested.
pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, opts)
}

pub(crate) fn ingest_reader<R: std::io::Read>(reader: R, opts: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let response_idx = position(&opts.response)?;
    let categorical: Vec<usize> = opts.categorical.iter().map(|c| position(c)).collect::<Result<_>>()?;
    let numeric: Vec<usize> = (0..headers.len())
        .filter(|i| *i != response_idx && !categorical.contains(i))
        .collect();

    let mut y = Vec::new();
    let mut numeric_cols: Vec<Vec<f64>> = vec![Vec::new(); numeric.len()];
    let mut cat_cells: Vec<Vec<String>> = vec![Vec::new(); categorical.len()];
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        // Row numbers count data rows from 1; the header is row 0.
        let row = row_idx + 1;
        let parse = |col: usize| -> Result<f64> {
            let cell = record.get(col).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::CellParse {
                    row,
                    column: headers[col].clone(),
                    value: cell.to_string(),
                }),
            }
        };
        y.push(parse(response_idx)?);
        for (k, &c) in numeric.iter().enumerate() {
            numeric_cols[k].push(parse(c)?);
        }
        for (k, &c) in categorical.iter().enumerate() {
            cat_cells[k].push(record.get(c).unwrap_or("").trim().to_string());
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Config("CSV has no data rows".into()));
    }

    let mut names: Vec<String> = numeric.iter().map(|&c| headers[c].clone()).collect();
    let mut columns = numeric_cols;
    for (k, &c) in categorical.iter().enumerate() {
        let levels: BTreeSet<&str> = cat_cells[k].iter().map(String::as_str).collect();
        let skip = usize::from(opts.encoding == DummyEncoding::DropFirst);
        for level in levels.into_iter().skip(skip) {
            names.push(format!("{}={}", headers[c], level));
            columns.push(cat_cells[k].iter().map(|v| f64::from(u8::from(v == level))).collect());
        }
    }
    if opts.n_noise_features > 0 {
        let mut rng = rng_for(opts.noise_seed, STREAM_NOISE_FEATURES);
        let base = columns.len();
        columns.extend((0..opts.n_noise_features).map(|_| Vec::with_capacity(n)));
        names.extend((1..=opts.n_noise_features).map(|k| format!("noise_{k}")));
        // Row-major draws, matching the matrix layout.
        for _ in 0..n {
            for col in &mut columns[base..] {
                col.push(StandardNormal.sample(&mut rng));
            }
        }
    }
    for (col, name) in columns.iter().zip(&names) {
        if col.iter().all(|v| *v == col[0]) {
            return Err(Error::ConstantColumn(name.clone()));
        }
    }
    let mut skip = vec![false; columns.len()];
    if opts.intercept {
        columns.push(vec![1.0; n]);
        names.push(INTERCEPT_NAME.to_string());
        skip.push(true);
    }

    let p = columns.len();
    let mut data = Vec::with_capacity(n * p);
    for r in 0..n {
        data.extend(columns.iter().map(|c| c[r]));
    }
    let raw = Dataset::new(DenseMatrix::new(n, p, data)?, y, names)?;
    if opts.standardize {
        raw.standardize_except(opts.standardize_response, &skip)
    } else {
        Ok(raw)
    }
}

/// Seeded uniform split into `n_train` training rows and the rest.
///
/// Rows keep their original relative order within each part. When the input
/// is standardized, statistics are recomputed on the training rows (from the
/// raw scale) and the test rows reuse them.
pub fn split(data: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "n_train = {n_train} must be in 1..{n} for {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_SPLIT));
    let (train_rows, test_rows) = order.split_at(n_train);
    let mut train_rows = train_rows.to_vec();
    let mut test_rows = test_rows.to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    match data.standardization() {
        None => {
            let train = data.select_rows(&train_rows)?.validated()?;
            let test = data.select_rows(&test_rows)?;
            Ok((train, test))
        }
        Some(st) => {
            let response = st.response_standardized();
            let skip: Vec<bool> = data
                .feature_names()
                .iter()
                .map(|name| name == INTERCEPT_NAME)
                .collect();
            let raw = data.destandardize()?;
            let train = raw.select_rows(&train_rows)?.standardize_except(response, &skip)?;
            let stats = train.standardization().cloned().expect("train was just standardized");
            let test = raw.select_rows(&test_rows)?.apply_stats(&stats)?;
            Ok((train, test))
        }
    }
}
