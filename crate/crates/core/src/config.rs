//! Experiment configuration files and the built-in simulation grids.
//!
//! Configs are TOML. Top-level keys:
//!
//! ```toml
//! algorithm = "cesdar"      # esdar | cesdar | ecesdar | acesdar
//! machines = 4
//! replicates = 100
//! base_seed = 0
//! scale = 1.0               # recorded only; N and p below are already scaled
//! n_test = 100
//! output_dir = "out"        # optional
//! example = 1               # optional, set by the built-in grids
//!
//! [solver]                  # sparsity, tau, max_iter, kkt_tol
//! sparsity = 10
//!
//! [tuning]                  # step, j_override, warm_start_tolerance
//! step = 1
//!
//! [synthetic]               # n, p, s, signal_ratio, tau, noise_sd, beta_bounds
//! n = 20000
//! p = 200
//! s = 10
//!
//! [data]                    # alternative to [synthetic]
//! path = "train.csv"        # a CSV when [data.ingest] is present, else a dataset cache
//! [data.ingest]
//! response = "y"
//! ```
//!
//! The `machines` and `solver` keys inside `[tuning]` are ignored; the
//! top-level ones apply.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{Algorithm, CellConfig, TheoryOptions};
use crate::data::{ingest_csv, read_cache, Dataset, IngestOptions, SyntheticSpec};
use crate::error::{Error, Result};
use crate::sdar::SolverConfig;
use crate::tuning::TuningConfig;

/// A dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestOptions>,
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match &self.ingest {
            Some(opts) => ingest_csv(&self.path, opts),
            None => read_cache(&self.path),
        }
    }
}

fn one() -> usize {
    1
}

fn hundred() -> usize {
    100
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default = "one")]
    pub machines: usize,
    #[serde(default = "hundred")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default = "hundred")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<u8>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryOptions>,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, machines: usize, solver: SolverConfig) -> Self {
        Self {
            algorithm,
            machines,
            replicates: hundred(),
            base_seed: 0,
            scale: unit(),
            n_test: hundred(),
            output_dir: None,
            example: None,
            solver,
            tuning: TuningConfig::default(),
            synthetic: None,
            data: None,
            theory: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.machines == 0 {
            return Err(Error::Config("machines must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        if self.synthetic.is_some() && self.data.is_some() {
            return Err(Error::Config("give either [synthetic] or [data], not both".into()));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate()?;
            if self.algorithm != Algorithm::Acesdar {
                self.solver.validate(spec.p)?;
            }
        }
        Ok(())
    }

    /// Tuning settings with the top-level machine count and solver applied.
    pub fn effective_tuning(&self) -> TuningConfig {
        TuningConfig {
            machines: self.machines,
            solver: self.solver.clone(),
            ..self.tuning.clone()
        }
    }

    /// The simulation cell this config describes.
    pub fn to_cell(&self) -> Result<CellConfig> {
        let spec = self
            .synthetic
            .clone()
            .ok_or_else(|| Error::Config("a simulation cell needs a [synthetic] section".into()))?;
        Ok(CellConfig {
            spec,
            algorithm: self.algorithm,
            machines: self.machines,
            solver: self.solver.clone(),
            tuning: self.effective_tuning(),
            replicates: self.replicates,
            base_seed: self.base_seed,
            n_test: self.n_test,
            jobs: None,
            theory: self.theory.clone(),
        })
    }
}

/// Selects cells of a built-in grid. Unset fields range over the whole grid;
/// set fields must be grid values (at full scale for `p`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Knob {
    pub machines: Option<usize>,
    pub p: Option<usize>,
    pub s: Option<usize>,
    pub sparsity: Option<usize>,
}

fn steps(lo: usize, hi: usize, by: usize) -> Vec<usize> {
    (lo..=hi).step_by(by).collect()
}

fn pick(name: &str, id: u8, grid: Vec<usize>, want: Option<usize>) -> Result<Vec<usize>> {
    match want {
        None => Ok(grid),
        Some(v) if grid.contains(&v) => Ok(vec![v]),
        Some(v) => Err(Error::Config(format!("{name} = {v} is not in example {id}'s grid {grid:?}"))),
    }
}

fn scaled(v: usize, scale: f64) -> usize {
    (v as f64 * scale).floor() as usize
}

/// The simulation cells of example `id` (1 to 4) matching `knob`, with `N`
/// and `p` multiplied by `scale` and floored. Every cell uses CESDAR; callers
/// swap the algorithm as needed.
///
/// 1. `N = 1e5, p = 500, s = T = 10`, `M` in `2, 4, ..., 128`.
/// 2. `N = 5000, p = 10000, s = T = 10`, `M` in `2, 4, ..., 16`.
/// 3. `N = 5000, s = 10, M = 5`, `p` in `2000, 4000, ..., 10000`, `T` in `2, 4, ..., 20`.
/// 4. `N = 5000, p = 10000, M = 5`, `s` and `T` each in `2, 4, ..., 20`.
pub fn example_grid(id: u8, knob: &Knob, scale: f64) -> Result<Vec<ExperimentConfig>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale {scale} must be positive")));
    }
    let (n, ms, ps, ss, ts) = match id {
        1 => (100_000, vec![2, 4, 8, 16, 32, 64, 128], vec![500], vec![10], vec![10]),
        2 => (5000, steps(2, 16, 2), vec![10_000], vec![10], vec![10]),
        3 => (5000, vec![5], steps(2000, 10_000, 2000), vec![10], steps(2, 20, 2)),
        4 => (5000, vec![5], vec![10_000], steps(2, 20, 2), steps(2, 20, 2)),
        _ => return Err(Error::Config(format!("unknown example {id}; expected 1 to 4"))),
    };
    let ms = pick("machines", id, ms, knob.machines)?;
    let ps = pick("p", id, ps, knob.p)?;
    let ss = pick("s", id, ss, knob.s)?;
    let ts = pick("T", id, ts, knob.sparsity)?;
    let mut out = Vec::new();
    for &p in &ps {
        for &s in &ss {
            for &t in &ts {
                for &m in &ms {
                    let spec = SyntheticSpec::new(scaled(n, scale), scaled(p, scale), s, 0);
                    let mut cfg = ExperimentConfig::new(Algorithm::Cesdar, m, SolverConfig::new(t));
                    cfg.scale = scale;
                    cfg.example = Some(id);
                    cfg.synthetic = Some(spec);
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
    }
    Ok(out)
}

/// The single cell of example `id` picked out by `knob`.
pub fn example_config(id: u8, knob: &Knob, scale: f64) -> Result<ExperimentConfig> {
    let mut grid = example_grid(id, knob, scale)?;
    if grid.len() != 1 {
        return Err(Error::Config(format!(
            "knob {knob:?} selects {} cells of example {id}, expected one",
            grid.len()
        )));
    }
    Ok(grid.remove(0))
}
