use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bench::metrics::{MetricsSummary, TrialResult};
use crate::bench::runner::{Algorithm, CellConfig, CellResult, TrialFailure};
use crate::error::{Error, Result};
use crate::sparse::SparseCoefficients;

pub const SCHEMA: &str = "bench-v1";

const TRIAL_HEADER: [&str; 21] = [
    "cell",
    "algorithm",
    "machines",
    "n",
    "p",
    "s",
    "replicate",
    "seed",
    "estimation_error",
    "prediction_error",
    "positive_discovery",
    "inactive_agreement",
    "oracle",
    "iterations",
    "converged",
    "sparsity",
    "bytes_total",
    "bytes_to_master",
    "dim",
    "support",
    "coefficients",
];

/// Run-level metadata written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<u8>,
    /// Factor applied to N and p; 1 means full size.
    pub scale: f64,
    pub base_seed: u64,
    pub replicates: usize,
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One row per completed trial. Contains no timings, so reruns with the
/// same seeds are byte-identical.
pub fn write_trials_csv<W: Write>(cells: &[CellResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRIAL_HEADER)?;
    for (c, cell) in cells.iter().enumerate() {
        let cfg = &cell.config;
        for t in &cell.trials {
            out.write_record([
                c.to_string(),
                cfg.algorithm.name().to_string(),
                cfg.machines.to_string(),
                cfg.spec.n.to_string(),
                cfg.spec.p.to_string(),
                cfg.spec.s.to_string(),
                t.replicate.to_string(),
                t.seed.to_string(),
                t.estimation_error.to_string(),
                t.prediction_error.to_string(),
                t.positive_discovery.to_string(),
                t.inactive_agreement.to_string(),
                t.oracle.to_string(),
                t.iterations.to_string(),
                t.converged.to_string(),
                t.sparsity.to_string(),
                t.bytes_total.to_string(),
                t.bytes_to_master.to_string(),
                t.beta_hat.dim().to_string(),
                join(t.beta_hat.support().iter()),
                join(t.beta_hat.values().iter()),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("trials csv", e))?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Format {
        what: "trials csv",
        detail: format!("line {line}: bad {} '{raw}'", TRIAL_HEADER[i]),
    })
}

fn list<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Vec<T>> {
    let raw = rec.get(i).unwrap_or("");
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(';')
        .map(|v| {
            v.parse().map_err(|_| Error::Format {
                what: "trials csv",
                detail: format!("line {line}: bad {} entry '{v}'", TRIAL_HEADER[i]),
            })
        })
        .collect()
}

/// Reads trials back as `(cell index, trial)`. Timings are not stored and
/// come back as zero.
pub fn read_trials_csv<R: Read>(r: R) -> Result<Vec<(usize, TrialResult)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRIAL_HEADER.iter().copied()) {
        return Err(Error::Format {
            what: "trials csv",
            detail: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let beta = SparseCoefficients::new(field(&rec, 18, line)?, list(&rec, 19, line)?, list(&rec, 20, line)?)?;
        out.push((
            field(&rec, 0, line)?,
            TrialResult {
                replicate: field(&rec, 6, line)?,
                seed: field(&rec, 7, line)?,
                estimation_error: field(&rec, 8, line)?,
                prediction_error: field(&rec, 9, line)?,
                positive_discovery: field(&rec, 10, line)?,
                inactive_agreement: field(&rec, 11, line)?,
                oracle: field(&rec, 12, line)?,
                iterations: field(&rec, 13, line)?,
                converged: field(&rec, 14, line)?,
                sparsity: field(&rec, 15, line)?,
                bytes_total: field(&rec, 16, line)?,
                bytes_to_master: field(&rec, 17, line)?,
                beta_hat: beta,
                compute_seconds: 0.0,
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub algorithm: Algorithm,
    pub machines: usize,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub sparsity: usize,
    pub summary: MetricsSummary,
    pub failures: Vec<TrialFailure>,
    pub config: CellConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema: String,
    pub meta: BenchMeta,
    pub cells: Vec<CellSummary>,
}

pub fn summary_file(cells: &[CellResult], meta: &BenchMeta) -> SummaryFile {
    SummaryFile {
        schema: SCHEMA.into(),
        meta: meta.clone(),
        cells: cells
            .iter()
            .enumerate()
            .map(|(i, c)| CellSummary {
                cell: i,
                algorithm: c.config.algorithm,
                machines: c.config.machines,
                n: c.config.spec.n,
                p: c.config.spec.p,
                s: c.config.spec.s,
                sparsity: c.config.solver.sparsity,
                summary: c.summary.clone(),
                failures: c.failures.clone(),
                config: c.config.clone(),
            })
            .collect(),
    }
}

pub fn read_summary(r: impl Read) -> Result<SummaryFile> {
    let file: SummaryFile = serde_json::from_reader(r).map_err(|e| Error::Format {
        what: "summary json",
        detail: e.to_string(),
    })?;
    if file.schema != SCHEMA {
        return Err(Error::Format {
            what: "summary json",
            detail: format!("schema '{}' is not {SCHEMA}", file.schema),
        });
    }
    Ok(file)
}

/// Results table: `N, p, s, T` followed by the usual
/// `M, Method, AEE(sd), APE(sd), APDR, AFDR, ORA, ANI` columns, plus `ART`
/// when `with_art` is set.
pub fn write_table_csv<W: Write>(cells: &[CellResult], with_art: bool, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "N", "p", "s", "T", "M", "Method", "AEE(sd)", "APE(sd)", "APDR", "AFDR", "ORA", "ANI",
    ];
    if with_art {
        header.push("ART");
    }
    out.write_record(&header)?;
    for cell in cells {
        let (cfg, m) = (&cell.config, &cell.summary);
        let t = match cfg.algorithm {
            Algorithm::Acesdar => "auto".to_string(),
            _ => cfg.solver.sparsity.to_string(),
        };
        let mut row = vec![
            cfg.spec.n.to_string(),
            cfg.spec.p.to_string(),
            cfg.spec.s.to_string(),
            t,
            cfg.machines.to_string(),
            cfg.algorithm.label().to_string(),
            format!("{:.5}({:.5})", m.aee.mean, m.aee.sd),
            format!("{:.5}({:.5})", m.ape.mean, m.ape.sd),
            format!("{:.3}", m.apdr),
            format!("{:.3}", m.afdr),
            format!("{:.2}", m.ora),
            format!("{:.2}", m.ani),
        ];
        if with_art {
            row.push(format!("{:.4}", m.art));
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("table csv", e))?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `trials.csv`, `summary.json` and `table.csv` into `dir`, and the
/// timing-dependent files into `dir/runlog/`.
pub fn write_bench_outputs(dir: &Path, cells: &[CellResult], meta: &BenchMeta) -> Result<()> {
    let runlog = dir.join("runlog");
    fs::create_dir_all(&runlog).map_err(|e| Error::io(&runlog, e))?;
    write_trials_csv(cells, create(&dir.join("trials.csv"))?)?;
    let summary = serde_json::to_string_pretty(&summary_file(cells, meta)).map_err(|e| Error::Format {
        what: "summary json",
        detail: e.to_string(),
    })?;
    let path = dir.join("summary.json");
    fs::write(&path, summary + "\n").map_err(|e| Error::io(&path, e))?;
    write_table_csv(cells, false, create(&dir.join("table.csv"))?)?;
    write_table_csv(cells, true, create(&runlog.join("table.csv"))?)?;

    let mut timings = csv::Writer::from_writer(create(&runlog.join("timings.csv"))?);
    timings.write_record(["cell", "replicate", "compute_seconds"])?;
    for (c, cell) in cells.iter().enumerate() {
        for t in &cell.trials {
            timings.write_record([c.to_string(), t.replicate.to_string(), t.compute_seconds.to_string()])?;
        }
    }
    timings.flush().map_err(|e| Error::io("timings csv", e))?;

    let path = runlog.join("run.log");
    let mut log = create(&path)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut text = format!(
        "finished_unix={stamp} scale={} base_seed={} replicates={} cells={}\n",
        meta.scale,
        meta.base_seed,
        meta.replicates,
        cells.len()
    );
    for (c, cell) in cells.iter().enumerate() {
        text += &format!(
            "cell={c} algorithm={} completed={}/{} failures={}\n",
            cell.config.algorithm,
            cell.summary.completed,
            cell.summary.replicates,
            cell.failures.len()
        );
        for f in &cell.failures {
            text += &format!("  replicate={} kind={} msg={}\n", f.replicate, f.kind, f.message);
        }
    }
    log.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
