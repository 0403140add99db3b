//! `cesdar` command-line driver.
//!
//! Exit status: 0 on success, 1 on usage, configuration or data errors, 2
//! when the run finished but something did not converge or a replicate
//! failed. Errors are reported on stderr as a single line
//! `error kind=<kind> msg="<message>"`.
//!
//! Settings come from, in increasing precedence: built-in defaults, the
//! `--config` file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cesdar::bench::{run_cell, write_bench_outputs, Algorithm, BenchMeta, CellConfig, CellResult, TheoryOptions};
use cesdar::config::{example_grid, DataSource, ExperimentConfig, Knob};
use cesdar::data::{generate, ingest_csv, split, write_cache, DummyEncoding, IngestOptions, SyntheticSpec};
use cesdar::distributed::{Cluster, ClusterOptions, CommLedger, DualSource};
use cesdar::tuning::acesdar_fit;
use cesdar::{esdar_fit, Dataset, Error, SolverConfig, SparseCoefficients};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cesdar", version, about = "Sparse least squares on a simulated cluster")]
struct Cli {
    /// Log filter, e.g. `warn` or `cesdar=debug`.
    #[arg(long, global = true, default_value = "info", env = "CESDAR_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write it as JSON.
    Fit(FitArgs),
    /// Sweep the sparsity level and keep the HBIC-best model.
    Tune(TuneArgs),
    /// Run replicated simulation cells and write result tables.
    Bench(BenchArgs),
    /// Simulate a dataset and write it as a cache file.
    Gen(GenArgs),
    /// Convert a CSV file into a dataset cache.
    Ingest(IngestArgs),
}

/// Where the training data comes from.
#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Dataset cache, or a CSV file when `--response` is given.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column of a CSV `--data` file.
    #[arg(long)]
    response: Option<String>,
    /// Categorical CSV columns, expanded to indicator columns.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    machines: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Sweep increment, used with `--algo acesdar`.
    #[arg(long)]
    step: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    /// Seed for a config's `[synthetic]` data.
    #[arg(long, env = "CESDAR_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Also write the message ledger of a distributed fit.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    machines: Option<usize>,
    /// Largest sparsity level; computed from the master shard when absent.
    #[arg(long)]
    max_sparsity: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Use master-only dual variables, as the low-communication variant does.
    #[arg(long)]
    master_dual: bool,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, env = "CESDAR_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in experiment grid, 1 to 4.
    #[arg(long, conflicts_with = "config")]
    example: Option<u8>,
    /// Single-cell config file with a `[synthetic]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multiplies N and p of the built-in grids.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Algorithms to run per grid cell.
    #[arg(long, value_delimiter = ',')]
    algos: Vec<Algorithm>,
    /// Restrict the grid to this machine count.
    #[arg(long)]
    machines: Option<usize>,
    /// Restrict the grid to this (full-scale) dimension.
    #[arg(long)]
    p: Option<usize>,
    /// Restrict the grid to this true sparsity.
    #[arg(long)]
    s: Option<usize>,
    /// Restrict the grid to this sparsity level T.
    #[arg(long)]
    sparsity: Option<usize>,
    /// Sweep increment for acesdar cells.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long, env = "CESDAR_SEED")]
    seed: Option<u64>,
    /// Cap on concurrently running replicates.
    #[arg(long)]
    jobs: Option<usize>,
    /// Record error-bound diagnostics per trial.
    #[arg(long)]
    theory: bool,
    /// Random subset pairs for the spectrum constants at larger p.
    #[arg(long, default_value_t = 0)]
    src_samples: usize,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    s: usize,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Ratio of the largest to the smallest coefficient magnitude.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, env = "CESDAR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the true coefficients as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// One indicator per level instead of dropping the first level.
    #[arg(long)]
    keep_all_levels: bool,
    /// Append this many standard normal columns.
    #[arg(long, default_value_t = 0)]
    noise_features: usize,
    #[arg(long, env = "CESDAR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    intercept: bool,
    #[arg(long)]
    out: PathBuf,
    /// Keep this many rows for training and write the rest to `--test-out`.
    #[arg(long, requires = "test_out")]
    n_train: Option<usize>,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

/// Successful outcome: whether everything finished cleanly.
enum Outcome {
    Clean,
    Warnings,
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    eprintln!("error kind={kind} msg={msg:?}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Ingest(a) => cmd_ingest(a),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Warnings) => ExitCode::from(2),
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> cesdar::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> cesdar::Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_config(path: &Option<PathBuf>) -> cesdar::Result<Option<ExperimentConfig>> {
    path.as_ref().map(ExperimentConfig::load).transpose()
}

/// Loads the training data from flags, falling back to the config.
fn load_data(flags: &DataArgs, cfg: Option<&ExperimentConfig>, seed: Option<u64>) -> cesdar::Result<Dataset> {
    if let Some(path) = &flags.data {
        let source = DataSource {
            path: path.clone(),
            ingest: flags.response.as_ref().map(|r| IngestOptions {
                categorical: flags.categorical.clone(),
                ..IngestOptions::new(r.clone())
            }),
        };
        return source.load();
    }
    let cfg = cfg.ok_or_else(|| Error::Config("no data: pass --data or a config with [data] or [synthetic]".into()))?;
    if let Some(source) = &cfg.data {
        return source.load();
    }
    match &cfg.synthetic {
        Some(spec) => {
            let spec = SyntheticSpec {
                seed: seed.unwrap_or(cfg.base_seed),
                ..spec.clone()
            };
            Ok(generate(&spec)?.0)
        }
        None => Err(Error::Config("config has neither [data] nor [synthetic]".into())),
    }
}

#[derive(Serialize)]
struct LedgerSummary {
    messages: usize,
    iterations: usize,
    total_bytes: usize,
    bytes_to_master: usize,
    bytes_to_workers: usize,
}

impl From<&CommLedger> for LedgerSummary {
    fn from(l: &CommLedger) -> Self {
        Self {
            messages: l.message_count(),
            iterations: l.iterations(),
            total_bytes: l.total_bytes(),
            bytes_to_master: l.bytes_to_master(),
            bytes_to_workers: l.bytes_to_workers(),
        }
    }
}

#[derive(Serialize)]
struct ModelFile {
    algorithm: Algorithm,
    machines: usize,
    sparsity: usize,
    dim: usize,
    support: Vec<usize>,
    values: Vec<f64>,
    /// Names of the support columns, in support order.
    features: Vec<String>,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<LedgerSummary>,
}

impl ModelFile {
    #[allow(clippy::too_many_arguments)]
    fn new(
        data: &Dataset,
        algorithm: Algorithm,
        machines: usize,
        sparsity: usize,
        beta: &SparseCoefficients,
        iterations: usize,
        converged: bool,
        ledger: Option<&CommLedger>,
    ) -> Self {
        Self {
            algorithm,
            machines,
            sparsity,
            dim: beta.dim(),
            support: beta.support().to_vec(),
            values: beta.values().to_vec(),
            features: beta.support().iter().map(|&i| data.feature_names()[i].clone()).collect(),
            iterations,
            converged,
            ledger: ledger.map(LedgerSummary::from),
        }
    }
}

fn cmd_fit(a: FitArgs) -> cesdar::Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let algorithm = a.algo.or(cfg.as_ref().map(|c| c.algorithm)).unwrap_or(Algorithm::Esdar);
    let machines = a.machines.or(cfg.as_ref().map(|c| c.machines)).unwrap_or(1);
    let mut solver = cfg.as_ref().map(|c| c.solver.clone()).unwrap_or_else(|| SolverConfig::new(1));
    match (a.sparsity, &cfg) {
        (Some(t), _) => solver.sparsity = t,
        (None, None) if algorithm != Algorithm::Acesdar => {
            return Err(Error::Config("--sparsity is required without --config".into()))
        }
        _ => {}
    }
    if let Some(tau) = a.tau {
        solver.tau = tau;
    }
    if let Some(k) = a.max_iter {
        solver.max_iter = k;
    }
    let data = load_data(&a.data, cfg.as_ref(), a.seed)?;
    log::info!("fitting {algorithm} on {} x {} with M = {machines}", data.n(), data.p());

    let model = match algorithm {
        Algorithm::Esdar => {
            let fit = esdar_fit(&data, &solver)?;
            ModelFile::new(&data, algorithm, 1, solver.sparsity, &fit.beta, fit.iterations, fit.converged, None)
        }
        Algorithm::Cesdar | Algorithm::Ecesdar => {
            let source = if algorithm == Algorithm::Cesdar {
                DualSource::Averaged
            } else {
                DualSource::Master
            };
            let out = Cluster::new(&data, machines, ClusterOptions::default())?.fit(source, &solver, None)?;
            if let Some(path) = &a.ledger {
                out.ledger.save_csv(path)?;
            }
            ModelFile::new(
                &data,
                algorithm,
                machines,
                solver.sparsity,
                &out.fit.beta,
                out.fit.iterations,
                out.fit.converged,
                Some(&out.ledger),
            )
        }
        Algorithm::Acesdar => {
            let mut tune = cfg.as_ref().map(|c| c.tuning.clone()).unwrap_or_default();
            tune.machines = machines;
            tune.solver = solver;
            if let Some(step) = a.step {
                tune.step = step;
            }
            let out = acesdar_fit(&data, &tune)?;
            let pick = out.selected();
            ModelFile::new(
                &data,
                algorithm,
                machines,
                pick.sparsity,
                &pick.beta,
                out.total_iterations(),
                pick.converged,
                None,
            )
        }
    };
    write_json(&a.out, &model)?;
    println!(
        "wrote {} (support size {}, {} iterations, converged {})",
        a.out.display(),
        model.support.len(),
        model.iterations,
        model.converged
    );
    Ok(if model.converged { Outcome::Clean } else { Outcome::Warnings })
}

fn cmd_tune(a: TuneArgs) -> cesdar::Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let mut tune = cfg.as_ref().map(|c| c.effective_tuning()).unwrap_or_default();
    if let Some(step) = a.step {
        tune.step = step;
    }
    if let Some(m) = a.machines {
        tune.machines = m;
    }
    if a.max_sparsity.is_some() {
        tune.j_override = a.max_sparsity;
    }
    if let Some(tau) = a.tau {
        tune.solver.tau = tau;
    }
    if a.master_dual {
        tune.dual_source = DualSource::Master;
    }
    let data = load_data(&a.data, cfg.as_ref(), a.seed)?;
    let out = acesdar_fit(&data, &tune)?;
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("hbic_path.csv");
    let file = fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    out.write_path_csv(file)?;
    let pick = out.selected();
    let algorithm = match tune.dual_source {
        DualSource::Averaged => Algorithm::Cesdar,
        DualSource::Master => Algorithm::Ecesdar,
    };
    let model = ModelFile::new(
        &data,
        algorithm,
        tune.machines,
        pick.sparsity,
        &pick.beta,
        pick.iterations,
        pick.converged,
        None,
    );
    write_json(&a.out_dir.join("model.json"), &model)?;
    println!(
        "J = {} levels = {} selected T = {} hbic = {}",
        out.cap,
        out.path.len(),
        pick.sparsity,
        pick.hbic.value
    );
    Ok(if pick.converged { Outcome::Clean } else { Outcome::Warnings })
}

/// Cells to run: the grid (or config) crossed with the algorithms. ESDAR
/// ignores the machine count, so it runs once per design.
fn bench_cells(a: &BenchArgs) -> cesdar::Result<(Vec<CellConfig>, BenchMeta)> {
    let (base, example): (Vec<ExperimentConfig>, Option<u8>) = match (a.example, &a.config) {
        (Some(id), _) => {
            let knob = Knob {
                machines: a.machines,
                p: a.p,
                s: a.s,
                sparsity: a.sparsity,
            };
            (example_grid(id, &knob, a.scale.unwrap_or(1.0))?, Some(id))
        }
        (None, Some(path)) => {
            let mut c = ExperimentConfig::load(path)?;
            if let Some(m) = a.machines {
                c.machines = m;
            }
            if let Some(t) = a.sparsity {
                c.solver.sparsity = t;
            }
            (vec![c], None)
        }
        (None, None) => return Err(Error::Config("bench needs --example or --config".into())),
    };
    let algos = if a.algos.is_empty() {
        match &a.config {
            Some(_) => vec![base[0].algorithm],
            None => vec![Algorithm::Cesdar, Algorithm::Ecesdar],
        }
    } else {
        a.algos.clone()
    };
    let scale = base.first().map(|c| c.scale).unwrap_or(1.0);
    let mut cells: Vec<CellConfig> = Vec::new();
    for exp in &base {
        for &alg in &algos {
            let mut exp = exp.clone();
            exp.algorithm = alg;
            if let Some(r) = a.replicates {
                exp.replicates = r;
            }
            if let Some(seed) = a.seed {
                exp.base_seed = seed;
            }
            if let Some(step) = a.step {
                exp.tuning.step = step;
            }
            if alg == Algorithm::Esdar {
                exp.machines = 1;
            }
            if a.theory {
                exp.theory = Some(TheoryOptions {
                    src_samples: a.src_samples,
                    ..exp.theory.unwrap_or_default()
                });
            }
            let mut cell = exp.to_cell()?;
            cell.jobs = a.jobs;
            if !cells.contains(&cell) {
                cells.push(cell);
            }
        }
    }
    let meta = BenchMeta {
        example,
        scale,
        base_seed: cells.first().map(|c| c.base_seed).unwrap_or(0),
        replicates: cells.first().map(|c| c.replicates).unwrap_or(0),
    };
    Ok((cells, meta))
}

fn cmd_bench(a: BenchArgs) -> cesdar::Result<Outcome> {
    let (cells, meta) = bench_cells(&a)?;
    if meta.scale != 1.0 {
        log::info!("N and p scaled by {}", meta.scale);
    }
    let mut results: Vec<CellResult> = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        log::info!(
            "cell {}/{}: {} M = {} N = {} p = {} s = {} T = {}",
            i + 1,
            cells.len(),
            cell.algorithm,
            cell.machines,
            cell.spec.n,
            cell.spec.p,
            cell.spec.s,
            cell.solver.sparsity
        );
        results.push(run_cell(cell)?);
    }
    write_bench_outputs(&a.out_dir, &results, &meta)?;
    let failed: usize = results.iter().map(|r| r.failures.len()).sum();
    println!("wrote {} cells to {}", results.len(), a.out_dir.display());
    if failed > 0 {
        log::warn!("{failed} replicates failed; see runlog/run.log");
        return Ok(Outcome::Warnings);
    }
    Ok(Outcome::Clean)
}

fn cmd_gen(a: GenArgs) -> cesdar::Result<Outcome> {
    let mut spec = SyntheticSpec::new(a.n, a.p, a.s, a.seed);
    if let Some(sd) = a.noise_sd {
        spec.noise_sd = sd;
    }
    if let Some(r) = a.ratio {
        spec.signal_ratio = r;
    }
    let (data, truth) = generate(&spec)?;
    write_cache(&a.out, &data)?;
    if let Some(path) = &a.truth {
        write_json(path, &truth)?;
    }
    println!("wrote {} ({} x {}, support {:?})", a.out.display(), data.n(), data.p(), truth.support);
    Ok(Outcome::Clean)
}

fn cmd_ingest(a: IngestArgs) -> cesdar::Result<Outcome> {
    let opts = IngestOptions {
        categorical: a.categorical,
        encoding: if a.keep_all_levels {
            DummyEncoding::KeepAll
        } else {
            DummyEncoding::DropFirst
        },
        n_noise_features: a.noise_features,
        noise_seed: a.seed,
        standardize: !a.no_standardize,
        intercept: a.intercept,
        ..IngestOptions::new(a.response)
    };
    let data = ingest_csv(&a.input, &opts)?;
    match (a.n_train, &a.test_out) {
        (Some(n_train), Some(test_out)) => {
            let (train, test) = split(&data, n_train, a.seed)?;
            write_cache(&a.out, &train)?;
            write_cache(test_out, &test)?;
            println!(
                "wrote {} ({} rows) and {} ({} rows), p = {}",
                a.out.display(),
                train.n(),
                test_out.display(),
                test.n(),
                data.p()
            );
        }
        _ => {
            write_cache(&a.out, &data)?;
            println!("wrote {} ({} x {})", a.out.display(), data.n(), data.p());
        }
    }
    Ok(Outcome::Clean)
}
