use std::fs;

use cesdar::bench::{read_summary, read_trials_csv, run_cell, write_bench_outputs, Algorithm, BenchMeta, CellConfig};
use cesdar::config::ExperimentConfig;
use cesdar::data::{generate, ingest_csv, read_cache, split, write_cache, IngestOptions, SyntheticSpec};
use cesdar::distributed::{cesdar_fit, CommLedger};
use cesdar::tuning::{acesdar_fit, TuningConfig};
use cesdar::{esdar_fit, SolverConfig};

#[test]
fn cached_dataset_fits_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = generate(&SyntheticSpec::new(800, 60, 4, 12)).unwrap();
    let path = dir.path().join("d.bin");
    write_cache(&path, &data).unwrap();
    let back = read_cache(&path).unwrap();
    let cfg = SolverConfig::new(4);
    let a = esdar_fit(&data, &cfg).unwrap();
    let b = esdar_fit(&back, &cfg).unwrap();
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.beta.nonzero_support(), truth.support);
}

#[test]
fn ledger_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&SyntheticSpec::new(600, 40, 3, 4)).unwrap();
    let out = cesdar_fit(&data, 3, &SolverConfig::new(3)).unwrap();
    let path = dir.path().join("ledger.csv");
    out.ledger.save_csv(&path).unwrap();
    let back = CommLedger::read_csv(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, out.ledger);
    assert!(back.is_sound());
}

#[test]
fn csv_to_split_to_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("size,kind,noise,target\n");
    for i in 0..120 {
        let size = (i % 17) as f64 + 0.5 * (i % 3) as f64;
        let kind = ["a", "b", "c", "d"][i % 4];
        let bump = if kind == "c" { 3.0 } else { 0.0 };
        let noise = ((i * 31) % 13) as f64 / 13.0;
        text += &format!("{size},{kind},{noise},{}\n", 2.0 * size + bump + 0.01 * noise);
    }
    let csv = dir.path().join("in.csv");
    fs::write(&csv, text).unwrap();
    let opts = IngestOptions {
        categorical: vec!["kind".into()],
        n_noise_features: 10,
        ..IngestOptions::new("target")
    };
    let data = ingest_csv(&csv, &opts).unwrap();
    assert_eq!(data.p(), 1 + 3 + 1 + 10);
    let (train, test) = split(&data, 90, 5).unwrap();
    let fit = esdar_fit(&train, &SolverConfig::new(2)).unwrap();
    let names: Vec<&str> = fit
        .beta
        .nonzero_support()
        .iter()
        .map(|&i| train.feature_names()[i].as_str())
        .collect();
    assert!(names.contains(&"size"), "{names:?}");
    assert!(test.mse(&fit.beta).unwrap() < 0.1);
}

#[test]
fn tuned_fit_finds_sparsity_on_easy_data() {
    let mut spec = SyntheticSpec::new(3000, 100, 5, 21);
    spec.beta_bounds = Some((0.5, 2.0));
    let (data, truth) = generate(&spec).unwrap();
    let tune = TuningConfig {
        machines: 3,
        j_override: Some(15),
        ..Default::default()
    };
    let out = acesdar_fit(&data, &tune).unwrap();
    assert_eq!(out.selected().sparsity, 5);
    assert_eq!(out.selected().beta.nonzero_support(), truth.support);
    assert!(out.bytes_to_master > 0);
}

#[test]
fn bench_outputs_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let text = "algorithm = \"acesdar\"\nmachines = 2\nreplicates = 3\nbase_seed = 8\n\n[solver]\nsparsity = 1\n\n\
                [tuning]\nj_override = 6\n\n[synthetic]\nn = 500\np = 40\ns = 3\n";
    let path = dir.path().join("cell.toml");
    fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let cell: CellConfig = cfg.to_cell().unwrap();
    assert_eq!(cell.algorithm, Algorithm::Acesdar);
    let result = run_cell(&cell).unwrap();
    let meta = BenchMeta {
        example: None,
        scale: cfg.scale,
        base_seed: cfg.base_seed,
        replicates: cfg.replicates,
    };
    write_bench_outputs(dir.path(), std::slice::from_ref(&result), &meta).unwrap();
    let summary = read_summary(fs::File::open(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.cells[0].summary.completed, 3);
    assert_eq!(summary.cells[0].config, cell);
    let trials = read_trials_csv(fs::File::open(dir.path().join("trials.csv")).unwrap()).unwrap();
    assert_eq!(trials.len(), 3);
    assert!(trials.iter().all(|(_, t)| t.sparsity <= 6));
    let runlog = fs::read_to_string(dir.path().join("runlog/table.csv")).unwrap();
    assert!(runlog.lines().next().unwrap().ends_with("ART"));
}
