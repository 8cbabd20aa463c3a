use std::io::Write;
use std::process::Command;

use levelspacing_core::model::ModelParams;
use levelspacing_harness::ensemble::{read_records, RECORDS_FILE};
use levelspacing_harness::{probability_probe, run_ensemble, Aggregate, ExperimentConfig, HarnessError, ProbeConfig};

fn wegner(n: u64) -> ExperimentConfig {
    ExperimentConfig::new(
        ModelParams::standard(1, 1.0, 8.0, 0.5),
        ProbeConfig::Wegner {
            energy: 2.0,
            widths: vec![0.4, 0.2, 0.1],
        },
        n,
        11,
    )
}

fn sorted_lines(path: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_to_string(path).unwrap().lines().map(String::from).collect();
    v.sort();
    v
}

#[test]
fn empty_run_gives_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = wegner(0);
    cfg.output = Some(dir.path().to_path_buf());
    let s = run_ensemble(&cfg).unwrap();
    assert_eq!(s.n_samples, 0);
    assert!(s.records.is_empty() && s.aggregate.is_none());
    assert_eq!(std::fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap(), "");
}

#[test]
fn records_do_not_depend_on_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = wegner(40);
    cfg.output = Some(a.path().to_path_buf());
    cfg.workers = Some(1);
    run_ensemble(&cfg).unwrap();
    cfg.output = Some(b.path().to_path_buf());
    cfg.workers = Some(4);
    run_ensemble(&cfg).unwrap();
    assert_eq!(
        sorted_lines(&a.path().join(RECORDS_FILE)),
        sorted_lines(&b.path().join(RECORDS_FILE))
    );
    assert_eq!(
        std::fs::read(a.path().join("aggregate.json")).unwrap(),
        std::fs::read(b.path().join("aggregate.json")).unwrap()
    );
}

#[test]
fn split_runs_merge_to_the_full_run() {
    let full = run_ensemble(&wegner(100)).unwrap().aggregate.unwrap();
    let first = run_ensemble(&wegner(50)).unwrap().aggregate.unwrap();
    let mut cfg = wegner(50);
    cfg.first_sample = 50;
    let second = run_ensemble(&cfg).unwrap().aggregate.unwrap();
    assert_eq!(first.merge(&second).unwrap(), full);
    assert_eq!(second.merge(&first).unwrap().to_json(), full.to_json());
}

#[test]
fn window_below_the_spectrum_never_fires() {
    let mut cfg = wegner(20);
    cfg.probe = ProbeConfig::Wegner {
        energy: -1.0,
        widths: vec![0.5],
    };
    let agg = run_ensemble(&cfg).unwrap().aggregate.unwrap();
    assert_eq!(probability_probe(&agg, "ge1").unwrap().frequencies[0].successes, 0);
}

#[test]
fn wide_spacing_window_always_fires() {
    let mut cfg = wegner(20);
    cfg.probe = ProbeConfig::SpacingTail {
        energy: Some(6.0),
        deltas: vec![100.0],
    };
    let agg = run_ensemble(&cfg).unwrap().aggregate.unwrap();
    assert!(agg.counter("levels").unwrap()[0] >= 2 * 20);
    assert_eq!(probability_probe(&agg, "below").unwrap().frequencies[0].p_hat, 1.0);
}

#[test]
fn truncated_stream_loses_only_the_last_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = wegner(10);
    cfg.output = Some(dir.path().to_path_buf());
    run_ensemble(&cfg).unwrap();
    let path = dir.path().join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let cut = text.len() - 25;
    std::fs::write(&path, &text[..cut]).unwrap();
    let records = read_records(&path).unwrap();
    assert_eq!(records.len(), 9);
    // a damaged record in the middle is not silently dropped
    let mut f = std::fs::File::create(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    writeln!(f, "{}\n{{broken\n{}", lines[0], lines[1]).unwrap();
    assert!(matches!(read_records(&path), Err(HarnessError::Schema(_))));
}

#[test]
fn aggregate_refuses_mixed_runs() {
    let a = run_ensemble(&wegner(5)).unwrap().aggregate.unwrap();
    let mut cfg = wegner(5);
    cfg.model.mu = 0.5;
    let b = run_ensemble(&cfg).unwrap().aggregate.unwrap();
    assert!(matches!(a.merge(&b), Err(HarnessError::MixedProbes(_))));
    let single: Aggregate = Aggregate::from_records(&run_ensemble(&wegner(1)).unwrap().records).unwrap();
    assert_eq!(single.records, 1);
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_levelspacing");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("wegner.toml");
    std::fs::write(&cfg_path, wegner(8).to_toml()).unwrap();
    let out = dir.path().join("run");
    let ok = Command::new(bin)
        .args(["wegner", "--config"])
        .arg(&cfg_path)
        .args(["--samples", "6", "--workers", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("summary.csv").exists() && out.join("manifest.json").exists());

    let wrong = Command::new(bin).args(["minami", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(wrong.status.code(), Some(2));

    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let none = Command::new(bin).arg("aggregate").arg(&empty).output().unwrap();
    assert_eq!(none.status.code(), Some(4));

    let merged = Command::new(bin).arg("aggregate").arg(&out).arg(&out).output().unwrap();
    assert_eq!(merged.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&merged.stdout).contains("samples 12"));

    let sample = Command::new(bin)
        .args(["sample", "--config"])
        .arg(&cfg_path)
        .args(["--index", "3"])
        .output()
        .unwrap();
    assert_eq!(sample.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&sample.stdout).unwrap();
    assert!(!v["eigenvalues"].as_array().unwrap().is_empty());
}
