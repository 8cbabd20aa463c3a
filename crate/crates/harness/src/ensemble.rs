//! Parallel execution of independent samples with a single ordered appender.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{write_summaries, Aggregate};
use crate::config::ExperimentConfig;
use crate::probes::{measure, probe_axes, EnsembleRecord};
use crate::HarnessError;

/// Samples per scheduling chunk; records are flushed after each chunk.
const CHUNK: u64 = 64;

pub const RECORDS_FILE: &str = "records.ndjson";
pub const TIMINGS_FILE: &str = "timings.ndjson";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub probe: String,
    pub model_hash: String,
    pub master_seed: u64,
    pub first_sample: u64,
    pub n_samples: u64,
    pub failures: u64,
    pub workers: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    sample: u64,
    seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n_samples: u64,
    pub failures: u64,
    /// Records in sample order.
    pub records: Vec<EnsembleRecord>,
    /// `None` when no samples were requested.
    pub aggregate: Option<Aggregate>,
    pub out_dir: Option<PathBuf>,
    pub files: Vec<PathBuf>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn to_line<T: Serialize>(x: &T) -> String {
    serde_json::to_string(x).expect("record serializes")
}

/// Runs samples `first_sample .. first_sample + n_samples`. Each sample's
/// values depend only on `(config, master_seed, index)`, so the record set
/// is independent of the worker count. With `config.output` set, records,
/// timings, a manifest, the aggregate and CSV summaries are written there.
///
/// Fails with [`HarnessError::FailureBudget`] after persisting everything
/// when more than 10% of samples fail.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let axes = probe_axes(cfg)?;
    let started = unix_now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let workers = pool.current_num_threads();

    let mut sinks = match &cfg.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some((
                BufWriter::new(File::create(dir.join(RECORDS_FILE))?),
                BufWriter::new(File::create(dir.join(TIMINGS_FILE))?),
            ))
        }
        None => None,
    };

    let end = cfg.first_sample + cfg.n_samples;
    let mut records = Vec::with_capacity(cfg.n_samples as usize);
    let mut start = cfg.first_sample;
    while start < end {
        let stop = (start + CHUNK).min(end);
        let chunk: Vec<(EnsembleRecord, f64)> = pool.install(|| {
            (start..stop)
                .into_par_iter()
                .map(|i| {
                    let t = Instant::now();
                    let r = measure(cfg, &axes, i);
                    (r, t.elapsed().as_secs_f64())
                })
                .collect()
        });
        for (rec, seconds) in chunk {
            if let Some((rw, tw)) = sinks.as_mut() {
                writeln!(rw, "{}", to_line(&rec))?;
                writeln!(tw, "{}", to_line(&Timing { sample: rec.sample, seconds }))?;
            }
            if !rec.ok {
                log::warn!("sample {} failed: {}", rec.sample, rec.error.as_deref().unwrap_or("?"));
            }
            records.push(rec);
        }
        if let Some((rw, tw)) = sinks.as_mut() {
            rw.flush()?;
            tw.flush()?;
        }
        start = stop;
    }

    let failures = records.iter().filter(|r| !r.ok).count() as u64;
    let aggregate = if records.is_empty() {
        None
    } else {
        Some(Aggregate::from_records(&records)?)
    };
    let mut files = Vec::new();
    if let Some(dir) = &cfg.output {
        files.push(dir.join(RECORDS_FILE));
        files.push(dir.join(TIMINGS_FILE));
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            probe: cfg.probe.id().to_string(),
            model_hash: cfg.model.hash_hex(),
            master_seed: cfg.master_seed,
            first_sample: cfg.first_sample,
            n_samples: cfg.n_samples,
            failures,
            workers,
            started_unix: started,
            finished_unix: unix_now(),
            config: cfg.clone(),
        };
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        files.push(dir.join(MANIFEST_FILE));
        if let Some(agg) = &aggregate {
            std::fs::write(dir.join(AGGREGATE_FILE), agg.to_json())?;
            files.push(dir.join(AGGREGATE_FILE));
            files.extend(write_summaries(agg, dir)?);
        }
    }
    if failures * 10 > cfg.n_samples {
        return Err(HarnessError::FailureBudget {
            failed: failures,
            total: cfg.n_samples,
        });
    }
    Ok(RunSummary {
        n_samples: cfg.n_samples,
        failures,
        records,
        aggregate,
        out_dir: cfg.output.clone(),
        files,
    })
}

/// Reads a record stream. An unparsable final line without a trailing
/// newline is a torn write and is skipped with a warning; any other bad
/// line is a schema error.
pub fn read_records(path: &Path) -> Result<Vec<EnsembleRecord>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let complete = text.ends_with('\n');
    let raw: Vec<&str> = text.split('\n').filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (i, line) in raw.iter().enumerate() {
        match serde_json::from_str::<EnsembleRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == raw.len() && !complete => {
                log::warn!("{}: skipping truncated final record", path.display());
            }
            Err(e) => {
                return Err(HarnessError::Schema(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

/// Reads `path` as a record file, or `path/records.ndjson` for a run directory.
pub fn read_run(path: &Path) -> Result<Vec<EnsembleRecord>, HarnessError> {
    if path.is_dir() {
        read_records(&path.join(RECORDS_FILE))
    } else {
        read_records(path)
    }
}
