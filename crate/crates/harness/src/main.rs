use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levelspacing_core::discretize::assemble;
use levelspacing_core::model::{derive_seed, sample_configuration, thresholds, ModelParams};
use levelspacing_core::spectral::{eigs_in, Interval, MethodChoice};
use levelspacing_harness::aggregate::{
    aggregate_statistics, poisson_report, primary_event, probability_probe, write_summaries, Aggregate,
};
use levelspacing_harness::ensemble::{read_run, AGGREGATE_FILE};
use levelspacing_harness::{run_ensemble, ExperimentConfig, HarnessError};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "levelspacing", version, about = "Level-spacing laboratory for alloy-type random operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `n_samples`.
    #[arg(long)]
    samples: Option<u64>,
    /// Output directory; overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SampleFlags {
    /// Configuration file; only its `model` table and `master_seed` are read.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample index within the seeded ensemble.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Upper energy; defaults to E_spc.
    #[arg(long)]
    energy: Option<f64>,
    /// Lower energy (spectrum only).
    #[arg(long)]
    lower: Option<f64>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one configuration and print it with its spectrum below the energy.
    Sample(SampleFlags),
    /// Print the eigenvalues of one sample in [lower, energy].
    Spectrum(SampleFlags),
    /// P(spac_E < δ) over a δ-grid.
    SpacingTail(RunFlags),
    /// P(at least one eigenvalue in I) for several window widths.
    Wegner(RunFlags),
    /// P(at least two eigenvalues in [E-δ, E+δ]) over a δ-grid.
    Minami(RunFlags),
    /// Unfolded window counts and spacings with KS and chi-square tests.
    Poisson(RunFlags),
    /// Integrated density of states and its derivative on an energy grid.
    Dos(RunFlags),
    /// Exponential decay fits of low-lying eigenfunctions.
    Localization(RunFlags),
    /// Flatness of an isolated local cluster along one coupling.
    ClusterFlatness(RunFlags),
    /// Sublevel measure of the local window spacing along one coupling.
    Cartan(RunFlags),
    /// Search for a configuration that splits a local cluster.
    GoodConfig(RunFlags),
    /// Interval-cloning comparison across shifted windows.
    Cloning(RunFlags),
    /// Merge record files or run directories and print the statistics.
    Aggregate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct ModelDoc {
    model: ModelParams,
    #[serde(default)]
    master_seed: u64,
}

#[derive(Serialize)]
struct SampleOutput {
    index: u64,
    seed: u64,
    model_hash: String,
    couplings: Option<Vec<f64>>,
    interval: [f64; 2],
    eigenvalues: Vec<f64>,
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(HarnessError::from),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn sample(flags: &SampleFlags, with_couplings: bool) -> Result<(), HarnessError> {
    let doc: ModelDoc = toml::from_str(&read_text(&flags.config)?).map_err(|e| HarnessError::Config(e.to_string()))?;
    let model = doc.model;
    model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let hi = match flags.energy {
        Some(e) => e,
        None => thresholds(&model).map_err(|e| HarnessError::Config(e.to_string()))?.e_spc,
    };
    let lo = if with_couplings {
        f64::NEG_INFINITY
    } else {
        flags.lower.unwrap_or(f64::NEG_INFINITY)
    };
    let seed = derive_seed(flags.seed.unwrap_or(doc.master_seed), flags.index);
    let omega = sample_configuration(&model.density, &model.index_set(), seed);
    let op = assemble(&model, &omega).map_err(|e| HarnessError::Config(e.to_string()))?;
    let spec = eigs_in(&op, &Interval::new(lo, hi), false, MethodChoice::Auto)
        .map_err(|e| HarnessError::InsufficientData(e.to_string()))?;
    let out = SampleOutput {
        index: flags.index,
        seed,
        model_hash: model.hash_hex(),
        couplings: with_couplings.then(|| omega.values.clone()),
        interval: [lo, hi],
        eigenvalues: spec.eigenvalues,
    };
    emit(
        &serde_json::to_string_pretty(&out).expect("serializes"),
        flags.out.as_deref(),
    )
}

fn report(agg: &Aggregate) -> Result<(), HarnessError> {
    println!(
        "probe {}  samples {}  failures {}",
        agg.probe, agg.records, agg.failures
    );
    if agg.probe == "poisson" {
        let r = poisson_report(agg)?;
        println!("{}", serde_json::to_string_pretty(&r).expect("serializes"));
        return Ok(());
    }
    if let Some(ev) = primary_event(&agg.probe) {
        let r = probability_probe(agg, ev)?;
        println!("event {ev}");
        println!("energy,delta,n_samples,frequency,ci_low,ci_high");
        for row in &r.rows {
            println!(
                "{},{},{},{},{},{}",
                row.energy, row.delta, row.n_samples, row.frequency, row.ci_low, row.ci_high
            );
        }
        if let Some(norm) = &r.normalized {
            println!("normalized {norm:?}");
        }
        return Ok(());
    }
    let stats = aggregate_statistics(agg);
    println!("{}", serde_json::to_string_pretty(&stats).expect("serializes"));
    Ok(())
}

fn run(expected: &str, flags: &RunFlags) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::from_toml(&read_text(&flags.config)?)?;
    if cfg.probe.id() != expected {
        return Err(HarnessError::Config(format!(
            "configuration describes a {} probe, not {expected}",
            cfg.probe.id()
        )));
    }
    if let Some(s) = flags.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = flags.samples {
        cfg.n_samples = n;
    }
    if flags.out.is_some() {
        cfg.output = flags.out.clone();
    }
    if flags.workers.is_some() {
        cfg.workers = flags.workers;
    }
    let summary = run_ensemble(&cfg)?;
    if let Some(dir) = &summary.out_dir {
        log::info!("wrote {} files to {}", summary.files.len(), dir.display());
    }
    match &summary.aggregate {
        Some(agg) => report(agg),
        None => {
            println!("probe {expected}  samples 0");
            Ok(())
        }
    }
}

fn aggregate(inputs: &[PathBuf], out: Option<&Path>) -> Result<(), HarnessError> {
    let mut acc: Option<Aggregate> = None;
    for p in inputs {
        let records = read_run(p)?;
        if records.is_empty() {
            log::warn!("{}: no records", p.display());
            continue;
        }
        let a = Aggregate::from_records(&records)?;
        acc = Some(match acc {
            Some(x) => x.merge(&a)?,
            None => a,
        });
    }
    let agg = acc.ok_or_else(|| HarnessError::InsufficientData("no records in the inputs".into()))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(AGGREGATE_FILE), agg.to_json())?;
        write_summaries(&agg, dir)?;
    }
    report(&agg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(f) => sample(f, true),
        Command::Spectrum(f) => sample(f, false),
        Command::SpacingTail(f) => run("spacing_tail", f),
        Command::Wegner(f) => run("wegner", f),
        Command::Minami(f) => run("minami", f),
        Command::Poisson(f) => run("poisson", f),
        Command::Dos(f) => run("dos", f),
        Command::Localization(f) => run("localization", f),
        Command::ClusterFlatness(f) => run("cluster_flatness", f),
        Command::Cartan(f) => run("cartan", f),
        Command::GoodConfig(f) => run("good_config", f),
        Command::Cloning(f) => run("cloning", f),
        Command::Aggregate { inputs, out } => aggregate(inputs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
