//! Per-sample measurements. Each probe turns one sampled configuration into
//! integer tallies and scalar values; nothing here depends on scheduling.

use std::collections::BTreeMap;

use levelspacing_core::cluster::{
    cartan_sublevel_measure, cluster_flatness, local_couplings, search_good_configuration, CartanOptions,
    ClusterError, ClusterWindow, ParamFamily, SearchOptions,
};
use levelspacing_core::discretize::{assemble, SparseSymOperator};
use levelspacing_core::localization::{decay_rate_fit, local_norms};
use levelspacing_core::model::{derive_seed, sample_configuration, Configuration, LatticePoint};
use levelspacing_core::spacing_stats::{has_degenerate_pair, spacing_below, unfolded_counts, unfolded_spacings_after};
use levelspacing_core::spectral::{count_interval, eigs_below, eigs_in, Interval, MethodChoice, Spectrum};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ProbeConfig};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub dim: usize,
    pub method: String,
    pub eigenvalues: usize,
    pub iterations: usize,
}

/// One persisted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub probe: String,
    pub model_hash: String,
    pub sample: u64,
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
    /// Probe grids (energies, widths, deltas); identical across a run.
    pub axes: BTreeMap<String, Vec<f64>>,
    /// Integer tallies, summed on merge.
    pub counters: BTreeMap<String, Vec<u64>>,
    /// Scalar observations, pooled on merge.
    pub values: BTreeMap<String, Vec<f64>>,
}

fn diag(op: &SparseSymOperator, spec: Option<&Spectrum>) -> SolverDiagnostics {
    SolverDiagnostics {
        dim: op.dim(),
        method: spec.map_or("inertia".into(), |s| format!("{:?}", s.method).to_lowercase()),
        eigenvalues: spec.map_or(0, |s| s.len()),
        iterations: spec.map_or(0, |s| s.iterations),
    }
}

fn flag(b: bool) -> u64 {
    u64::from(b)
}

/// Grids that describe the probe, written into every record.
pub fn probe_axes(cfg: &ExperimentConfig) -> Result<BTreeMap<String, Vec<f64>>, HarnessError> {
    let mut axes = BTreeMap::new();
    axes.insert("volume".to_string(), vec![cfg.volume()]);
    match &cfg.probe {
        ProbeConfig::Wegner { energy, widths } => {
            axes.insert("energy".into(), vec![*energy]);
            axes.insert("width".into(), widths.clone());
        }
        ProbeConfig::Minami { energy, deltas } => {
            axes.insert("energy".into(), vec![*energy]);
            axes.insert("delta".into(), deltas.clone());
        }
        ProbeConfig::SpacingTail { deltas, .. } => {
            axes.insert("energy".into(), vec![cfg.spacing_energy()?]);
            axes.insert("delta".into(), deltas.clone());
        }
        ProbeConfig::Poisson {
            energy,
            window,
            dos_halfwidth,
            ..
        } => {
            axes.insert("energy".into(), vec![*energy]);
            axes.insert("window".into(), vec![*window]);
            axes.insert("dos_halfwidth".into(), vec![*dos_halfwidth]);
        }
        ProbeConfig::Dos { energies } => {
            axes.insert("energy".into(), energies.clone());
        }
        ProbeConfig::Localization { energy, .. } => {
            axes.insert("energy".into(), vec![*energy]);
        }
        ProbeConfig::ClusterFlatness { epsilon, window, .. } | ProbeConfig::GoodConfig { epsilon, window, .. } => {
            axes.insert("epsilon".into(), vec![*epsilon]);
            axes.insert("window".into(), window.to_vec());
        }
        ProbeConfig::Cartan {
            epsilon, window, delta, ..
        } => {
            axes.insert("epsilon".into(), vec![*epsilon]);
            axes.insert("window".into(), window.to_vec());
            axes.insert("delta".into(), vec![*delta]);
        }
        ProbeConfig::Cloning { energy, delta, .. } => {
            axes.insert("energy".into(), cloning_centers(cfg, *energy, *delta));
            axes.insert("delta".into(), vec![*delta]);
        }
    }
    Ok(axes)
}

/// Centers `energy + 2δ(i - 1)` of the cloned windows.
pub fn cloning_centers(cfg: &ExperimentConfig, energy: f64, delta: f64) -> Vec<f64> {
    let k = match &cfg.probe {
        ProbeConfig::Cloning { windows: Some(k), .. } => *k,
        _ => ((2.0 * cfg.volume() * delta).recip().floor() as usize).max(1),
    };
    (0..k).map(|i| energy + 2.0 * delta * i as f64).collect()
}

/// Measures sample `index`. Solver failures become failed records.
pub fn measure(cfg: &ExperimentConfig, axes: &BTreeMap<String, Vec<f64>>, index: u64) -> EnsembleRecord {
    let seed = derive_seed(cfg.master_seed, index);
    let mut rec = EnsembleRecord {
        probe: cfg.probe.id().to_string(),
        model_hash: cfg.model.hash_hex(),
        sample: index,
        seed,
        ok: true,
        error: None,
        solver: None,
        axes: axes.clone(),
        counters: BTreeMap::new(),
        values: BTreeMap::new(),
    };
    if let Err(e) = measure_into(cfg, seed, &mut rec) {
        rec.ok = false;
        rec.error = Some(e);
        rec.counters.clear();
        rec.values.clear();
    }
    rec
}

fn cluster_family(
    cfg: &ExperimentConfig,
    omega: &Configuration,
    center: &[f64],
    ell: f64,
    epsilon: f64,
    coupling: usize,
) -> Result<(ParamFamily, LatticePoint), String> {
    let couplings = local_couplings(&cfg.model, center, ell);
    let k = *couplings
        .get(coupling)
        .ok_or_else(|| format!("coupling {coupling} outside Γ_(ℓ,x) of size {}", couplings.len()))?;
    let family = ParamFamily::from_model(&cfg.model, omega, center, ell, &[k], epsilon).map_err(|e| e.to_string())?;
    Ok((family, k))
}

fn measure_into(cfg: &ExperimentConfig, seed: u64, rec: &mut EnsembleRecord) -> Result<(), String> {
    let model = &cfg.model;
    let omega = sample_configuration(&model.density, &model.index_set(), seed);
    let op = assemble(model, &omega).map_err(|e| e.to_string())?;
    let volume = cfg.volume();
    let counters = &mut rec.counters;
    let values = &mut rec.values;
    match &cfg.probe {
        ProbeConfig::Wegner { energy, widths } => {
            let ge1 = widths
                .iter()
                .map(|w| flag(count_interval(&op, &Interval::centered(*energy, 0.5 * w)).count >= 1))
                .collect();
            counters.insert("ge1".into(), ge1);
            rec.solver = Some(diag(&op, None));
        }
        ProbeConfig::Minami { energy, deltas } => {
            let counts: Vec<usize> = deltas
                .iter()
                .map(|d| count_interval(&op, &Interval::centered(*energy, *d)).count)
                .collect();
            counters.insert("ge1".into(), counts.iter().map(|&c| flag(c >= 1)).collect());
            counters.insert("ge2".into(), counts.iter().map(|&c| flag(c >= 2)).collect());
            rec.solver = Some(diag(&op, None));
        }
        ProbeConfig::Cloning { delta, .. } => {
            let counts: Vec<usize> = rec.axes["energy"]
                .iter()
                .map(|c| count_interval(&op, &Interval::centered(*c, *delta)).count)
                .collect();
            counters.insert("ge1".into(), counts.iter().map(|&c| flag(c >= 1)).collect());
            counters.insert("ge2".into(), counts.iter().map(|&c| flag(c >= 2)).collect());
            rec.solver = Some(diag(&op, None));
        }
        ProbeConfig::SpacingTail { deltas, .. } => {
            let energy = rec.axes["energy"][0];
            let spec = eigs_below(&op, energy, false).map_err(|e| e.to_string())?;
            let sp = spacing_below(&spec, energy);
            counters.insert("below".into(), deltas.iter().map(|d| flag(sp < *d)).collect());
            counters.insert(
                "degenerate".into(),
                vec![flag(has_degenerate_pair(&spec, &Interval::below(energy)))],
            );
            counters.insert("levels".into(), vec![spec.len() as u64]);
            if sp.is_finite() {
                values.insert("spacing".into(), vec![sp]);
            }
            rec.solver = Some(diag(&op, Some(&spec)));
        }
        ProbeConfig::Poisson {
            energy,
            window,
            spacings_per_sample,
            dos_halfwidth,
        } => {
            let span = (window / volume).max(*dos_halfwidth);
            let upper = energy + 4.0 * span;
            let spec = eigs_in(&op, &Interval::below(upper), false, MethodChoice::Auto).map_err(|e| e.to_string())?;
            let c = unfolded_counts(&spec, *energy, volume, &Interval::new(0.0, *window));
            let dos = spec.index_range(&Interval::centered(*energy, *dos_halfwidth)).len();
            counters.insert("dos_count".into(), vec![dos as u64]);
            counters.insert("dos_count_sq".into(), vec![(dos * dos) as u64]);
            values.insert("window_count".into(), vec![c as f64]);
            values.insert(
                "spacings".into(),
                unfolded_spacings_after(&spec, *energy, volume, *spacings_per_sample),
            );
            rec.solver = Some(diag(&op, Some(&spec)));
        }
        ProbeConfig::Dos { energies } => {
            let counts: Vec<u64> = energies
                .iter()
                .map(|e| count_interval(&op, &Interval::below(*e)).count as u64)
                .collect();
            // interior differences feed the DOS standard error
            let diff: Vec<u64> = (1..counts.len().saturating_sub(1))
                .map(|g| counts[g + 1] - counts[g - 1])
                .collect();
            counters.insert("below_sq".into(), counts.iter().map(|c| c * c).collect());
            counters.insert("below".into(), counts);
            counters.insert("diff_sq".into(), diff.iter().map(|c| c * c).collect());
            counters.insert("diff".into(), diff);
            rec.solver = Some(diag(&op, None));
        }
        ProbeConfig::Localization { energy, states } => {
            let spec = eigs_below(&op, *energy, true).map_err(|e| e.to_string())?;
            let vecs = spec.eigenvectors.as_ref().expect("vectors requested");
            let mut fitted = 0;
            let mut good = 0;
            let (mut m, mut r2) = (Vec::new(), Vec::new());
            for j in 0..spec.len().min(*states) {
                let col: Vec<f64> = vecs.column(j).iter().copied().collect();
                let profile = local_norms(&col, &op.grid).map_err(|e| e.to_string())?;
                if let Ok(f) = decay_rate_fit(&profile) {
                    fitted += 1;
                    good += u64::from(f.m_prime > 0.0 && f.r_squared > 0.9);
                    m.push(f.m_prime);
                    r2.push(f.r_squared);
                }
            }
            counters.insert("fitted".into(), vec![fitted]);
            counters.insert("good".into(), vec![good]);
            counters.insert("all_good".into(), vec![flag(fitted > 0 && good == fitted)]);
            values.insert("m_prime".into(), m);
            values.insert("r_squared".into(), r2);
            rec.solver = Some(diag(&op, Some(&spec)));
        }
        ProbeConfig::ClusterFlatness {
            center,
            ell,
            epsilon,
            window,
            coupling,
        } => {
            let (family, _) = cluster_family(cfg, &omega, center, *ell, *epsilon, *coupling)?;
            let win = ClusterWindow::new(Interval::new(window[0], window[1]), *epsilon).map_err(|e| e.to_string())?;
            match cluster_flatness(&family, 0, &win) {
                Ok(r) => {
                    counters.insert("violation".into(), vec![flag(r.violation)]);
                    counters.insert("refused".into(), vec![0]);
                    values.insert("sup_norm".into(), vec![r.sup_norm]);
                    values.insert("bound".into(), vec![r.bound]);
                    values.insert("delta".into(), vec![r.delta]);
                }
                Err(ClusterError::GapViolated { .. } | ClusterError::EmptyCluster) => {
                    counters.insert("violation".into(), vec![0]);
                    counters.insert("refused".into(), vec![1]);
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        ProbeConfig::Cartan {
            center,
            ell,
            epsilon,
            window,
            delta,
            coupling,
            draws,
        } => {
            let (family, _) = cluster_family(cfg, &omega, center, *ell, *epsilon, *coupling)?;
            let win = ClusterWindow::new(Interval::new(window[0], window[1]), *epsilon).map_err(|e| e.to_string())?;
            let r = cartan_sublevel_measure(
                &family,
                &win,
                *delta,
                &CartanOptions {
                    n_draws: *draws,
                    seed: derive_seed(seed, 1),
                    ..Default::default()
                },
            );
            counters.insert("hits".into(), vec![r.monte_carlo.successes]);
            counters.insert("draws".into(), vec![r.monte_carlo.n]);
            counters.insert("conditioned".into(), vec![flag(r.conditioned)]);
            if let Some(g) = r.grid_scan {
                values.insert("grid_scan".into(), vec![g]);
            }
        }
        ProbeConfig::GoodConfig {
            center,
            ell,
            epsilon,
            window,
            budget,
        } => {
            let opts = SearchOptions {
                budget: *budget,
                seed: derive_seed(seed, 2),
                ..Default::default()
            };
            match search_good_configuration(
                model,
                &omega,
                center,
                *ell,
                *epsilon,
                &Interval::new(window[0], window[1]),
                &opts,
            ) {
                Ok(r) => {
                    let inside = omega
                        .values
                        .iter()
                        .zip(&r.omega.values)
                        .all(|(a, b)| (a - b).abs() <= epsilon * (1.0 + 1e-12) && (0.0..=1.0).contains(b));
                    counters.insert("inside".into(), vec![flag(inside)]);
                    counters.insert("complete".into(), vec![flag(r.complete)]);
                    counters.insert("refused".into(), vec![0]);
                    counters.insert(
                        "improved10".into(),
                        vec![flag(r.spacing >= 10.0 * r.initial_spacing && r.spacing > 0.0)],
                    );
                    if r.initial_spacing.is_finite() {
                        values.insert("initial".into(), vec![r.initial_spacing]);
                        values.insert("achieved".into(), vec![r.spacing]);
                    }
                }
                Err(ClusterError::Precondition(_)) => {
                    for key in ["inside", "complete", "improved10"] {
                        counters.insert(key.into(), vec![0]);
                    }
                    counters.insert("refused".into(), vec![1]);
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    Ok(())
}
