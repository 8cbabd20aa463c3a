//! Experiment configuration documents.

use std::path::PathBuf;

use levelspacing_core::model::{thresholds, ModelParams};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One probability or diagnostic probe, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeConfig {
    /// `P(tr 1_I ≥ 1)` for windows `I = [E - w/2, E + w/2]`.
    Wegner { energy: f64, widths: Vec<f64> },
    /// `P(tr 1_{[E-δ, E+δ]} ≥ 2)` alongside `P(≥ 1)`.
    Minami { energy: f64, deltas: Vec<f64> },
    /// `P(spac_E < δ)`; `energy` defaults to `E_spc`.
    SpacingTail {
        #[serde(default)]
        energy: Option<f64>,
        deltas: Vec<f64>,
    },
    /// Unfolded window counts and spacings near `energy`.
    Poisson {
        energy: f64,
        /// Length `|B|` of the unfolded window `B = [0, |B|]`.
        window: f64,
        /// Consecutive spacings recorded per sample above `energy`.
        spacings_per_sample: usize,
        /// Half-width of the energy window used to estimate `n(E)`.
        dos_halfwidth: f64,
    },
    /// IDS and DOS on an energy grid.
    Dos { energies: Vec<f64> },
    /// Decay fits of the lowest `states` eigenfunctions below `energy`.
    Localization { energy: f64, states: usize },
    /// Lemma-type flatness of the cluster in `window` along one coupling.
    ClusterFlatness {
        center: Vec<f64>,
        ell: f64,
        epsilon: f64,
        window: [f64; 2],
        /// Position within `Γ_{ℓ,x}` of the coupling that is varied.
        #[serde(default)]
        coupling: usize,
    },
    /// Sublevel measure of the window spacing along one coupling.
    Cartan {
        center: Vec<f64>,
        ell: f64,
        epsilon: f64,
        window: [f64; 2],
        delta: f64,
        #[serde(default)]
        coupling: usize,
        #[serde(default = "default_draws")]
        draws: usize,
    },
    /// Good-configuration search around each sampled configuration.
    GoodConfig {
        center: Vec<f64>,
        ell: f64,
        epsilon: f64,
        window: [f64; 2],
        #[serde(default = "default_budget")]
        budget: usize,
    },
    /// Interval cloning: windows `[-δ, δ] + 2δ(i - 1) + energy`, `i = 1..K`,
    /// with `K = ⌊(2 L^d δ)^{-1}⌋` unless `windows` is given.
    Cloning {
        energy: f64,
        delta: f64,
        #[serde(default)]
        windows: Option<usize>,
    },
}

fn default_draws() -> usize {
    1000
}

fn default_budget() -> usize {
    200
}

impl ProbeConfig {
    pub fn id(&self) -> &'static str {
        match self {
            ProbeConfig::Wegner { .. } => "wegner",
            ProbeConfig::Minami { .. } => "minami",
            ProbeConfig::SpacingTail { .. } => "spacing_tail",
            ProbeConfig::Poisson { .. } => "poisson",
            ProbeConfig::Dos { .. } => "dos",
            ProbeConfig::Localization { .. } => "localization",
            ProbeConfig::ClusterFlatness { .. } => "cluster_flatness",
            ProbeConfig::Cartan { .. } => "cartan",
            ProbeConfig::GoodConfig { .. } => "good_config",
            ProbeConfig::Cloning { .. } => "cloning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub probe: ProbeConfig,
    pub n_samples: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Index of the first sample; lets a run be split into pieces.
    #[serde(default)]
    pub first_sample: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(model: ModelParams, probe: ProbeConfig, n_samples: u64, master_seed: u64) -> Self {
        Self {
            model,
            probe,
            n_samples,
            master_seed,
            first_sample: 0,
            output: None,
            workers: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hard errors for invalid parameters; warnings for energies outside the
    /// theorems' ranges.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let positive = |name: &str, xs: &[f64]| {
            if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                Err(HarnessError::Config(format!("{name} must be nonempty and positive")))
            } else {
                Ok(())
            }
        };
        let th = thresholds(&self.model).ok();
        match &self.probe {
            ProbeConfig::Wegner { widths, .. } => positive("widths", widths)?,
            ProbeConfig::Minami { energy, deltas } => {
                positive("deltas", deltas)?;
                if let Some(t) = &th {
                    if *energy > t.e_m {
                        log::warn!("Minami energy {energy} exceeds E_M = {}", t.e_m);
                    }
                }
            }
            ProbeConfig::SpacingTail { energy, deltas } => {
                positive("deltas", deltas)?;
                if let (Some(e), Some(t)) = (energy, &th) {
                    if *e > t.e_spc {
                        log::warn!("spacing energy {e} exceeds E_spc = {}", t.e_spc);
                    }
                }
            }
            ProbeConfig::Poisson {
                window,
                spacings_per_sample,
                dos_halfwidth,
                ..
            } => {
                positive("window", &[*window])?;
                positive("dos_halfwidth", &[*dos_halfwidth])?;
                if *spacings_per_sample == 0 {
                    return Err(HarnessError::Config("spacings_per_sample must be positive".into()));
                }
            }
            ProbeConfig::Dos { energies } => {
                if energies.windows(2).any(|w| !(w[1] > w[0])) || energies.is_empty() {
                    return Err(HarnessError::Config("energies must be strictly increasing".into()));
                }
            }
            ProbeConfig::Localization { states, .. } => {
                if *states == 0 {
                    return Err(HarnessError::Config("states must be positive".into()));
                }
            }
            ProbeConfig::ClusterFlatness { center, ell, epsilon, .. }
            | ProbeConfig::Cartan { center, ell, epsilon, .. }
            | ProbeConfig::GoodConfig { center, ell, epsilon, .. } => {
                if center.len() != self.model.d {
                    return Err(HarnessError::Config("center must have d coordinates".into()));
                }
                positive("ell", &[*ell])?;
                positive("epsilon", &[*epsilon])?;
                if let ProbeConfig::Cartan { delta, .. } = &self.probe {
                    positive("delta", &[*delta])?;
                }
            }
            ProbeConfig::Cloning { delta, .. } => positive("delta", &[*delta])?,
        }
        Ok(())
    }

    /// Spacing-probe energy, defaulting to `E_spc`.
    pub fn spacing_energy(&self) -> Result<f64, HarnessError> {
        match &self.probe {
            ProbeConfig::SpacingTail { energy: Some(e), .. } => Ok(*e),
            _ => thresholds(&self.model)
                .map(|t| t.e_spc)
                .map_err(|e| HarnessError::Config(e.to_string())),
        }
    }

    pub fn volume(&self) -> f64 {
        self.model.box_side.powi(self.model.d as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig::new(
            ModelParams::standard(1, 1.0, 16.0, 0.25),
            ProbeConfig::Wegner {
                energy: 1.0,
                widths: vec![0.1, 0.05],
            },
            10,
            3,
        );
        let text = cfg.to_toml();
        assert!(text.contains("kind = \"wegner\""));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_bad_probe_parameters() {
        let mut cfg = ExperimentConfig::new(
            ModelParams::standard(1, 1.0, 16.0, 0.25),
            ProbeConfig::Minami {
                energy: 1.0,
                deltas: vec![0.1, -0.05],
            },
            10,
            3,
        );
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.probe = ProbeConfig::Dos {
            energies: vec![1.0, 0.5],
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spacing_energy_defaults_to_threshold() {
        let cfg = ExperimentConfig::new(
            ModelParams::standard(1, 1.0, 16.0, 0.25),
            ProbeConfig::SpacingTail {
                energy: None,
                deltas: vec![0.1],
            },
            1,
            0,
        );
        let e = cfg.spacing_energy().unwrap();
        assert!((e - std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }
}
