//! Eigenfunction and resolvent localization diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{potential_field, DiscretizeError, Grid, SparseSymOperator};
use crate::discretize::{assemble, CsrMatrix, Provenance};
use crate::model::{derive_seed, sample_configuration, Configuration, LatticePoint, ModelParams};
use crate::spectral::{Resolvent, SpectralError};

/// Masses at or below this floor are left out of log-linear fits.
pub const MASS_FLOOR: f64 = 1e-14;

/// Minimum number of cells above the floor for a decay fit.
pub const MIN_FIT_CELLS: usize = 4;

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("vector is not normalized: norm {0}")]
    NotNormalized(f64),
    #[error("vector length {0} does not match grid size {1}")]
    Length(usize, usize),
    #[error("need at least {needed} cells above the mass floor, found {found}")]
    InsufficientCells { needed: usize, found: usize },
    #[error("fractional moment exponent must lie in (0, 1), got {0}")]
    Exponent(f64),
    #[error("cell {0:?} holds no grid nodes")]
    EmptyCell(LatticePoint),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Per-cell masses `‖χ_y ψ‖` of a unit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionProfile {
    pub d: usize,
    /// Cells in lexicographic order.
    pub cells: Vec<LatticePoint>,
    pub mass: Vec<f64>,
    pub eigenvalue: Option<f64>,
}

/// Sup-norm distance `max_i |x_i - y_i|`.
pub fn sup_distance(x: &LatticePoint, y: &LatticePoint, d: usize) -> f64 {
    (0..d).map(|a| (x[a] - y[a]).unsigned_abs()).max().unwrap_or(0) as f64
}

pub fn local_norms(psi: &[f64], grid: &Grid) -> Result<EigenfunctionProfile, LocalizationError> {
    if psi.len() != grid.len() {
        return Err(LocalizationError::Length(psi.len(), grid.len()));
    }
    let norm = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(LocalizationError::NotNormalized(norm));
    }
    let mut acc: BTreeMap<LatticePoint, f64> = BTreeMap::new();
    for (node, v) in psi.iter().enumerate() {
        *acc.entry(grid.cell_of(node)).or_insert(0.0) += v * v;
    }
    let (cells, sq): (Vec<_>, Vec<_>) = acc.into_iter().unzip();
    Ok(EigenfunctionProfile {
        d: grid.d,
        cells,
        mass: sq.into_iter().map(f64::sqrt).collect(),
        eigenvalue: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationCenter {
    pub cell: LatticePoint,
    pub index: usize,
    /// Another cell carries the same maximal mass.
    pub tie: bool,
}

/// Cell of maximal mass; ties go to the lexicographically smallest cell.
pub fn localization_center(profile: &EigenfunctionProfile) -> Option<LocalizationCenter> {
    let max = profile.mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max.abs();
    let mut winners = profile.mass.iter().enumerate().filter(|(_, &m)| m >= max - tol);
    let (index, _) = winners.next()?;
    Some(LocalizationCenter {
        cell: profile.cells[index],
        index,
        tie: winners.next().is_some(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted rate in `mass ≈ C e^{-m' |y - x|}`.
    pub m_prime: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_cells: usize,
}

/// Least-squares line through `(x, y)`: slope, intercept, r².
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot <= 1e-30 * n {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some((slope, intercept, r2))
}

/// Fits `log mass(y)` against `-|y - x_center|` over cells above the floor.
pub fn decay_rate_fit(profile: &EigenfunctionProfile) -> Result<DecayFit, LocalizationError> {
    let kept: Vec<usize> = (0..profile.mass.len())
        .filter(|&i| profile.mass[i] > MASS_FLOOR)
        .collect();
    let insufficient = LocalizationError::InsufficientCells {
        needed: MIN_FIT_CELLS,
        found: kept.len(),
    };
    if kept.len() < MIN_FIT_CELLS {
        return Err(insufficient);
    }
    let center = localization_center(profile).expect("nonempty profile").cell;
    let x: Vec<f64> = kept
        .iter()
        .map(|&i| sup_distance(&profile.cells[i], &center, profile.d))
        .collect();
    let y: Vec<f64> = kept.iter().map(|&i| profile.mass[i].ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y).ok_or(insufficient)?;
    Ok(DecayFit {
        m_prime: -slope,
        intercept,
        r_squared,
        n_cells: kept.len(),
    })
}

/// Aggregated `E‖χ_x R_E χ_y‖^s` at one sup-distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub distance: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub rejections: u64,
}

/// Running `(count, sum, sum of squares)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalMomentReport {
    pub energy: f64,
    pub s: f64,
    pub rows: Vec<DecayRow>,
    /// `C_loc` and `m` from `log mean ≈ log C_loc - m |x - y|`, when at least
    /// two distances have a positive mean.
    pub c_loc: Option<f64>,
    pub m: Option<f64>,
    pub r_squared: Option<f64>,
    pub samples: u64,
    pub rejections: u64,
    /// More than half of the attempted samples were rejected.
    pub unreliable: bool,
    /// The probe is restricted to `U = Λ_L`.
    pub domain: String,
}

/// Attempts per sample before a near-singular sample is given up.
const MAX_RESAMPLES: u64 = 16;

/// Fractional moments of the resolvent for operators produced by `build`
/// from sampled configurations.
#[allow(clippy::too_many_arguments)]
pub fn fractional_moment_probe_with<F>(
    params: &ModelParams,
    energy: f64,
    s: f64,
    pairs: &[(LatticePoint, LatticePoint)],
    n_samples: u64,
    seed: u64,
    build: F,
) -> Result<FractionalMomentReport, LocalizationError>
where
    F: Fn(&Configuration) -> Result<SparseSymOperator, LocalizationError>,
{
    if !(s > 0.0 && s < 1.0) {
        return Err(LocalizationError::Exponent(s));
    }
    let indices = params.index_set();
    let mut by_distance: BTreeMap<u64, (Moments, u64)> = BTreeMap::new();
    let mut rejections = 0u64;
    let mut accepted = 0u64;
    let mut cell_nodes: Option<Vec<(Vec<usize>, Vec<usize>)>> = None;
    for i in 0..n_samples {
        let mut done = false;
        for attempt in 0..MAX_RESAMPLES {
            let sample_seed = derive_seed(derive_seed(seed, i), attempt);
            let omega = sample_configuration(&params.density, &indices, sample_seed);
            let op = build(&omega)?;
            let nodes = match &cell_nodes {
                Some(n) => n,
                None => {
                    let mut v = Vec::new();
                    for (x, y) in pairs {
                        let nx = op.grid.nodes_in_cell(x);
                        let ny = op.grid.nodes_in_cell(y);
                        if nx.is_empty() {
                            return Err(LocalizationError::EmptyCell(*x));
                        }
                        if ny.is_empty() {
                            return Err(LocalizationError::EmptyCell(*y));
                        }
                        v.push((nx, ny));
                    }
                    cell_nodes.insert(v)
                }
            };
            let res = match Resolvent::new(&op.matrix, energy) {
                Ok(r) => r,
                Err(SpectralError::NearSingular { .. }) => {
                    rejections += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            for ((x, y), (nx, ny)) in pairs.iter().zip(nodes) {
                let v = res.block_norm(nx, ny)?.powf(s);
                let key = sup_distance(x, y, params.d) as u64;
                by_distance.entry(key).or_default().0.push(v);
            }
            accepted += 1;
            done = true;
            break;
        }
        if !done {
            for (x, y) in pairs {
                by_distance.entry(sup_distance(x, y, params.d) as u64).or_default().1 += 1;
            }
        }
    }
    let rows: Vec<DecayRow> = by_distance
        .iter()
        .map(|(&dist, (m, rej))| DecayRow {
            distance: dist as f64,
            mean: m.mean(),
            stderr: m.stderr(),
            n: m.n,
            rejections: *rej,
        })
        .collect();
    let fit_pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean > 0.0 && r.mean.is_finite())
        .map(|r| (r.distance, r.mean.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = fit_pts.into_iter().unzip();
    let fit = linear_fit(&xs, &ys);
    let attempts = accepted + rejections;
    Ok(FractionalMomentReport {
        energy,
        s,
        rows,
        c_loc: fit.map(|f| f.1.exp()),
        m: fit.map(|f| -f.0),
        r_squared: fit.map(|f| f.2),
        samples: accepted,
        rejections,
        unreliable: attempts > 0 && 2 * rejections > attempts,
        domain: "U = Λ_L".into(),
    })
}

/// Fractional moments for the model operator `H_{ω,L}`.
pub fn fractional_moment_probe(
    params: &ModelParams,
    energy: f64,
    s: f64,
    pairs: &[(LatticePoint, LatticePoint)],
    n_samples: u64,
    seed: u64,
) -> Result<FractionalMomentReport, LocalizationError> {
    fractional_moment_probe_with(params, energy, s, pairs, n_samples, seed, |omega| {
        Ok(assemble(params, omega)?)
    })
}

/// The potential part `diag(V_o + V_ω)` alone: the model with zero kinetic term.
pub fn diagonal_surrogate(params: &ModelParams, omega: &Configuration) -> Result<SparseSymOperator, LocalizationError> {
    params.validate().map_err(DiscretizeError::from)?;
    let grid = Grid::full(params);
    let pot = potential_field(params, omega, &grid);
    let diag: Vec<f64> = (0..grid.len())
        .map(|i| params.background.value(&grid.position(i)[..grid.d]) + pot.values[i])
        .collect();
    Ok(SparseSymOperator {
        matrix: CsrMatrix::diagonal_matrix(&diag),
        grid,
        provenance: Provenance {
            model_hash: params.hash_hex(),
            config_seed: omega.seed,
        },
    })
}
