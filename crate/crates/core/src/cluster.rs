//! Perturbation analysis of isolated eigenvalue clusters along coupling
//! families `A + Σ s_k B_k`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{potential_field, restrict_box, DiscretizeError};
use crate::model::{Configuration, LatticePoint, ModelParams};
use crate::spacing_stats::{min_gap, Frequency};
use crate::spectral::{
    max_eigenvalue, min_eigenvalue, spectral_projection, sym_norm, Interval, SpectralError, DEGENERACY_TOL,
};

/// Slack on the direction bounds `‖B_k‖ <= 1`, `Σ B_k <= 1`.
const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("direction {index}: {reason}")]
    Direction { index: usize, reason: String },
    #[error("window violates |I| <= 1/2, 0 < eps < 1/12: |I| = {length}, eps = {epsilon}")]
    Window { length: f64, epsilon: f64 },
    #[error("no eigenvalues in the cluster window")]
    EmptyCluster,
    #[error("gap condition fails at s = {s:?}: gap {gap} < {required}")]
    GapViolated { s: Vec<f64>, gap: f64, required: f64 },
    #[error("parameter index {0} out of range")]
    Parameter(usize),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
}

/// `A_s = A + Σ_k s_k B_k` for `s ∈ (-ε, ε)^N`.
#[derive(Debug, Clone)]
pub struct ParamFamily {
    pub base: DMatrix<f64>,
    pub directions: Vec<DMatrix<f64>>,
    pub epsilon: f64,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() <= BOUND_SLACK * m.abs().max().max(1.0)
}

impl ParamFamily {
    /// Checks symmetry and `‖B_k‖ <= 1`. Positivity is not required here;
    /// see [`ParamFamily::is_alloy_type`].
    pub fn new(base: DMatrix<f64>, directions: Vec<DMatrix<f64>>, epsilon: f64) -> Result<Self, ClusterError> {
        if !symmetric(&base) {
            return Err(ClusterError::Direction {
                index: usize::MAX,
                reason: "base operator is not symmetric".into(),
            });
        }
        for (index, b) in directions.iter().enumerate() {
            if b.shape() != base.shape() || !symmetric(b) {
                return Err(ClusterError::Direction {
                    index,
                    reason: "not a symmetric matrix of the base's size".into(),
                });
            }
            let norm = sym_norm(b);
            if norm > 1.0 + BOUND_SLACK {
                return Err(ClusterError::Direction {
                    index,
                    reason: format!("norm {norm} exceeds 1"),
                });
            }
        }
        if !(epsilon > 0.0) {
            return Err(ClusterError::Window {
                length: 0.0,
                epsilon,
            });
        }
        Ok(Self {
            base,
            directions,
            epsilon,
        })
    }

    /// `0 <= B_k` for every `k` and `Σ_k B_k <= 1`.
    pub fn is_alloy_type(&self) -> bool {
        if self.directions.is_empty() {
            return true;
        }
        let positive = self.directions.iter().all(|b| min_eigenvalue(b) >= -BOUND_SLACK);
        let sum = self
            .directions
            .iter()
            .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, b| acc + b);
        positive && max_eigenvalue(&sum) <= 1.0 + BOUND_SLACK
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.directions.len()
    }

    pub fn at(&self, s: &[f64]) -> DMatrix<f64> {
        let mut a = self.base.clone();
        for (sk, b) in s.iter().zip(&self.directions) {
            if *sk != 0.0 {
                a += b * *sk;
            }
        }
        a
    }

    /// `A_s` with only coordinate `k` moved away from `s0`.
    pub fn along(&self, s0: &[f64], k: usize, t: f64) -> DMatrix<f64> {
        let mut s = s0.to_vec();
        s[k] += t;
        self.at(&s)
    }

    /// Family built from the local operator on `Λ_ℓ(x)` with directions
    /// `diag(V_k)` for each coupling in `couplings`.
    pub fn from_model(
        params: &ModelParams,
        omega: &Configuration,
        center: &[f64],
        ell: f64,
        couplings: &[LatticePoint],
        epsilon: f64,
    ) -> Result<Self, ClusterError> {
        let op = restrict_box(params, omega, center, ell)?;
        let directions = couplings
            .iter()
            .map(|k| {
                let single = Configuration::new(vec![*k], vec![1.0]);
                let v = potential_field(params, &single, &op.grid).values;
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
            })
            .collect();
        Self::new(op.to_dense(), directions, epsilon)
    }
}

/// Lattice points of `Γ_L` inside the open box `Λ_ℓ(x)`.
pub fn local_couplings(params: &ModelParams, center: &[f64], ell: f64) -> Vec<LatticePoint> {
    params
        .index_set()
        .into_iter()
        .filter(|k| (0..params.d).all(|a| (k[a] as f64 - center[a]).abs() < 0.5 * ell))
        .collect()
}

/// Energy window `I` with gap parameter `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterWindow {
    pub interval: Interval,
    pub epsilon: f64,
}

impl ClusterWindow {
    /// Enforces `|I| <= 1/2` and `0 < ε < 1/12`.
    pub fn new(interval: Interval, epsilon: f64) -> Result<Self, ClusterError> {
        let length = interval.hi - interval.lo;
        if !((0.0..=0.5).contains(&length) && epsilon > 0.0 && epsilon < 1.0 / 12.0) {
            return Err(ClusterError::Window { length, epsilon });
        }
        Ok(Self { interval, epsilon })
    }

    /// `I_ε = I + (-ε, ε)`, closed.
    pub fn enlarged(&self) -> Interval {
        self.interval.enlarge(self.epsilon)
    }
}

fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let e = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn sorted_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Index range of the eigenvalues in `I` plus the distance from `I` to the
/// rest of the spectrum.
fn cluster_in(values: &[f64], interval: &Interval) -> (std::ops::Range<usize>, f64) {
    let a = values.partition_point(|&v| v < interval.lo);
    let b = values.partition_point(|&v| v <= interval.hi).max(a);
    let below = if a > 0 { interval.lo - values[a - 1] } else { f64::INFINITY };
    let above = values.get(b).map_or(f64::INFINITY, |v| v - interval.hi);
    (a..b, below.min(above))
}

/// `(1/n) tr(P B P)` with `P = 1_I(A)`.
pub fn feynman_hellmann_slope(a: &DMatrix<f64>, b: &DMatrix<f64>, interval: &Interval) -> Result<f64, ClusterError> {
    let p = spectral_projection(a, interval)?;
    let n = p.rank();
    if n == 0 {
        return Err(ClusterError::EmptyCluster);
    }
    let q = &p.basis;
    Ok((q.transpose() * b * q).trace() / n as f64)
}

/// Central finite-difference step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub first: f64,
    pub second: f64,
}

impl StepSizes {
    pub fn for_epsilon(epsilon: f64) -> Self {
        Self {
            first: 1e-5 * epsilon,
            second: 1e-3 * epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub first: f64,
    pub second: f64,
    pub bound_first: f64,
    pub bound_second: f64,
    pub steps: StepSizes,
    pub within_first: bool,
    pub within_second: bool,
}

/// Tolerance factor applied to the analytic bounds.
pub const BOUND_TOLERANCE: f64 = 0.05;

/// Eigen data of `A_s` restricted to the `n` eigenvalues that sit in `I_ε`.
struct Slice {
    values: Vec<f64>,
    basis: DMatrix<f64>,
}

fn projector_at(a: &DMatrix<f64>, range: &std::ops::Range<usize>) -> Slice {
    let (values, vectors) = sorted_eigen(a);
    Slice {
        values: values[range.clone()].to_vec(),
        basis: vectors.columns(range.start, range.len()).into_owned(),
    }
}

/// Verifies the `n` eigenvalues at indices `range` stay in `I_ε` and the rest
/// keep distance `>= required` from `I_ε`.
fn check_gap(
    values: &[f64],
    range: &std::ops::Range<usize>,
    enlarged: &Interval,
    required: f64,
    s: &[f64],
) -> Result<(), ClusterError> {
    let (r, gap) = cluster_in(values, enlarged);
    if r != *range || gap < required {
        return Err(ClusterError::GapViolated {
            s: s.to_vec(),
            gap: if r != *range { 0.0 } else { gap },
            required,
        });
    }
    Ok(())
}

/// Finite-difference `‖∂_s P_s‖` and `‖∂²_s P_s‖` at `s0` along direction `k`,
/// for `P_s = 1_{I_ε}(A_s)`, compared with `1/(2ε)` and `1/(π ε²)`.
pub fn projection_derivative_norm(
    family: &ParamFamily,
    k: usize,
    s0: &[f64],
    window: &ClusterWindow,
) -> Result<DerivativeReport, ClusterError> {
    if k >= family.n_params() || s0.len() != family.n_params() {
        return Err(ClusterError::Parameter(k));
    }
    let eps = window.epsilon;
    let steps = StepSizes::for_epsilon(eps);
    let enlarged = window.enlarged();
    let required = 4.0 * eps;
    let base_values = sorted_values(&family.at(s0));
    let (range, _) = cluster_in(&base_values, &enlarged);
    let proj = |t: f64| -> Result<DMatrix<f64>, ClusterError> {
        let a = family.along(s0, k, t);
        let (values, vectors) = sorted_eigen(&a);
        let mut s = s0.to_vec();
        s[k] += t;
        check_gap(&values, &range, &enlarged, required, &s)?;
        let q = vectors.columns(range.start, range.len()).into_owned();
        Ok(&q * q.transpose())
    };
    let p0 = proj(0.0)?;
    let (h1, h2) = (steps.first, steps.second);
    let d1 = (proj(h1)? - proj(-h1)?) / (2.0 * h1);
    let d2 = (proj(h2)? - &p0 * 2.0 + proj(-h2)?) / (h2 * h2);
    let first = sym_norm(&((&d1 + d1.transpose()) * 0.5));
    let second = sym_norm(&((&d2 + d2.transpose()) * 0.5));
    let bound_first = 1.0 / (2.0 * eps);
    let bound_second = 1.0 / (std::f64::consts::PI * eps * eps);
    Ok(DerivativeReport {
        first,
        second,
        bound_first,
        bound_second,
        steps,
        within_first: first <= bound_first * (1.0 + BOUND_TOLERANCE),
        within_second: second <= bound_second * (1.0 + BOUND_TOLERANCE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    /// Measured spread `sup_s sup_i |E_i^s - Ē^s|`.
    pub delta: f64,
    /// `sup_s ‖P_s (B - ∂_s Ē^s) P_s‖`.
    pub sup_norm: f64,
    /// `9 √(δ/ε)`.
    pub bound: f64,
    pub grid_points: usize,
    pub cluster_size: usize,
    pub steps: StepSizes,
    /// Absolute allowance for round-off in the differenced mean.
    pub fd_slack: f64,
    pub violation: bool,
}

/// Minimum number of s-grid points for the flatness probe.
pub const FLATNESS_GRID: usize = 41;

/// Flatness of the cluster in `I` along direction `k` over `s ∈ [-ε, ε]`,
/// other parameters held at zero.
pub fn cluster_flatness(family: &ParamFamily, k: usize, window: &ClusterWindow) -> Result<FlatnessReport, ClusterError> {
    cluster_flatness_on(family, k, window, FLATNESS_GRID)
}

pub fn cluster_flatness_on(
    family: &ParamFamily,
    k: usize,
    window: &ClusterWindow,
    grid_points: usize,
) -> Result<FlatnessReport, ClusterError> {
    if k >= family.n_params() {
        return Err(ClusterError::Parameter(k));
    }
    let grid_points = grid_points.max(FLATNESS_GRID);
    let eps = window.epsilon;
    let steps = StepSizes::for_epsilon(eps);
    let enlarged = window.enlarged();
    let zero = vec![0.0; family.n_params()];
    let base_values = sorted_values(&family.base);
    let (range, _) = cluster_in(&base_values, &window.interval);
    if range.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let n = range.len();
    let b = &family.directions[k];
    let mean_at = |t: f64| -> f64 {
        let v = sorted_values(&family.along(&zero, k, t));
        v[range.clone()].iter().sum::<f64>() / n as f64
    };
    let mut delta: f64 = 0.0;
    let mut sup_norm: f64 = 0.0;
    for g in 0..grid_points {
        let t = -eps + 2.0 * eps * g as f64 / (grid_points - 1) as f64;
        let a = family.along(&zero, k, t);
        let slice = projector_at(&a, &range);
        let all = sorted_values(&a);
        let mut s = zero.clone();
        s[k] = t;
        check_gap(&all, &range, &enlarged, 4.0 * eps, &s)?;
        let mean = slice.values.iter().sum::<f64>() / n as f64;
        delta = slice.values.iter().fold(delta, |m, v| m.max((v - mean).abs()));
        let slope = (mean_at(t + steps.first) - mean_at(t - steps.first)) / (2.0 * steps.first);
        let q = &slice.basis;
        let mut m = q.transpose() * b * q;
        for i in 0..n {
            m[(i, i)] -= slope;
        }
        sup_norm = sup_norm.max(sym_norm(&((&m + m.transpose()) * 0.5)));
    }
    let bound = 9.0 * (delta / eps).sqrt();
    let scale = base_values.iter().fold(1.0f64, |m, v| m.max(v.abs())) + eps;
    let fd_slack = 64.0 * f64::EPSILON * scale / steps.first;
    Ok(FlatnessReport {
        delta,
        sup_norm,
        bound,
        grid_points,
        cluster_size: n,
        steps,
        fd_slack,
        violation: sup_norm > bound * (1.0 + BOUND_TOLERANCE) + fd_slack,
    })
}

/// `spac_{I_ε}(A_s)`.
pub fn window_spacing(family: &ParamFamily, s: &[f64], window: &ClusterWindow) -> f64 {
    let v = sorted_values(&family.at(s));
    let (r, _) = cluster_in(&v, &window.enlarged());
    min_gap(&v[r], DEGENERACY_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartanOptions {
    pub n_draws: usize,
    pub seed: u64,
    /// Witness level `δ_0`; when absent the largest sampled spacing is used.
    pub delta0: Option<f64>,
    /// Uniform grid size before bisection refinement (N = 1 only).
    pub scan_points: usize,
}

impl Default for CartanOptions {
    fn default() -> Self {
        Self {
            n_draws: 10_000,
            seed: 0,
            delta0: None,
            scan_points: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartanReport {
    pub delta: f64,
    pub delta0: f64,
    /// Monte Carlo estimate of `|{s : spac < δ}| / (2ε)^N`.
    pub monte_carlo: Frequency,
    /// Grid-scan estimate of the same quantity (N = 1 only).
    pub grid_scan: Option<f64>,
    pub witness: Option<Vec<f64>>,
    /// False when no point with `spac > δ_0` was found.
    pub conditioned: bool,
    /// `|log δ| / |log δ_0|`.
    pub log_ratio: f64,
}

fn grid_scan_measure(f: impl Fn(f64) -> bool, lo: f64, hi: f64, points: usize) -> f64 {
    let xs: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let flags: Vec<bool> = xs.iter().map(|&x| f(x)).collect();
    // locate each flip by bisection, then sum the lengths of the true runs
    let mut edges = vec![(lo, flags[0])];
    for i in 1..points {
        if flags[i] != flags[i - 1] {
            let (mut a, mut b) = (xs[i - 1], xs[i]);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if f(m) == flags[i - 1] {
                    a = m;
                } else {
                    b = m;
                }
            }
            edges.push((0.5 * (a + b), flags[i]));
        }
    }
    edges.push((hi, false));
    edges
        .windows(2)
        .filter(|w| w[0].1)
        .map(|w| w[1].0 - w[0].0)
        .sum::<f64>()
        / (hi - lo)
}

/// Normalized sublevel measure of `s ↦ spac_{I_ε}(A_s)` below `δ`.
pub fn cartan_sublevel_measure(
    family: &ParamFamily,
    window: &ClusterWindow,
    delta: f64,
    opts: &CartanOptions,
) -> CartanReport {
    let n = family.n_params();
    let eps = family.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut hits = 0u64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut witness = None;
    for _ in 0..opts.n_draws {
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-eps..eps)).collect();
        let sp = window_spacing(family, &s, window);
        if sp < delta {
            hits += 1;
        }
        if let Some(d0) = opts.delta0 {
            if witness.is_none() && sp > d0 {
                witness = Some(s.clone());
            }
        }
        if best.as_ref().is_none_or(|b| sp > b.0) {
            best = Some((sp, s));
        }
    }
    let (delta0, witness) = match opts.delta0 {
        Some(d0) => (d0, witness),
        None => match best {
            Some((sp, s)) if sp.is_finite() && sp > 0.0 => (sp, Some(s)),
            _ => (f64::NAN, None),
        },
    };
    let grid_scan = (n == 1).then(|| {
        grid_scan_measure(
            |t| window_spacing(family, &[t], window) < delta,
            -eps,
            eps,
            opts.scan_points.max(3),
        )
    });
    CartanReport {
        delta,
        delta0,
        monte_carlo: Frequency::new(hits, opts.n_draws as u64),
        grid_scan,
        conditioned: witness.is_some(),
        witness,
        log_ratio: delta.ln().abs() / delta0.ln().abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Exponent `r` in the cube-shrinking factor `ℓ^{-(2d+2r)}`; defaults to `d/2 + 1`.
    pub r: Option<f64>,
    /// Maximum number of trial perturbations.
    pub budget: usize,
    pub seed: u64,
    /// When set, the cluster must lie below this energy threshold.
    pub threshold: Option<f64>,
    /// Required gap factor around the cluster, in units of `ε`.
    pub gap_factor: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            r: None,
            budget: 200,
            seed: 0,
            threshold: None,
            gap_factor: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub omega: Configuration,
    pub initial_spacing: f64,
    pub spacing: f64,
    /// Existence bound `8 ε ℓ^{-(n-1)(2d+2r)}`, for reference.
    pub paper_bound: f64,
    pub cluster_size: usize,
    pub couplings: Vec<LatticePoint>,
    pub trials: usize,
    pub accepted: usize,
    /// False when the budget ran out before the bound was reached.
    pub complete: bool,
}

/// Searches the cube `Q = {|ω_k - ω0_k| <= ε on Γ_{ℓ,x}} ∩ [0,1]` for a
/// configuration that separates the cluster in `window` of the local
/// operator on `Λ_ℓ(x)`.
///
/// Heuristic: perturb the coupling whose restriction `P_g V_k P_g` to the
/// closest pair spreads most, with a trust radius that starts at `ε` and
/// shrinks by `ℓ^{-(2d+2r)}` after every accepted split.
pub fn search_good_configuration(
    params: &ModelParams,
    omega0: &Configuration,
    center: &[f64],
    ell: f64,
    epsilon: f64,
    window: &Interval,
    opts: &SearchOptions,
) -> Result<SearchResult, ClusterError> {
    let couplings = local_couplings(params, center, ell);
    let positions: Vec<usize> = couplings
        .iter()
        .map(|k| omega0.position(k).ok_or_else(|| ClusterError::Precondition(format!("coupling {k:?} missing"))))
        .collect::<Result<_, _>>()?;
    let family = ParamFamily::from_model(params, omega0, center, ell, &couplings, epsilon)?;
    let (values, _) = sorted_eigen(&family.base);
    let (range, gap) = cluster_in(&values, window);
    let n = range.len();
    let d = params.d as f64;
    let r = opts.r.unwrap_or(d / 2.0 + 1.0);
    let shrink = ell.powf(-(2.0 * d + 2.0 * r));
    let paper_bound = 8.0 * epsilon * ell.powf(-((n.max(1) - 1) as f64) * (2.0 * d + 2.0 * r));
    let initial_spacing = min_gap(&values[range.clone()], DEGENERACY_TOL);
    let unchanged = |complete| SearchResult {
        omega: omega0.clone(),
        initial_spacing,
        spacing: initial_spacing,
        paper_bound,
        cluster_size: n,
        couplings: couplings.clone(),
        trials: 0,
        accepted: 0,
        complete,
    };
    if n <= 1 {
        return Ok(unchanged(true));
    }
    if gap < opts.gap_factor * epsilon {
        return Err(ClusterError::Precondition(format!(
            "cluster gap {gap} below {} ε",
            opts.gap_factor
        )));
    }
    if let Some(xi) = opts.threshold {
        if values[range.end - 1] > xi {
            return Err(ClusterError::Precondition(format!("cluster exceeds threshold {xi}")));
        }
    }
    if couplings.is_empty() {
        return Err(ClusterError::Precondition("no couplings in the local box".into()));
    }

    let lower: Vec<f64> = positions.iter().map(|&p| (omega0.values[p] - epsilon).max(0.0)).collect();
    let upper: Vec<f64> = positions.iter().map(|&p| (omega0.values[p] + epsilon).min(1.0)).collect();
    let mut s = vec![0.0; couplings.len()];
    let mut current = initial_spacing;
    let mut radius = epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut trials, mut accepted) = (0, 0);
    let spacing_at = |s: &[f64]| -> f64 {
        let v = sorted_values(&family.at(s));
        min_gap(&v[range.clone()], DEGENERACY_TOL)
    };

    while trials < opts.budget && current < paper_bound {
        let (vals, vecs) = sorted_eigen(&family.at(&s));
        let cl = &vals[range.clone()];
        // closest pair inside the cluster
        let i = (0..n - 1)
            .min_by(|&a, &b| (cl[a + 1] - cl[a]).total_cmp(&(cl[b + 1] - cl[b])))
            .expect("n >= 2");
        let q = vecs.columns(range.start + i, 2).into_owned();
        let mut ranked: Vec<(f64, usize)> = family
            .directions
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let m = q.transpose() * b * &q;
                let spread = ((m[(0, 0)] - m[(1, 1)]).powi(2) + 4.0 * m[(0, 1)].powi(2)).sqrt();
                (spread, k)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut improved = false;
        for &(_, k) in ranked.iter().take(4) {
            if trials >= opts.budget {
                break;
            }
            let step = radius * rng.random_range(0.5..1.0);
            let first_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for sign in [first_sign, -first_sign] {
                trials += 1;
                let base = omega0.values[positions[k]];
                let target = (base + s[k] + sign * step).clamp(lower[k], upper[k]);
                let mut trial = s.clone();
                trial[k] = target - base;
                if trial[k] == s[k] {
                    continue;
                }
                let sp = spacing_at(&trial);
                if sp > current {
                    s = trial;
                    current = sp;
                    improved = true;
                    break;
                }
            }
            if improved {
                break;
            }
        }
        if improved {
            accepted += 1;
            radius = (radius * shrink).max(epsilon * 1e-12);
        } else {
            radius *= 0.5;
            if radius < epsilon * 1e-12 {
                break;
            }
        }
    }
    let mut omega = omega0.clone();
    for (j, &p) in positions.iter().enumerate() {
        if s[j] != 0.0 {
            omega = omega.with_value(p, (omega0.values[p] + s[j]).clamp(lower[j], upper[j]));
        }
    }
    Ok(SearchResult {
        omega,
        initial_spacing,
        spacing: current,
        paper_bound,
        cluster_size: n,
        couplings,
        trials,
        accepted,
        complete: current >= paper_bound,
    })
}
