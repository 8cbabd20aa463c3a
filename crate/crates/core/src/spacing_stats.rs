//! Level statistics: spacings, discriminants, gap clusters, unfolded counts,
//! IDS/DOS estimates and Poisson goodness-of-fit tests.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
use thiserror::Error;

use crate::spectral::{Interval, Spectrum};

/// Minimum sample size accepted by the goodness-of-fit tests.
pub const MIN_TEST_SAMPLES: usize = 30;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 eigenvalues in the interval, found {0}")]
    TooFewEigenvalues(usize),
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("insufficient samples: need {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("intensity must be positive, got {0}")]
    Intensity(f64),
    #[error("no spectra supplied")]
    EmptyEnsemble,
    #[error("energy grid must be strictly increasing")]
    Grid,
}

fn degenerate(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Minimum gap among sorted values, snapping numerically degenerate pairs to 0.
/// Returns `+∞` when fewer than two values are given.
pub fn min_gap(sorted: &[f64], degeneracy_tol: f64) -> f64 {
    sorted
        .windows(2)
        .map(|w| {
            if degenerate(w[0], w[1], degeneracy_tol) {
                0.0
            } else {
                w[1] - w[0]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// `spac_I`: the smallest gap between eigenvalues in `I`, or `+∞`.
pub fn spacing(spec: &Spectrum, interval: &Interval) -> f64 {
    min_gap(spec.values_in(interval), spec.degeneracy_tol)
}

/// `spac_E := spac_{(-∞, E]}`.
pub fn spacing_below(spec: &Spectrum, energy: f64) -> f64 {
    spacing(spec, &Interval::below(energy))
}

/// True when `I` holds a numerically degenerate pair.
pub fn has_degenerate_pair(spec: &Spectrum, interval: &Interval) -> bool {
    spacing(spec, interval) == 0.0
}

/// Squared Vandermonde product of the eigenvalues in `I`.
pub fn discriminant(spec: &Spectrum, interval: &Interval) -> Result<f64, StatsError> {
    let v = spec.values_in(interval);
    if v.len() < 2 {
        return Err(StatsError::TooFewEigenvalues(v.len()));
    }
    let mut p = 1.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if degenerate(v[i], v[j], spec.degeneracy_tol) {
                return Ok(0.0);
            }
            let g = v[j] - v[i];
            p *= g * g;
        }
    }
    Ok(p)
}

/// Natural log of the discriminant; `-∞` at a degeneracy. Avoids underflow
/// for large clusters.
pub fn log_discriminant(spec: &Spectrum, interval: &Interval) -> Result<f64, StatsError> {
    let v = spec.values_in(interval);
    if v.len() < 2 {
        return Err(StatsError::TooFewEigenvalues(v.len()));
    }
    let mut s = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            if degenerate(v[i], v[j], spec.degeneracy_tol) {
                return Ok(f64::NEG_INFINITY);
            }
            s += 2.0 * (v[j] - v[i]).ln();
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Indices into the spectrum's eigenvalue list.
    pub range: Range<usize>,
    /// Smallest closed interval holding the cluster.
    pub interval: Interval,
    /// Distance to the nearest eigenvalue below (`+∞` if none).
    pub gap_below: f64,
    /// Distance to the nearest eigenvalue above, including eigenvalues past
    /// the cutoff when the spectrum holds them (`+∞` if none).
    pub gap_above: f64,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn gap(&self) -> f64 {
        self.gap_below.min(self.gap_above)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub clusters: Vec<Cluster>,
    pub epsilon: f64,
}

impl ClusterDecomposition {
    /// Separation threshold `6ε`.
    pub fn threshold(&self) -> f64 {
        6.0 * self.epsilon
    }
}

/// Greedy `6ε` gap clustering of the eigenvalues `<= e_max`.
pub fn find_clusters(spec: &Spectrum, epsilon: f64, e_max: f64) -> Result<ClusterDecomposition, StatsError> {
    if !(epsilon > 0.0) {
        return Err(StatsError::Epsilon(epsilon));
    }
    let ev = &spec.eigenvalues;
    let end = ev.partition_point(|&v| v <= e_max);
    let split = 6.0 * epsilon;
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 0..end {
        let last = i + 1 == end || ev[i + 1] - ev[i] > split;
        if last {
            let gap_below = if start == 0 { f64::INFINITY } else { ev[start] - ev[start - 1] };
            let gap_above = ev.get(i + 1).map_or(f64::INFINITY, |&n| n - ev[i]);
            clusters.push(Cluster {
                range: start..i + 1,
                interval: Interval::new(ev[start], ev[i]),
                gap_below,
                gap_above,
            });
            start = i + 1;
        }
    }
    Ok(ClusterDecomposition { clusters, epsilon })
}

/// Arithmetic mean of a list of eigenvalues (with multiplicity).
pub fn mean_energy(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyCluster);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Central energy `Ē` of a cluster.
pub fn central_energy(spec: &Spectrum, cluster: &Cluster) -> Result<f64, StatsError> {
    mean_energy(&spec.eigenvalues[cluster.range.clone()])
}

/// `#{λ ∈ E + B / volume}` with `volume = L^d`.
pub fn unfolded_counts(spec: &Spectrum, energy: f64, volume: f64, b: &Interval) -> usize {
    if b.is_empty() {
        return 0;
    }
    let w = Interval::new(energy + b.lo / volume, energy + b.hi / volume);
    spec.index_range(&w).len()
}

/// Spacings `λ_{i+1} - λ_i` scaled by `volume`, for the first `k` levels
/// strictly above `energy`, measured from `energy` itself for the first one.
pub fn unfolded_spacings_after(spec: &Spectrum, energy: f64, volume: f64, k: usize) -> Vec<f64> {
    let ev = &spec.eigenvalues;
    let start = ev.partition_point(|&v| v <= energy);
    let mut out = Vec::new();
    for i in start..ev.len() {
        if out.len() == k || ev[i] > spec.cutoff {
            break;
        }
        let prev = if i == start { energy } else { ev[i - 1] };
        out.push((ev[i] - prev) * volume);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsRow {
    pub energy: f64,
    pub ids: f64,
    pub ids_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosRow {
    pub energy: f64,
    pub dos: f64,
    pub dos_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsDos {
    pub ids: Vec<IdsRow>,
    /// Interior grid points only; `None` when the grid has fewer than 3 points.
    pub dos: Option<Vec<DosRow>>,
    pub n_spectra: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ensemble estimates of `N(E)` and `n(E) = N'(E)`. Each spectrum must be
/// complete below the largest grid energy.
pub fn ids_dos(spectra: &[Vec<f64>], volume: f64, grid: &[f64]) -> Result<IdsDos, StatsError> {
    if spectra.is_empty() {
        return Err(StatsError::EmptyEnsemble);
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StatsError::Grid);
    }
    // counts[s][g] = #{λ <= grid[g]} / volume
    let counts: Vec<Vec<f64>> = spectra
        .iter()
        .map(|ev| {
            grid.iter()
                .map(|&e| ev.iter().filter(|&&v| v <= e).count() as f64 / volume)
                .collect()
        })
        .collect();
    let ids = grid
        .iter()
        .enumerate()
        .map(|(g, &energy)| {
            let col: Vec<f64> = counts.iter().map(|c| c[g]).collect();
            let (ids, ids_stderr) = mean_stderr(&col);
            IdsRow { energy, ids, ids_stderr }
        })
        .collect();
    let dos = (grid.len() >= 3).then(|| {
        (1..grid.len() - 1)
            .map(|g| {
                let width = grid[g + 1] - grid[g - 1];
                let col: Vec<f64> = counts.iter().map(|c| (c[g + 1] - c[g - 1]) / width).collect();
                let (dos, dos_stderr) = mean_stderr(&col);
                DosRow {
                    energy: grid[g],
                    dos,
                    dos_stderr,
                }
            })
            .collect()
    });
    Ok(IdsDos {
        ids,
        dos,
        n_spectra: spectra.len(),
    })
}

/// Central differences of a tabulated function at the interior grid points.
pub fn central_differences(grid: &[f64], values: &[f64]) -> Vec<f64> {
    (1..grid.len().saturating_sub(1))
        .map(|g| (values[g + 1] - values[g - 1]) / (grid[g + 1] - grid[g - 1]))
        .collect()
}

/// Success count with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub successes: u64,
    pub n: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Frequency {
    pub fn new(successes: u64, n: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, n, Z95);
        Self {
            successes,
            n,
            p_hat: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            ci_low,
            ci_high,
        }
    }

    pub fn overlaps(&self, other: &Frequency) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Wilson score interval for `successes / n` at normal quantile `z`.
/// With `n = 0` the interval is `[0, 1]`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov tail `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against `Exponential(rate)`, with the
/// Stephens finite-sample correction `λ = (√n + 0.12 + 0.11/√n) D`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<KsResult, StatsError> {
    if !(rate > 0.0) {
        return Err(StatsError::Intensity(rate));
    }
    if samples.len() < MIN_TEST_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_TEST_SAMPLES,
            got: samples.len(),
        });
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = 1.0 - (-rate * v.max(0.0)).exp();
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d),
        n: x.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareBin {
    /// Counts `lo..=hi`; `hi = None` for the open tail.
    pub lo: u64,
    pub hi: Option<u64>,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: Vec<ChiSquareBin>,
}

/// Pearson chi-square test of integer counts against `Poisson(mean)`.
/// Adjacent classes are merged until each expects at least 5 observations.
pub fn chi_square_poisson(counts: &[u64], mean: f64) -> Result<ChiSquareResult, StatsError> {
    if !(mean > 0.0) {
        return Err(StatsError::Intensity(mean));
    }
    let n = counts.len();
    if n < MIN_TEST_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_TEST_SAMPLES,
            got: n,
        });
    }
    let pois = Poisson::new(mean).map_err(|_| StatsError::Intensity(mean))?;
    let nf = n as f64;
    let mut bins: Vec<ChiSquareBin> = Vec::new();
    let mut lo = 0u64;
    let mut acc = 0.0;
    let mut k = 0u64;
    let mut used = 0.0;
    loop {
        acc += pois.pmf(k) * nf;
        let rest = nf - used - acc;
        if acc >= 5.0 && rest >= 5.0 {
            bins.push(ChiSquareBin {
                lo,
                hi: Some(k),
                observed: 0,
                expected: acc,
            });
            used += acc;
            acc = 0.0;
            lo = k + 1;
        } else if rest < 5.0 {
            break;
        }
        k += 1;
        if k > 10_000 {
            break;
        }
    }
    let tail = (nf - used).max(0.0);
    bins.push(ChiSquareBin {
        lo,
        hi: None,
        observed: 0,
        expected: tail,
    });
    for &c in counts {
        let b = bins
            .iter_mut()
            .find(|b| c >= b.lo && b.hi.is_none_or(|h| c <= h))
            .expect("bins cover all counts");
        b.observed += 1;
    }
    if bins.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            needed: 2 * 5,
            got: n,
        });
    }
    let statistic = bins
        .iter()
        .map(|b| (b.observed as f64 - b.expected).powi(2) / b.expected)
        .sum();
    let dof = bins.len() - 1;
    let p_value = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value,
        bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub intensity: f64,
    pub window_length: f64,
    pub ks: KsResult,
    pub chi_square: ChiSquareResult,
    pub method: String,
}

/// Goodness of fit of unfolded data to a Poisson process of the given
/// intensity: spacings vs `Exponential(intensity)` and window counts vs
/// `Poisson(intensity · window_length)`.
pub fn poisson_tests(
    counts: &[u64],
    spacings: &[f64],
    intensity: f64,
    window_length: f64,
) -> Result<PoissonReport, StatsError> {
    Ok(PoissonReport {
        intensity,
        window_length,
        ks: ks_exponential(spacings, intensity)?,
        chi_square: chi_square_poisson(counts, intensity * window_length)?,
        method: "KS p-value from Q(λ) = 2Σ(-1)^(k-1)exp(-2k²λ²) with λ = (√n+0.12+0.11/√n)D; \
                 chi-square p-value = 1 - F_{χ²(bins-1)}(X²), classes merged to expected >= 5"
            .into(),
    })
}

/// One row of a probability-probe table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub energy: f64,
    pub delta: f64,
    pub n_samples: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ProbeRow {
    pub fn new(energy: f64, delta: f64, f: &Frequency) -> Self {
        Self {
            energy,
            delta,
            n_samples: f.n,
            frequency: f.p_hat,
            ci_low: f.ci_low,
            ci_high: f.ci_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Equal-width histogram on `[lo, hi)`; values outside are dropped.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_left: lo + b as f64 * width,
            bin_right: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &x in samples {
        if x >= lo && x < hi {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            out[b].count += 1;
        }
    }
    out
}

/// Ensemble level statistics as exported by the harness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStatistics {
    pub spacings: Vec<f64>,
    pub window_counts: Vec<u64>,
    pub frequencies: Vec<ProbeRow>,
    pub ids: Vec<IdsRow>,
    pub dos: Vec<DosRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Poisson as PoissonDist};

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::from_values(v.to_vec())
    }

    #[test]
    fn spacing_examples() {
        let s = spec(&[1.0, 1.5, 1.6, 3.0]);
        assert!((spacing(&s, &Interval::new(0.0, 2.0)) - 0.1).abs() < 1e-15);
        assert_eq!(spacing(&spec(&[1.0]), &Interval::new(0.0, 2.0)), f64::INFINITY);
        assert_eq!(spacing(&spec(&[1.0, 1.0, 2.0]), &Interval::new(0.0, 3.0)), 0.0);
        assert_eq!(spacing_below(&spec(&[1.0, 1.0 + 1e-12, 4.0]), 2.0), 0.0);
    }

    #[test]
    fn discriminant_examples() {
        let all = Interval::all();
        assert_eq!(discriminant(&spec(&[1.0, 2.0, 4.0]), &all).unwrap(), 36.0);
        assert!((discriminant(&spec(&[0.5, 0.7]), &all).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(discriminant(&spec(&[0.3, 0.9, 0.3]), &all).unwrap(), 0.0);
        assert_eq!(
            discriminant(&spec(&[0.3]), &all),
            Err(StatsError::TooFewEigenvalues(1))
        );
        let l = log_discriminant(&spec(&[1.0, 2.0, 4.0]), &all).unwrap();
        assert!((l - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cluster_examples() {
        let d = find_clusters(&spec(&[0.10, 0.11, 0.50]), 0.02, 1.0).unwrap();
        assert_eq!(d.clusters.len(), 2);
        assert_eq!(d.clusters[0].range, 0..2);
        assert_eq!(d.clusters[1].range, 2..3);
        assert!((d.clusters[0].gap_above - 0.39).abs() < 1e-12);
        let chain = find_clusters(&spec(&[0.0, 0.1, 0.2, 0.3]), 0.02, 1.0).unwrap();
        assert_eq!(chain.clusters.len(), 1);
        assert!(find_clusters(&spec(&[2.0]), 0.02, 1.0).unwrap().clusters.is_empty());
        assert!(find_clusters(&spec(&[]), 0.02, 1.0).unwrap().clusters.is_empty());
        assert!(find_clusters(&spec(&[1.0]), 0.0, 1.0).is_err());
    }

    #[test]
    fn central_energy_examples() {
        assert_eq!(mean_energy(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mean_energy(&[5.0]).unwrap(), 5.0);
        let s = spec(&[1.0, 1.0, 4.0]);
        let d = find_clusters(&s, 1.0, 10.0).unwrap();
        assert_eq!(central_energy(&s, &d.clusters[0]).unwrap(), 2.0);
        assert_eq!(mean_energy(&[]), Err(StatsError::EmptyCluster));
    }

    #[test]
    fn unfolded_count_examples() {
        let s = spec(&[0.50, 0.52, 0.60]);
        assert_eq!(unfolded_counts(&s, 0.5, 100.0, &Interval::new(0.0, 3.0)), 2);
        assert_eq!(unfolded_counts(&s, 0.5, 100.0, &Interval::new(1.0, 0.0)), 0);
        let a = unfolded_counts(&s, 0.45, 10.0, &Interval::new(0.0, 0.6));
        let b = unfolded_counts(&s, 0.45, 10.0, &Interval::new(0.6 + 1e-12, 2.0));
        assert_eq!(a + b, unfolded_counts(&s, 0.45, 10.0, &Interval::new(0.0, 2.0)));
    }

    #[test]
    fn ids_dos_examples() {
        let t = ids_dos(&[vec![1.0, 2.0]], 2.0, &[0.5, 1.5, 2.5]).unwrap();
        assert_eq!(t.ids[0].ids, 0.0);
        assert_eq!(t.ids[1].ids, 0.5);
        assert_eq!(t.ids[2].ids, 1.0);
        assert!(ids_dos(&[vec![1.0]], 1.0, &[0.0, 1.0]).unwrap().dos.is_none());
        assert_eq!(ids_dos(&[], 1.0, &[0.0]), Err(StatsError::EmptyEnsemble));

        // N(E) = E tabulated exactly
        let grid: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let d = central_differences(&grid, &grid);
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ids_is_monotone_and_integer_consistent() {
        let spectra = vec![vec![0.1, 0.4, 0.4, 0.9], vec![0.2, 0.3], vec![]];
        let grid: Vec<f64> = (0..21).map(|i| i as f64 * 0.05).collect();
        let t = ids_dos(&spectra, 4.0, &grid).unwrap();
        for w in t.ids.windows(2) {
            assert!(w[1].ids >= w[0].ids);
        }
        for row in &t.ids {
            let total: usize = spectra
                .iter()
                .map(|s| s.iter().filter(|&&v| v <= row.energy).count())
                .sum();
            let scaled = row.ids * 4.0 * 3.0;
            assert!((scaled - total as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn wilson_example() {
        let f = Frequency::new(3, 10);
        assert_eq!(f.p_hat, 0.3);
        assert!((f.ci_low - 0.1078).abs() < 1e-3, "{}", f.ci_low);
        assert!((f.ci_high - 0.6032).abs() < 1e-3, "{}", f.ci_high);
        let zero = Frequency::new(0, 20);
        assert_eq!(zero.ci_low, 0.0);
        assert!(zero.ci_high > 0.0);
    }

    #[test]
    fn wilson_coverage_meta_experiment() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut covered = 0;
        for _ in 0..1000 {
            let s = (0..200).filter(|_| rng.random::<f64>() < 0.3).count() as u64;
            let f = Frequency::new(s, 200);
            if f.ci_low <= 0.3 && 0.3 <= f.ci_high {
                covered += 1;
            }
        }
        assert!(covered >= 900, "covered {covered}");
    }

    #[test]
    fn chi_square_accepts_poisson_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PoissonDist::new(2.0).unwrap();
        let counts: Vec<u64> = (0..10_000).map(|_| p.sample(&mut rng) as u64).collect();
        let r = chi_square_poisson(&counts, 2.0).unwrap();
        assert!(r.p_value > 0.01, "p = {}", r.p_value);
        assert!(r.bins.iter().all(|b| b.expected >= 5.0));
        assert_eq!(r.bins.iter().map(|b| b.observed).sum::<u64>(), 10_000);
        let shifted: Vec<u64> = counts.iter().map(|c| c + 1).collect();
        assert!(chi_square_poisson(&shifted, 2.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ks_accepts_exponential_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = Exp::new(1.0).unwrap();
        let s: Vec<f64> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
        assert!(ks_exponential(&s, 1.0).unwrap().p_value > 0.01);
    }

    #[test]
    fn ks_rejects_point_mass() {
        let r = ks_exponential(&vec![1.0; 100], 1.0).unwrap();
        let want = (1.0 - (-1.0f64).exp()).max((-1.0f64).exp());
        assert!((r.statistic - want).abs() < 1e-12);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn tests_require_samples() {
        assert!(matches!(
            poisson_tests(&[1; 10], &[1.0; 10], 1.0, 1.0),
            Err(StatsError::InsufficientSamples { .. })
        ));
        assert!(ks_exponential(&[1.0; 40], 0.0).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the Kolmogorov distribution
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.1, 0.2, 0.5, 0.99, 1.0, -0.1], 0.0, 1.0, 4);
        let counts: Vec<u64> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 0, 1, 1]);
    }

    fn dyadic() -> impl Strategy<Value = f64> {
        (-4096i32..4096).prop_map(|k| k as f64 / 1024.0)
    }

    proptest! {
        #[test]
        fn spacing_translation_invariant(values in prop::collection::vec(dyadic(), 0..12), tau in dyadic()) {
            let s = spec(&values);
            let moved = spec(&values.iter().map(|v| v + tau).collect::<Vec<_>>());
            let i = Interval::new(-2.0, 2.0);
            prop_assert_eq!(spacing(&s, &i), spacing(&moved, &i.shift(tau)));
            prop_assert!(spacing(&s, &i) >= 0.0);
        }

        #[test]
        fn discriminant_zero_iff_spacing_zero(values in prop::collection::vec(dyadic(), 2..8)) {
            let s = spec(&values);
            let all = Interval::all();
            prop_assert_eq!(discriminant(&s, &all).unwrap() == 0.0, spacing(&s, &all) == 0.0);
        }

        #[test]
        fn discriminant_bounded_for_unit_gaps(values in prop::collection::vec(0.0f64..1.0, 2..8)) {
            let s = spec(&values);
            prop_assert!(discriminant(&s, &Interval::all()).unwrap() <= 1.0);
        }

        #[test]
        fn clusters_respect_gap_rule(values in prop::collection::vec(0.0f64..1.0, 0..30), eps in 0.001f64..0.05) {
            let s = spec(&values);
            let d = find_clusters(&s, eps, 1.0).unwrap();
            let covered: usize = d.clusters.iter().map(|c| c.len()).sum();
            prop_assert_eq!(covered, s.len());
            for c in &d.clusters {
                for w in s.eigenvalues[c.range.clone()].windows(2) {
                    prop_assert!(w[1] - w[0] <= 6.0 * eps);
                }
            }
            for w in d.clusters.windows(2) {
                prop_assert!(w[1].interval.lo - w[0].interval.hi > 6.0 * eps);
            }
        }
    }
}
