//! Eigenvalues below a cutoff, inertia-based interval counting, spectral
//! projections, spectral-shift counts and resolvent block norms.

pub mod lanczos;
pub mod ldlt;

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{CsrMatrix, SparseSymOperator};
pub use ldlt::{BandLdlt, BunchKaufman, Inertia};

/// Above this dimension operators are handled by banded factorizations and
/// shift-invert Lanczos instead of dense routines.
pub const DENSE_CROSSOVER: usize = 1024;

/// Relative tolerance under which eigenvalues form one multiplicity class.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("eigensolver did not converge: {reason}")]
    NonConvergence {
        reason: String,
        partial: Box<Spectrum>,
    },
    #[error("energy {energy} is within pivot tolerance of the spectrum")]
    NearSingular { energy: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid interval [{0}, {1}]")]
    Interval(f64, f64),
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
}

/// Anything that can be viewed as a real symmetric matrix.
pub trait SymmetricMatrix {
    fn dim(&self) -> usize;
    fn dense(&self) -> Cow<'_, DMatrix<f64>>;
    fn csr(&self) -> Cow<'_, CsrMatrix>;
    fn norm_inf(&self) -> f64;
}

impl SymmetricMatrix for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn dense(&self) -> Cow<'_, DMatrix<f64>> {
        Cow::Borrowed(self)
    }
    fn csr(&self) -> Cow<'_, CsrMatrix> {
        Cow::Owned(CsrMatrix::from_dense(self))
    }
    fn norm_inf(&self) -> f64 {
        self.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl SymmetricMatrix for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn dense(&self) -> Cow<'_, DMatrix<f64>> {
        Cow::Owned(self.to_dense())
    }
    fn csr(&self) -> Cow<'_, CsrMatrix> {
        Cow::Borrowed(self)
    }
    fn norm_inf(&self) -> f64 {
        CsrMatrix::norm_inf(self)
    }
}

impl SymmetricMatrix for SparseSymOperator {
    fn dim(&self) -> usize {
        self.matrix.n
    }
    fn dense(&self) -> Cow<'_, DMatrix<f64>> {
        Cow::Owned(self.matrix.to_dense())
    }
    fn csr(&self) -> Cow<'_, CsrMatrix> {
        Cow::Borrowed(&self.matrix)
    }
    fn norm_inf(&self) -> f64 {
        self.matrix.norm_inf()
    }
}

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn below(hi: f64) -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi,
        }
    }

    pub fn centered(center: f64, half_width: f64) -> Self {
        Self {
            lo: center - half_width,
            hi: center + half_width,
        }
    }

    pub fn all() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn length(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    /// `I + (-ε, ε)`, represented closed.
    pub fn enlarge(&self, eps: f64) -> Self {
        Self::new(self.lo - eps, self.hi + eps)
    }

    pub fn shift(&self, tau: f64) -> Self {
        Self::new(self.lo + tau, self.hi + tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMethod {
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Auto,
    Dense,
    Iterative,
}

/// Sorted eigenvalues (with multiplicity) below a cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Option<DMatrix<f64>>,
    pub cutoff: f64,
    pub tol: f64,
    pub degeneracy_tol: f64,
    pub method: SolverMethod,
    pub iterations: usize,
}

impl Spectrum {
    /// A bare spectrum from a list of values (sorted internally).
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let cutoff = values.last().copied().unwrap_or(f64::NEG_INFINITY);
        Self {
            eigenvalues: values,
            eigenvectors: None,
            cutoff,
            tol: 0.0,
            degeneracy_tol: DEGENERACY_TOL,
            method: SolverMethod::Dense,
            iterations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Two eigenvalues are numerically degenerate when they differ by at most
    /// `degeneracy_tol · max(1, |λ|)`.
    pub fn are_degenerate(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.degeneracy_tol * a.abs().max(b.abs()).max(1.0)
    }

    /// `(value, multiplicity)` classes.
    pub fn multiplicity_classes(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        let mut last = f64::NAN;
        for &v in &self.eigenvalues {
            match out.last_mut() {
                Some((_, m)) if self.are_degenerate(last, v) => *m += 1,
                _ => out.push((v, 1)),
            }
            last = v;
        }
        out
    }

    /// Index range of the eigenvalues in `interval`.
    pub fn index_range(&self, interval: &Interval) -> std::ops::Range<usize> {
        let a = self.eigenvalues.partition_point(|&v| v < interval.lo);
        let b = self.eigenvalues.partition_point(|&v| v <= interval.hi);
        a..b.max(a)
    }

    pub fn values_in(&self, interval: &Interval) -> &[f64] {
        &self.eigenvalues[self.index_range(interval)]
    }
}

/// Count of eigenvalues in an interval, with a flag when an endpoint fell
/// within pivot tolerance of an eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalCount {
    pub count: usize,
    pub at_boundary: bool,
}

fn endpoint_eta(norm: f64) -> f64 {
    1e-9 * norm.max(1.0)
}

/// Inertia of `A - shift·I`.
pub fn inertia<M: SymmetricMatrix + ?Sized>(a: &M, shift: f64) -> Inertia {
    if a.dim() <= DENSE_CROSSOVER {
        BunchKaufman::factor(&a.dense(), shift).inertia()
    } else {
        BandLdlt::factor(&a.csr(), shift).inertia()
    }
}

/// `#{λ <= x}` (or `#{λ < x}` when `strict`), with boundary detection.
fn count_below<M: SymmetricMatrix + ?Sized>(a: &M, x: f64, strict: bool) -> (usize, bool) {
    if x == f64::NEG_INFINITY {
        return (0, false);
    }
    if x == f64::INFINITY {
        return (a.dim(), false);
    }
    let s = inertia(a, x);
    if s.n_zero == 0 {
        return (s.n_neg, false);
    }
    let eta = endpoint_eta(a.norm_inf());
    let moved = if strict { x - eta } else { x + eta };
    (inertia(a, moved).n_neg, true)
}

/// Number of eigenvalues in the closed interval, by Sylvester's law of inertia.
pub fn count_interval<M: SymmetricMatrix + ?Sized>(a: &M, interval: &Interval) -> IntervalCount {
    if interval.is_empty() {
        return IntervalCount {
            count: 0,
            at_boundary: false,
        };
    }
    let (upper, fb) = count_below(a, interval.hi, false);
    let (lower, fa) = count_below(a, interval.lo, true);
    IntervalCount {
        count: upper.saturating_sub(lower),
        at_boundary: fa || fb,
    }
}

fn gershgorin_lower(a: &CsrMatrix) -> f64 {
    (0..a.n)
        .map(|i| {
            let (mut diag, mut off) = (0.0, 0.0);
            for (j, v) in a.row(i) {
                if i == j {
                    diag = v;
                } else {
                    off += v.abs();
                }
            }
            diag - off
        })
        .fold(f64::INFINITY, f64::min)
}

fn dense_eigs_in<M: SymmetricMatrix + ?Sized>(
    a: &M,
    interval: &Interval,
    want_vectors: bool,
) -> Result<Spectrum, SpectralError> {
    let dense = a.dense();
    let n = dense.nrows();
    let eig = SymmetricEigen::new(dense.into_owned());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (below_lo, _) = count_below(a, interval.lo, true);
    let (upto_hi, _) = count_below(a, interval.hi, false);
    let anorm = a.norm_inf().max(1.0);
    let slack = 1e-8 * anorm;
    let range = below_lo..upto_hi.max(below_lo);
    // dense values and inertia counts must agree up to rounding at the ends
    if let Some(&first) = order.get(range.start) {
        if range.start < range.end && eig.eigenvalues[first] < interval.lo - slack {
            return Err(SpectralError::NonConvergence {
                reason: "dense spectrum inconsistent with inertia count".into(),
                partial: Box::new(Spectrum::from_values(vec![])),
            });
        }
    }
    if range.end > 0 && range.end <= n && range.start < range.end {
        let last = eig.eigenvalues[order[range.end - 1]];
        if last > interval.hi + slack {
            return Err(SpectralError::NonConvergence {
                reason: "dense spectrum inconsistent with inertia count".into(),
                partial: Box::new(Spectrum::from_values(vec![])),
            });
        }
    }
    let picked = &order[range.clone()];
    let eigenvalues = picked.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = want_vectors
        .then(|| DMatrix::from_fn(n, picked.len(), |r, c| eig.eigenvectors[(r, picked[c])]));
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        cutoff: interval.hi,
        tol: f64::EPSILON * n as f64,
        degeneracy_tol: DEGENERACY_TOL,
        method: SolverMethod::Dense,
        iterations: 0,
    })
}

const SLICE_TARGET: usize = 24;

fn lanczos_eigs_in<M: SymmetricMatrix + ?Sized>(
    a: &M,
    interval: &Interval,
    want_vectors: bool,
) -> Result<Spectrum, SpectralError> {
    let csr = a.csr();
    let n = csr.n;
    let opts = lanczos::LanczosOptions::default();
    let lo = if interval.lo.is_finite() {
        interval.lo
    } else {
        gershgorin_lower(&csr) - 1.0
    };
    let hi = if interval.hi.is_finite() {
        interval.hi
    } else {
        -gershgorin_lower(&csr.scale(-1.0)) + 1.0
    };
    let n_lo = count_below(a, lo, true).0;
    let n_hi = count_below(a, hi, false).0;
    let expected_total = n_hi.saturating_sub(n_lo);

    // bisect into slices holding at most SLICE_TARGET eigenvalues each
    let mut stack = vec![(lo, hi, n_lo, n_hi)];
    let mut slices = Vec::new();
    while let Some((a0, b0, ca, cb)) = stack.pop() {
        let c = cb - ca;
        if c == 0 {
            continue;
        }
        if c <= SLICE_TARGET || (b0 - a0) <= 1e-12 * b0.abs().max(1.0) {
            slices.push((a0, b0, c));
            continue;
        }
        let mid = 0.5 * (a0 + b0);
        let cm = count_below(a, mid, false).0;
        stack.push((mid, b0, cm, cb));
        stack.push((a0, mid, ca, cm));
    }
    slices.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for (a0, b0, c) in slices {
        // (a0, b0] with the left end of the first slice made inclusive
        let lo_open = if a0 == lo {
            a0 - endpoint_eta(csr.norm_inf())
        } else {
            a0
        };
        let r = lanczos::slice_eigenpairs(&csr, lo_open, b0, c, &opts);
        iterations += r.iterations;
        converged &= r.converged;
        pairs.extend(r.pairs);
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let spectrum = Spectrum {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        eigenvectors: want_vectors.then(|| DMatrix::from_fn(n, pairs.len(), |r, c| pairs[c].1[r])),
        cutoff: interval.hi,
        tol: opts.tol,
        degeneracy_tol: DEGENERACY_TOL,
        method: SolverMethod::Lanczos,
        iterations,
    };
    if !converged || spectrum.len() != expected_total {
        return Err(SpectralError::NonConvergence {
            reason: format!(
                "found {} of {} eigenvalues in [{}, {}]",
                spectrum.len(),
                expected_total,
                interval.lo,
                interval.hi
            ),
            partial: Box::new(spectrum),
        });
    }
    Ok(spectrum)
}

/// All eigenvalues in a closed interval, counted with multiplicity.
pub fn eigs_in<M: SymmetricMatrix + ?Sized>(
    a: &M,
    interval: &Interval,
    want_vectors: bool,
    method: MethodChoice,
) -> Result<Spectrum, SpectralError> {
    if interval.is_empty() {
        return Err(SpectralError::Interval(interval.lo, interval.hi));
    }
    let dense = match method {
        MethodChoice::Auto => a.dim() <= DENSE_CROSSOVER,
        MethodChoice::Dense => true,
        MethodChoice::Iterative => false,
    };
    if dense {
        dense_eigs_in(a, interval, want_vectors)
    } else {
        lanczos_eigs_in(a, interval, want_vectors)
    }
}

/// Every eigenvalue `<= energy`, verified complete against the inertia count.
pub fn eigs_below<M: SymmetricMatrix + ?Sized>(
    a: &M,
    energy: f64,
    want_vectors: bool,
) -> Result<Spectrum, SpectralError> {
    eigs_in(
        a,
        &Interval::below(energy),
        want_vectors,
        MethodChoice::Auto,
    )
}

/// Orthonormal basis of `ran 1_I(A)`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub at_boundary: bool,
}

impl Projection {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `P = Q Qᵀ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

pub fn spectral_projection<M: SymmetricMatrix + ?Sized>(
    a: &M,
    interval: &Interval,
) -> Result<Projection, SpectralError> {
    let at_boundary = count_interval(a, interval).at_boundary;
    let s = eigs_in(a, interval, true, MethodChoice::Auto)?;
    Ok(Projection {
        basis: s.eigenvectors.expect("vectors requested"),
        eigenvalues: s.eigenvalues,
        at_boundary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftCount {
    pub value: i64,
    pub at_boundary: bool,
}

/// `count(A0, (-∞, E]) - count(A1, (-∞, E])`.
pub fn spectral_shift<M: SymmetricMatrix + ?Sized>(
    a0: &M,
    a1: &M,
    energy: f64,
) -> Result<ShiftCount, SpectralError> {
    if a0.dim() != a1.dim() {
        return Err(SpectralError::DimensionMismatch(a0.dim(), a1.dim()));
    }
    let c0 = count_interval(a0, &Interval::below(energy));
    let c1 = count_interval(a1, &Interval::below(energy));
    Ok(ShiftCount {
        value: c0.count as i64 - c1.count as i64,
        at_boundary: c0.at_boundary || c1.at_boundary,
    })
}

enum Factor {
    Dense(BunchKaufman),
    Band(BandLdlt),
}

impl Factor {
    fn new<M: SymmetricMatrix + ?Sized>(a: &M, shift: f64) -> Self {
        if a.dim() <= DENSE_CROSSOVER {
            Factor::Dense(BunchKaufman::factor(&a.dense(), shift))
        } else {
            Factor::Band(BandLdlt::factor(&a.csr(), shift))
        }
    }

    fn inertia(&self) -> Inertia {
        match self {
            Factor::Dense(f) => f.inertia(),
            Factor::Band(f) => f.inertia(),
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factor::Dense(f) => f.solve(b),
            Factor::Band(f) => f.solve(b),
        }
    }
}

/// Factored `A - E` for repeated resolvent block evaluations.
pub struct Resolvent {
    factor: Factor,
    n: usize,
    pub energy: f64,
}

impl Resolvent {
    /// Fails with `NearSingular` when `E` is within pivot tolerance of the
    /// spectrum.
    pub fn new<M: SymmetricMatrix + ?Sized>(a: &M, energy: f64) -> Result<Self, SpectralError> {
        let factor = Factor::new(a, energy);
        if factor.inertia().n_zero > 0 {
            return Err(SpectralError::NearSingular { energy });
        }
        Ok(Self {
            factor,
            n: a.dim(),
            energy,
        })
    }

    /// `(A - E)^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.factor.solve(b)
    }

    /// `‖1_X (A - E)^{-1} 1_Y‖`, the largest singular value of the block.
    pub fn block_norm(&self, rows: &[usize], cols: &[usize]) -> Result<f64, SpectralError> {
        if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= self.n) {
            return Err(SpectralError::NodeOutOfRange(bad));
        }
        if rows.is_empty() || cols.is_empty() {
            return Ok(0.0);
        }
        let mut block = DMatrix::zeros(rows.len(), cols.len());
        let mut e = vec![0.0; self.n];
        for (c, &y) in cols.iter().enumerate() {
            e[y] = 1.0;
            let col = self.factor.solve(&e);
            e[y] = 0.0;
            for (r, &x) in rows.iter().enumerate() {
                block[(r, c)] = col[x];
            }
        }
        Ok(block.singular_values().iter().copied().fold(0.0, f64::max))
    }
}

/// `‖1_X (A - E)^{-1} 1_Y‖`, the largest singular value of the block.
pub fn resolvent_block_norm<M: SymmetricMatrix + ?Sized>(
    a: &M,
    energy: f64,
    rows: &[usize],
    cols: &[usize],
) -> Result<f64, SpectralError> {
    if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= a.dim()) {
        return Err(SpectralError::NodeOutOfRange(bad));
    }
    Resolvent::new(a, energy)?.block_norm(rows, cols)
}

/// Spectral norm of a symmetric matrix (largest `|λ|`).
pub fn sym_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Residual `‖A v - λ v‖` of an eigenpair.
pub fn residual<M: SymmetricMatrix + ?Sized>(a: &M, lambda: f64, v: &[f64]) -> f64 {
    let csr = a.csr();
    let mut av = vec![0.0; v.len()];
    csr.matvec(v, &mut av);
    DVector::from_iterator(v.len(), av.iter().zip(v).map(|(p, q)| p - lambda * q)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble, laplacian_dirichlet, Grid};
    use crate::model::{sample_configuration, ModelParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn dense_count(a: &DMatrix<f64>, i: &Interval) -> usize {
        SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .filter(|&&v| i.contains(v))
            .count()
    }

    #[test]
    fn eigs_below_diagonal() {
        let s = eigs_below(&diag(&[3.0, 1.0, 2.0]), 2.5, false).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0]);
    }

    #[test]
    fn eigs_below_toeplitz() {
        let p = ModelParams::standard(1, 1.0, 1.0, 1.0 / 64.0);
        let lap = laplacian_dirichlet(&Grid::full(&p), 1.0);
        let s = eigs_below(&lap, 2000.0, true).unwrap();
        let h = p.h;
        for (k, v) in s.eigenvalues.iter().enumerate() {
            let exact = 2.0 / (h * h) * (1.0 - ((k + 1) as f64 * PI * h).cos());
            assert!((v - exact).abs() < 1e-10 * exact.max(1.0), "k={k}");
        }
        let count = count_interval(&lap, &Interval::below(2000.0)).count;
        assert_eq!(s.len(), count);
        let vecs = s.eigenvectors.as_ref().unwrap();
        for j in 0..s.len() {
            let v: Vec<f64> = vecs.column(j).iter().copied().collect();
            assert!(residual(&lap, s.eigenvalues[j], &v) < 1e-9);
        }
    }

    #[test]
    fn iterative_matches_dense_on_sparse_instance() {
        let mut p = ModelParams::standard(2, 0.3, 7.5, 0.5);
        p.bump.r = 0.5;
        let omega = sample_configuration(&p.density, &p.index_set(), 21);
        let a = assemble(&p, &omega).unwrap();
        assert_eq!(a.dim(), 196);
        let e = 3.0;
        let dense = eigs_in(&a, &Interval::below(e), true, MethodChoice::Dense).unwrap();
        let iter = eigs_in(&a, &Interval::below(e), true, MethodChoice::Iterative).unwrap();
        assert_eq!(iter.method, SolverMethod::Lanczos);
        assert_eq!(dense.len(), iter.len());
        assert!(dense.len() > SLICE_TARGET);
        for (x, y) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn iterative_resolves_degenerate_eigenvalues() {
        // 2-d Laplacian on a square has exact two-fold degeneracies
        let p = ModelParams::standard(2, 1.0, 1.0, 1.0 / 12.0);
        let lap = laplacian_dirichlet(&Grid::full(&p), 1.0);
        let e = 400.0;
        let dense = eigs_in(&lap, &Interval::below(e), false, MethodChoice::Dense).unwrap();
        let iter = eigs_in(&lap, &Interval::below(e), false, MethodChoice::Iterative).unwrap();
        assert_eq!(dense.len(), iter.len());
        for (x, y) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(dense.multiplicity_classes().iter().any(|c| c.1 == 2));
    }

    #[test]
    fn count_interval_examples() {
        let a = diag(&[-3.0, -1.0, 0.0, 2.0]);
        assert_eq!(count_interval(&a, &Interval::below(0.5)).count, 3);
        assert_eq!(count_interval(&a, &Interval::new(-1.5, 0.5)).count, 2);
        let at_zero = count_interval(&a, &Interval::below(0.0));
        assert_eq!(at_zero.count, 3);
        assert!(at_zero.at_boundary);
        let open_side = count_interval(&a, &Interval::new(0.0, 3.0));
        assert_eq!(open_side.count, 2);
        assert!(open_side.at_boundary);
        assert_eq!(count_interval(&a, &Interval::all()).count, 4);
        assert_eq!(count_interval(&a, &Interval::new(1.0, -1.0)).count, 0);
    }

    #[test]
    fn count_interval_matches_dense_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = random_sym(30, &mut rng);
            let x: f64 = rng.random_range(-4.0..4.0);
            let y: f64 = rng.random_range(-4.0..4.0);
            let i = Interval::new(x.min(y), x.max(y));
            assert_eq!(count_interval(&a, &i).count, dense_count(&a, &i));
        }
    }

    #[test]
    fn band_and_dense_counts_agree_on_operators() {
        let p = ModelParams::standard(2, 0.5, 6.0, 0.5);
        let omega = sample_configuration(&p.density, &p.index_set(), 4);
        let a = assemble(&p, &omega).unwrap();
        for e in [0.0, 1.0, 2.5, 4.0, 9.0] {
            let dense = BunchKaufman::factor(&a.to_dense(), e).inertia();
            let band = BandLdlt::factor(&a.matrix, e).inertia();
            assert_eq!(dense, band);
        }
    }

    #[test]
    fn projection_examples() {
        let p = spectral_projection(&diag(&[1.0, 5.0]), &Interval::new(0.0, 2.0)).unwrap();
        assert_eq!(p.rank(), 1);
        let m = p.matrix();
        assert!((m - diag(&[1.0, 0.0])).abs().max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_sym(12, &mut rng);
            let i = Interval::new(rng.random_range(-2.0..0.0), rng.random_range(0.0..2.0));
            let p = spectral_projection(&a, &i).unwrap();
            assert_eq!(p.rank(), count_interval(&a, &i).count);
            let m = p.matrix();
            assert!((&m * &m - &m).abs().max() < 1e-12);
            assert!((&m - m.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn spectral_shift_examples() {
        let a0 = diag(&[0.0, 2.0]);
        let a1 = diag(&[1.0, 3.0]);
        assert_eq!(spectral_shift(&a0, &a1, 2.5).unwrap().value, 1);
        for e in [-1.0, 0.5, 1.5, 4.0] {
            assert_eq!(spectral_shift(&a0, &a0, e).unwrap().value, 0);
        }
        assert!(spectral_shift(&a0, &diag(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn spectral_shift_rank_one_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a0 = random_sym(10, &mut rng);
            let v = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let a1 = &a0 + &v * v.transpose();
            let e = rng.random_range(-2.0..2.0);
            let xi = spectral_shift(&a0, &a1, e).unwrap().value;
            assert!(xi == 0 || xi == 1, "ξ = {xi}");
        }
    }

    #[test]
    fn resolvent_examples() {
        let a = diag(&[1.0, 2.0, 4.0]);
        assert_relative_eq!(
            resolvent_block_norm(&a, 2.5, &[1], &[1]).unwrap(),
            2.0,
            max_relative = 1e-14
        );
        assert_eq!(resolvent_block_norm(&a, 2.5, &[0], &[2]).unwrap(), 0.0);
        assert!(matches!(
            resolvent_block_norm(&a, 2.0, &[0], &[0]),
            Err(SpectralError::NearSingular { .. })
        ));
    }

    #[test]
    fn resolvent_matches_dense_inverse() {
        let p = ModelParams::standard(1, 0.5, 8.0, 0.25);
        let omega = sample_configuration(&p.density, &p.index_set(), 12);
        let a = assemble(&p, &omega).unwrap();
        let e = 0.731;
        let inv = (a.to_dense() - DMatrix::identity(a.dim(), a.dim()) * e)
            .try_inverse()
            .unwrap();
        let rows: Vec<usize> = (3..7).collect();
        let cols: Vec<usize> = (20..26).collect();
        let block = DMatrix::from_fn(rows.len(), cols.len(), |r, c| inv[(rows[r], cols[c])]);
        let want = block.singular_values().max();
        let got = resolvent_block_norm(&a, e, &rows, &cols).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1.0));
    }

    #[test]
    fn multiplicity_classes_group_within_tolerance() {
        let s = Spectrum::from_values(vec![1.0, 1.0 + 1e-12, 2.0, 3.0, 3.0]);
        assert_eq!(s.multiplicity_classes(), vec![(1.0, 2), (2.0, 1), (3.0, 2)]);
    }
}
