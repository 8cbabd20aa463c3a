//! Symmetric indefinite `LDLᵀ` factorizations and matrix inertia.
//!
//! [`BunchKaufman`] factors a dense matrix with 1×1 / 2×2 diagonal pivots
//! (partial Bunch–Kaufman pivoting, lower storage). [`BandLdlt`] factors a
//! banded matrix without pivoting; tiny pivots are replaced by `±tol` and
//! reported. Both yield the inertia of the factored matrix by Sylvester's law.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discretize::CsrMatrix;

/// Negative, zero and positive eigenvalue counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inertia {
    pub n_neg: usize,
    pub n_zero: usize,
    pub n_pos: usize,
}

impl Inertia {
    pub fn dim(&self) -> usize {
        self.n_neg + self.n_zero + self.n_pos
    }

    fn classify(&mut self, v: f64, tol: f64) {
        if v > tol {
            self.n_pos += 1;
        } else if v < -tol {
            self.n_neg += 1;
        } else {
            self.n_zero += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One(f64),
    Two { a: f64, b: f64, c: f64 },
}

/// `P A Pᵀ = L D Lᵀ` with `L` unit lower triangular and `D` block diagonal.
#[derive(Debug, Clone)]
pub struct BunchKaufman {
    n: usize,
    /// Row-major multipliers; only the strictly lower part is meaningful.
    l: Vec<f64>,
    /// `(first row, pivot)` in factorization order.
    pivots: Vec<(usize, Pivot)>,
    /// `(P A Pᵀ)_{ij} = A_{perm[i], perm[j]}`.
    perm: Vec<usize>,
    zero_tol: f64,
}

const ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + √17) / 8

impl BunchKaufman {
    /// Factors `A - shift·I`. Only the lower triangle of `a` is read.
    pub fn factor(a: &DMatrix<f64>, shift: f64) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut w = vec![0.0; n * n];
        let mut norm = 0.0f64;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let v =
                    if i >= j { a[(i, j)] } else { a[(j, i)] } - if i == j { shift } else { 0.0 };
                row += v.abs();
                if j <= i {
                    w[i * n + j] = v;
                }
            }
            norm = norm.max(row);
        }
        let zero_tol = 1e-12 * norm.max(f64::MIN_POSITIVE);
        let mut f = Self {
            n,
            l: vec![0.0; n * n],
            pivots: Vec::new(),
            perm: (0..n).collect(),
            zero_tol,
        };
        f.run(&mut w);
        f
    }

    fn run(&mut self, w: &mut [f64]) {
        let n = self.n;
        let get = |w: &[f64], i: usize, j: usize| if i >= j { w[i * n + j] } else { w[j * n + i] };
        let mut k = 0;
        while k < n {
            let absakk = w[k * n + k].abs();
            let (mut imax, mut colmax) = (k, 0.0f64);
            for i in k + 1..n {
                let v = w[i * n + k].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            let (kstep, kp) = if absakk.max(colmax) == 0.0 || absakk >= ALPHA * colmax {
                (1, k)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(get(w, imax, j).abs());
                    }
                }
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    (1, k)
                } else if w[imax * n + imax].abs() >= ALPHA * rowmax {
                    (1, imax)
                } else {
                    (2, imax)
                }
            };
            let kk = k + kstep - 1;
            if kp != kk {
                self.swap(w, k, kk, kp);
            }
            if kstep == 1 {
                let d = w[k * n + k];
                if d != 0.0 {
                    for i in k + 1..n {
                        let li = w[i * n + k] / d;
                        self.l[i * n + k] = li;
                        for j in k + 1..=i {
                            w[i * n + j] -= li * w[j * n + k];
                        }
                    }
                }
                self.pivots.push((k, Pivot::One(d)));
            } else {
                let a = w[k * n + k];
                let b = w[(k + 1) * n + k];
                let c = w[(k + 1) * n + k + 1];
                let det = a * c - b * b;
                for i in k + 2..n {
                    let x = w[i * n + k];
                    let y = w[i * n + k + 1];
                    self.l[i * n + k] = (x * c - y * b) / det;
                    self.l[i * n + k + 1] = (y * a - x * b) / det;
                }
                for i in k + 2..n {
                    let (l0, l1) = (self.l[i * n + k], self.l[i * n + k + 1]);
                    for j in k + 2..=i {
                        w[i * n + j] -= l0 * w[j * n + k] + l1 * w[j * n + k + 1];
                    }
                }
                self.pivots.push((k, Pivot::Two { a, b, c }));
            }
            k += kstep;
        }
    }

    /// Symmetric swap of rows/columns `p < q` in the trailing block starting at `k`.
    fn swap(&mut self, w: &mut [f64], k: usize, p: usize, q: usize) {
        let n = self.n;
        let idx = |i: usize, j: usize| if i >= j { i * n + j } else { j * n + i };
        for r in k..n {
            if r != p && r != q {
                w.swap(idx(r, p), idx(r, q));
            }
        }
        w.swap(p * n + p, q * n + q);
        for j in 0..k {
            self.l.swap(p * n + j, q * n + j);
        }
        self.perm.swap(p, q);
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    pub fn inertia(&self) -> Inertia {
        let mut s = Inertia::default();
        for (_, p) in &self.pivots {
            match *p {
                Pivot::One(d) => s.classify(d, self.zero_tol),
                Pivot::Two { a, b, c } => {
                    let m = 0.5 * (a + c);
                    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                    s.classify(m + r, self.zero_tol);
                    s.classify(m - r, self.zero_tol);
                }
            }
        }
        s
    }

    /// Solves `(A - shift) x = b`. Zero 1×1 pivots are treated as `zero_tol`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.l[i * n + j] * y[j]).sum();
            y[i] -= s;
        }
        for (k, p) in &self.pivots {
            match *p {
                Pivot::One(d) => {
                    let d = if d.abs() > 0.0 { d } else { self.zero_tol };
                    y[*k] /= d;
                }
                Pivot::Two { a, b, c } => {
                    let det = a * c - b * b;
                    let (u, v) = (y[*k], y[*k + 1]);
                    y[*k] = (c * u - b * v) / det;
                    y[*k + 1] = (a * v - b * u) / det;
                }
            }
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.l[j * n + i] * y[j]).sum();
            y[i] -= s;
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Reconstructs `L D Lᵀ` (test helper).
    pub fn reconstruct_permuted(&self) -> (DMatrix<f64>, Vec<usize>) {
        let n = self.n;
        let l = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if i > j {
                self.l[i * n + j]
            } else {
                0.0
            }
        });
        let mut d = DMatrix::zeros(n, n);
        for (k, p) in &self.pivots {
            match *p {
                Pivot::One(v) => d[(*k, *k)] = v,
                Pivot::Two { a, b, c } => {
                    d[(*k, *k)] = a;
                    d[(*k + 1, *k)] = b;
                    d[(*k, *k + 1)] = b;
                    d[(*k + 1, *k + 1)] = c;
                }
            }
        }
        (&l * d * l.transpose(), self.perm.clone())
    }
}

/// Unpivoted banded `LDLᵀ` of `A - shift·I`.
#[derive(Debug, Clone)]
pub struct BandLdlt {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + (j + bw - i)]` holds `L_ij` for `i - bw <= j < i`.
    l: Vec<f64>,
    d: Vec<f64>,
    zero_tol: f64,
    perturbed: usize,
    n_zero: usize,
}

impl BandLdlt {
    pub fn factor(a: &CsrMatrix, shift: f64) -> Self {
        let n = a.n;
        let bw = a.bandwidth();
        let width = bw + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * width + (j + bw - i)] = v - if i == j { shift } else { 0.0 };
                }
            }
        }
        let norm = (0..n)
            .map(|i| {
                a.row(i)
                    .map(|(j, v)| (v - if i == j { shift } else { 0.0 }).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let zero_tol = 1e-12 * norm.max(f64::MIN_POSITIVE);
        let mut d = vec![0.0; n];
        let mut perturbed = 0;
        let mut n_zero = 0;
        // band holds A's lower band and is overwritten by L
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut dj = band[j * width + bw];
            for k in lo..j {
                let ljk = band[j * width + (k + bw - j)];
                dj -= ljk * ljk * d[k];
            }
            if dj.abs() <= zero_tol {
                n_zero += 1;
                perturbed += 1;
                dj = if dj < 0.0 { -zero_tol } else { zero_tol };
            }
            d[j] = dj;
            for i in j + 1..(j + bw + 1).min(n) {
                let lo_i = i.saturating_sub(bw);
                let mut s = band[i * width + (j + bw - i)];
                for k in lo_i.max(lo)..j {
                    s -= band[i * width + (k + bw - i)] * band[j * width + (k + bw - j)] * d[k];
                }
                band[i * width + (j + bw - i)] = s / dj;
            }
        }
        Self {
            n,
            bw,
            l: band,
            d,
            zero_tol,
            perturbed,
            n_zero,
        }
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    /// Number of pivots that were replaced by `±tol`.
    pub fn perturbed_pivots(&self) -> usize {
        self.perturbed
    }

    pub fn inertia(&self) -> Inertia {
        let mut s = Inertia::default();
        for &v in &self.d {
            if v.abs() <= self.zero_tol {
                continue;
            }
            if v > 0.0 {
                s.n_pos += 1;
            } else {
                s.n_neg += 1;
            }
        }
        s.n_zero = self.n_zero;
        s
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, width) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * width + (k + bw - i)] * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..(i + bw + 1).min(n) {
                s -= self.l[j * width + (i + bw - j)] * y[j];
            }
            y[i] = s;
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn dense_inertia(a: &DMatrix<f64>, shift: f64) -> (usize, usize) {
        let e = SymmetricEigen::new(a.clone()).eigenvalues;
        let neg = e.iter().filter(|&&x| x < shift).count();
        (neg, a.nrows() - neg)
    }

    #[test]
    fn bunch_kaufman_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 7, 20] {
            let a = random_sym(n, &mut rng);
            let f = BunchKaufman::factor(&a, 0.1);
            let (ldl, perm) = f.reconstruct_permuted();
            for i in 0..n {
                for j in 0..n {
                    let want = a[(perm[i], perm[j])] - if perm[i] == perm[j] { 0.1 } else { 0.0 };
                    assert!((ldl[(i, j)] - want).abs() < 1e-10, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn bunch_kaufman_uses_two_by_two_pivots() {
        // zero diagonal forces 2×2 pivoting
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        let f = BunchKaufman::factor(&a, 0.0);
        assert!(f.pivots.iter().any(|(_, p)| matches!(p, Pivot::Two { .. })));
        let (neg, pos) = dense_inertia(&a, 0.0);
        let s = f.inertia();
        assert_eq!((s.n_neg, s.n_pos, s.n_zero), (neg, pos, 0));
    }

    #[test]
    fn bunch_kaufman_solves_indefinite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sym(30, &mut rng);
        let b: Vec<f64> = (0..30).map(|i| i as f64 - 10.0).collect();
        let f = BunchKaufman::factor(&a, 0.0);
        let x = f.solve(&b);
        let r = &a * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.norm() < 1e-9);
    }

    #[test]
    fn inertia_matches_dense_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let a = random_sym(n, &mut rng);
            let shift = rng.random_range(-1.5..1.5);
            let s = BunchKaufman::factor(&a, shift).inertia();
            assert_eq!(s.dim(), n);
            assert_eq!((s.n_neg, s.n_pos), dense_inertia(&a, shift));
        }
    }

    #[test]
    fn exact_zero_eigenvalue_is_counted_as_zero() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, -1.0, 0.0, 2.0]));
        let s = BunchKaufman::factor(&a, 0.0).inertia();
        assert_eq!((s.n_neg, s.n_zero, s.n_pos), (2, 1, 1));
    }

    #[test]
    fn band_ldlt_matches_dense_on_tridiagonal() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + (i as f64 * 0.37).sin()));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, t);
        let dense = a.to_dense();
        for shift in [-1.0, 0.5, 1.7, 3.0, 5.0] {
            let s = BandLdlt::factor(&a, shift).inertia();
            assert_eq!((s.n_neg, s.n_pos), dense_inertia(&dense, shift));
        }
        let f = BandLdlt::factor(&a, 0.5);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = f.solve(&b);
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        let err: f64 = ax
            .iter()
            .zip(&x)
            .zip(&b)
            .map(|((p, xi), q)| (p - 0.5 * xi - q).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}
