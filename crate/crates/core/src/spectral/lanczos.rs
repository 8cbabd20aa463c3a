//! Shift-invert Lanczos with full reorthogonalization, locking and restarts,
//! used to compute every eigenpair of a sparse operator in a slice `(lo, hi]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ldlt::BandLdlt;
use crate::discretize::CsrMatrix;

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Residual acceptance `‖Ax - λx‖ <= tol · ‖A‖`.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_restarts: 60,
            seed: 0x5eed,
        }
    }
}

pub struct SliceResult {
    pub pairs: Vec<(f64, Vec<f64>)>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn rayleigh(a: &CsrMatrix, x: &[f64], ax: &mut [f64]) -> (f64, f64) {
    a.matvec(x, ax);
    let lambda = dot(x, ax);
    let r = ax
        .iter()
        .zip(x)
        .map(|(p, q)| (p - lambda * q).powi(2))
        .sum::<f64>()
        .sqrt();
    (lambda, r)
}

/// Finds the `expected` eigenpairs of `a` in `(lo, hi]`.
pub fn slice_eigenpairs(
    a: &CsrMatrix,
    lo: f64,
    hi: f64,
    expected: usize,
    opts: &LanczosOptions,
) -> SliceResult {
    let n = a.n;
    let anorm = a.norm_inf().max(f64::MIN_POSITIVE);
    let sigma = 0.5 * (lo + hi);
    let op = BandLdlt::factor(a, sigma);
    let mut rng =
        ChaCha8Rng::seed_from_u64(opts.seed ^ (lo.to_bits().rotate_left(17)) ^ hi.to_bits());
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut ax = vec![0.0; n];
    let mut iterations = 0;
    let steps = (2 * expected + 20).min(n);

    for _restart in 0..opts.max_restarts {
        if found.len() >= expected || locked.len() >= n {
            break;
        }
        let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut q, &locked);
        let nq = norm(&q);
        if nq < 1e-12 {
            break;
        }
        q.iter_mut().for_each(|x| *x /= nq);
        let mut basis = vec![q];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let room = steps.min(n - locked.len());
        for j in 0..room {
            iterations += 1;
            let mut w = op.solve(&basis[j]);
            let aj = dot(&w, &basis[j]);
            alpha.push(aj);
            orthogonalize(&mut w, &locked);
            orthogonalize(&mut w, &basis);
            let b = norm(&w);
            if j + 1 == room || b < 1e-13 * aj.abs().max(1e-300) {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            basis.push(w);
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i == j + 1 {
                beta[j]
            } else if j == i + 1 {
                beta[i]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        // largest |θ| first: closest to the shift
        order.sort_by(|&x, &y| {
            eig.eigenvalues[y]
                .abs()
                .total_cmp(&eig.eigenvalues[x].abs())
        });
        for idx in order {
            let y = eig.eigenvectors.column(idx);
            let mut x = vec![0.0; n];
            for (c, qv) in y.iter().zip(&basis) {
                x.iter_mut().zip(qv).for_each(|(p, q)| *p += c * q);
            }
            orthogonalize(&mut x, &locked);
            let nx = norm(&x);
            if nx < 1e-8 {
                continue;
            }
            x.iter_mut().for_each(|p| *p /= nx);
            let (lambda, r) = rayleigh(a, &x, &mut ax);
            if r <= opts.tol * anorm {
                locked.push(x.clone());
                if lambda > lo && lambda <= hi {
                    found.push((lambda, x));
                }
            }
        }
    }
    let converged = found.len() == expected;
    // final Rayleigh-Ritz over the accepted vectors
    if !found.is_empty() {
        let k = found.len();
        let xs = DMatrix::from_fn(n, k, |i, j| found[j].1[i]);
        let qr = xs.qr();
        let qm = qr.q();
        let mut aq = DMatrix::zeros(n, k);
        for j in 0..k {
            let col: Vec<f64> = qm.column(j).iter().copied().collect();
            a.matvec(&col, &mut ax);
            aq.set_column(j, &DVector::from_column_slice(&ax));
        }
        let h = qm.transpose() * &aq;
        let h = (&h + h.transpose()) * 0.5;
        let e = SymmetricEigen::new(h);
        let vecs = &qm * &e.eigenvectors;
        found = (0..k)
            .map(|j| (e.eigenvalues[j], vecs.column(j).iter().copied().collect()))
            .collect();
        found.sort_by(|p, q| p.0.total_cmp(&q.0));
    }
    SliceResult {
        pairs: found,
        iterations,
        converged,
    }
}
