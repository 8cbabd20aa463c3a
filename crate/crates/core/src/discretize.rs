//! Second-order finite-difference assembly of `-μ G Δ G + V_o + V_ω` with
//! Dirichlet conditions on the full box and on sub-boxes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{Configuration, LatticePoint, ModelError, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("deformation G must be positive, found {value} at node {node}")]
    NonPositiveDeformation { node: usize, value: f64 },
    #[error("covering sum vanishes at node {node}")]
    ZeroCovering { node: usize },
    #[error("sub-box has no interior grid nodes")]
    EmptyInterior,
    #[error("invalid sub-box: {0}")]
    SubBox(String),
}

/// Interior nodes of a box (or sub-box) of the parent grid. Nodes are
/// stored in natural order, first axis fastest; indices are the parent's
/// per-axis grid indices `1..L/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub h: f64,
    pub box_side: f64,
    /// Coordinate of grid index 0 on every axis.
    pub origin: f64,
    pub nodes: Vec<[usize; 3]>,
}

fn sort_key(n: &[usize; 3]) -> [usize; 3] {
    [n[2], n[1], n[0]]
}

impl Grid {
    /// Interior nodes of `Λ_L`; `(L/h - 1)^d` of them.
    pub fn full(params: &ModelParams) -> Self {
        let m = params.cells_per_side();
        let side = m - 1;
        let mut nodes = Vec::with_capacity(side.pow(params.d as u32));
        for flat in 0..side.pow(params.d as u32) {
            let mut n = [0usize; 3];
            let mut rem = flat;
            for c in n.iter_mut().take(params.d) {
                *c = rem % side + 1;
                rem /= side;
            }
            nodes.push(n);
        }
        Self {
            d: params.d,
            h: params.h,
            box_side: params.box_side,
            origin: -0.5 * params.box_side,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (a, c) in p.iter_mut().enumerate().take(self.d) {
            *c = self.origin + self.nodes[node][a] as f64 * self.h;
        }
        p
    }

    pub fn lookup(&self, n: &[usize; 3]) -> Option<usize> {
        let key = sort_key(n);
        self.nodes.binary_search_by(|m| sort_key(m).cmp(&key)).ok()
    }

    /// Nodes strictly inside the open cube of side `ell` centred at `center`.
    pub fn sub_box(&self, center: &[f64], ell: f64) -> Self {
        let half = 0.5 * ell;
        let tol = 1e-9 * self.h;
        let nodes = (0..self.len())
            .filter(|&i| {
                let p = self.position(i);
                (0..self.d).all(|a| (p[a] - center[a]).abs() < half - tol)
            })
            .map(|i| self.nodes[i])
            .collect();
        Self {
            nodes,
            ..self.clone()
        }
    }

    /// Unit cell `y + Λ_1` containing a position, with half-open faces.
    pub fn cell_of(&self, node: usize) -> LatticePoint {
        let p = self.position(node);
        let mut y = [0i64; 3];
        for a in 0..self.d {
            y[a] = (p[a] + 0.5).floor() as i64;
        }
        y
    }

    /// Nodes whose unit cell is `y`.
    pub fn nodes_in_cell(&self, y: &LatticePoint) -> Vec<usize> {
        (0..self.len()).filter(|&i| &self.cell_of(i) == y).collect()
    }
}

/// Symmetric matrix in compressed sparse row form, both triangles stored,
/// columns sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(
                i < n && j < n,
                "triplet ({i}, {j}) out of range for n = {n}"
            );
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), t)
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        )
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Half bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `diag(s) · A · diag(s)`.
    pub fn congruence_diag(&self, s: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[p] = s[i] * self.values[p] * s[self.col_idx[p]];
            }
        }
        out
    }

    /// `A + diag(v)`; every row must already hold its diagonal entry or gains one.
    pub fn add_diagonal(&self, v: &[f64]) -> Self {
        let mut t: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, a)| (i, j, a)))
            .collect();
        t.extend(v.iter().enumerate().map(|(i, &d)| (i, i, d)));
        Self::from_triplets(self.n, t)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                if map[j] != usize::MAX {
                    t.push((new_i, map[j], v));
                }
            }
        }
        Self::from_triplets(keep.len(), t)
    }

    /// Matrix Market coordinate format, `real symmetric`, lower triangle.
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| {
                self.row(i)
                    .filter(move |(j, _)| *j <= i)
                    .map(move |(j, v)| (i, j, v))
            })
            .collect();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub model_hash: String,
    pub config_seed: Option<u64>,
}

/// Assembled operator together with the grid it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymOperator {
    pub matrix: CsrMatrix,
    pub grid: Grid,
    pub provenance: Provenance,
}

impl SparseSymOperator {
    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }
}

/// `Σ_k ω_k V_k` on the nodes of a region, with the couplings that touched it.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub contributors: Vec<LatticePoint>,
}

/// `-μΔ` with Dirichlet conditions: `2dμ/h²` on the diagonal and `-μ/h²`
/// between neighbouring nodes of the grid.
pub fn laplacian_dirichlet(grid: &Grid, mu: f64) -> SparseSymOperator {
    let c = mu / (grid.h * grid.h);
    let mut t = Vec::with_capacity(grid.len() * (2 * grid.d + 1));
    for (i, n) in grid.nodes.iter().enumerate() {
        t.push((i, i, 2.0 * grid.d as f64 * c));
        for a in 0..grid.d {
            for step in [-1i64, 1] {
                let mut m = *n;
                let v = m[a] as i64 + step;
                if v < 1 {
                    continue;
                }
                m[a] = v as usize;
                if let Some(j) = grid.lookup(&m) {
                    t.push((i, j, -c));
                }
            }
        }
    }
    SparseSymOperator {
        matrix: CsrMatrix::from_triplets(grid.len(), t),
        grid: grid.clone(),
        provenance: Provenance::default(),
    }
}

fn coupling_range(x: f64, reach: f64) -> std::ops::RangeInclusive<i64> {
    let lo = (x - reach - 1e-12).ceil() as i64;
    let hi = (x + reach + 1e-12).floor() as i64;
    lo..=hi
}

/// Visits every `(node, k, V_0(x_node - k))` with a nonzero bump value.
fn for_each_bump(params: &ModelParams, grid: &Grid, mut f: impl FnMut(usize, &LatticePoint, f64)) {
    let d = grid.d;
    let reach = params.bump.outer_radius;
    let mut u = vec![0.0; d];
    for node in 0..grid.len() {
        let x = grid.position(node);
        let ranges: Vec<Vec<i64>> = (0..3)
            .map(|a| {
                if a < d {
                    coupling_range(x[a], reach).collect()
                } else {
                    vec![0]
                }
            })
            .collect();
        for &k0 in &ranges[0] {
            for &k1 in &ranges[1] {
                for &k2 in &ranges[2] {
                    let k = [k0, k1, k2];
                    for a in 0..d {
                        u[a] = x[a] - k[a] as f64;
                    }
                    let v = params.bump.value(&u);
                    if v != 0.0 {
                        f(node, &k, v);
                    }
                }
            }
        }
    }
}

/// `Σ_{k ∈ Γ} ω_k V_k` restricted to the nodes of `region`; couplings outside
/// the region contribute through their clipped bumps.
pub fn potential_field(
    params: &ModelParams,
    omega: &Configuration,
    region: &Grid,
) -> PotentialField {
    let mut values = vec![0.0; region.len()];
    let mut contributors = Vec::new();
    for_each_bump(params, region, |node, k, v| {
        if let Some(w) = omega.get(k) {
            values[node] += w * v;
            contributors.push(*k);
        }
    });
    contributors.sort_unstable();
    contributors.dedup();
    PotentialField {
        values,
        contributors,
    }
}

/// Unweighted covering sum `Σ_{k ∈ Γ_L} V_k` on the region's nodes.
pub fn covering_field(params: &ModelParams, region: &Grid) -> Vec<f64> {
    let indices = params.index_set();
    let mut values = vec![0.0; region.len()];
    for_each_bump(params, region, |node, k, v| {
        if indices.binary_search(k).is_ok() {
            values[node] += v;
        }
    });
    values
}

/// `diag(G) (-μΔ) diag(G) + diag(V_o + V_ω)` on an arbitrary node set.
pub fn assemble_on(
    params: &ModelParams,
    omega: &Configuration,
    grid: &Grid,
) -> Result<SparseSymOperator, DiscretizeError> {
    if grid.is_empty() {
        return Err(DiscretizeError::EmptyInterior);
    }
    let lap = laplacian_dirichlet(grid, params.mu);
    let mut g = Vec::with_capacity(grid.len());
    let mut diag = Vec::with_capacity(grid.len());
    let potential = potential_field(params, omega, grid);
    for node in 0..grid.len() {
        let x = grid.position(node);
        let gv = params.deformation.value(&x[..grid.d]);
        if !(gv > 0.0) {
            return Err(DiscretizeError::NonPositiveDeformation { node, value: gv });
        }
        g.push(gv);
        diag.push(params.background.value(&x[..grid.d]) + potential.values[node]);
    }
    let matrix = lap.matrix.congruence_diag(&g).add_diagonal(&diag);
    Ok(SparseSymOperator {
        matrix,
        grid: grid.clone(),
        provenance: Provenance {
            model_hash: params.hash_hex(),
            config_seed: omega.seed,
        },
    })
}

pub fn assemble(
    params: &ModelParams,
    omega: &Configuration,
) -> Result<SparseSymOperator, DiscretizeError> {
    params.validate()?;
    assemble_on(params, omega, &Grid::full(params))
}

/// Dirichlet restriction to `Λ_ℓ(x) ∩ Λ_L`, reusing the parent configuration.
pub fn restrict_box(
    params: &ModelParams,
    omega: &Configuration,
    center: &[f64],
    ell: f64,
) -> Result<SparseSymOperator, DiscretizeError> {
    params.validate()?;
    if center.len() != params.d {
        return Err(DiscretizeError::SubBox(format!(
            "center has {} coordinates, expected {}",
            center.len(),
            params.d
        )));
    }
    if center.iter().any(|c| c.abs() >= 0.5 * params.box_side) {
        return Err(DiscretizeError::SubBox(
            "center lies outside the box".into(),
        ));
    }
    if !(ell > 2.0 * params.h) {
        return Err(DiscretizeError::SubBox(format!(
            "side {ell} must exceed two grid spacings"
        )));
    }
    let sub = Grid::full(params).sub_box(center, ell);
    assemble_on(params, omega, &sub)
}

/// `V^{-1/2} (H_ω - E) V^{-1/2}` with `V = Σ_k V_k`: the deformed operator with
/// `G' = G V^{-1/2}`, `V_o' = (V_o - E)/V` and weights `V_k / V`.
pub fn aux_operator(
    params: &ModelParams,
    omega: &Configuration,
    energy: f64,
) -> Result<SparseSymOperator, DiscretizeError> {
    let h = assemble(params, omega)?;
    let cover = covering_field(params, &h.grid);
    if let Some(node) = cover.iter().position(|&v| !(v > 0.0)) {
        return Err(DiscretizeError::ZeroCovering { node });
    }
    let s: Vec<f64> = cover.iter().map(|v| 1.0 / v.sqrt()).collect();
    let shift: Vec<f64> = cover.iter().map(|v| -energy / v).collect();
    let matrix = h.matrix.congruence_diag(&s).add_diagonal(&shift);
    Ok(SparseSymOperator { matrix, ..h })
}
