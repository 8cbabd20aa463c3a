//! Operator family definition: bump profiles, single-site densities, the
//! coupling lattice, derived threshold energies and configuration sampling.
//!
//! The continuum box `Λ_L` is the open cube of side `L` centred at the origin.
//! Lattice points carry up to three integer coordinates; unused trailing
//! coordinates are zero.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A point of `Z^d`, padded with zeros up to three coordinates.
pub type LatticePoint = [i64; 3];

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    Dimension(usize),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("bump profile violates the sandwich bound at offset {offset:?}: V_0 = {value}, bounds [{lower}, {upper}]")]
    Sandwich {
        offset: Vec<f64>,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("density: {0}")]
    Density(String),
    #[error("could not parse model document: {0}")]
    Parse(String),
}

fn param_err(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Parameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpKind {
    /// `v_+` times the indicator of the half-open cube `[-R, R)^d`.
    FlatTile,
    /// `v_+` times the product tent `∏ max(0, 1 - |u_i|/R)`.
    Tent,
    /// `v_+` times the indicator of the closed Euclidean ball of radius `R`.
    BallIndicator,
}

/// Single-site bump `V_0`. Balls in the sandwich bound use the sup-norm:
/// the lower bound applies on the open cube `(-r, r)^d`, the upper bound
/// vanishes outside the closed cube `[-R, R]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub kind: BumpKind,
    pub r: f64,
    #[serde(rename = "R")]
    pub outer_radius: f64,
    pub v_minus: f64,
    pub v_plus: f64,
}

impl BumpProfile {
    pub fn new(
        kind: BumpKind,
        r: f64,
        outer_radius: f64,
        v_minus: f64,
        v_plus: f64,
    ) -> Result<Self, ModelError> {
        let bump = Self {
            kind,
            r,
            outer_radius,
            v_minus,
            v_plus,
        };
        bump.check_parameters()?;
        Ok(bump)
    }

    fn check_parameters(&self) -> Result<(), ModelError> {
        if !(self.r > 0.0 && self.r <= self.outer_radius) {
            return Err(param_err("bump.r", "need 0 < r <= R"));
        }
        if !(self.v_minus > 0.0 && self.v_minus <= self.v_plus && self.v_plus <= 1.0) {
            return Err(param_err("bump.v_minus", "need 0 < v_minus <= v_plus <= 1"));
        }
        Ok(())
    }

    /// Evaluates `V_0(u)` at an offset `u` (length `d`).
    pub fn value(&self, u: &[f64]) -> f64 {
        let big_r = self.outer_radius;
        match self.kind {
            BumpKind::FlatTile => {
                if u.iter().all(|&x| x >= -big_r && x < big_r) {
                    self.v_plus
                } else {
                    0.0
                }
            }
            BumpKind::Tent => {
                let mut p = self.v_plus;
                for &x in u {
                    let t = 1.0 - x.abs() / big_r;
                    if t <= 0.0 {
                        return 0.0;
                    }
                    p *= t;
                }
                p
            }
            BumpKind::BallIndicator => {
                let r2: f64 = u.iter().map(|x| x * x).sum();
                if r2 <= big_r * big_r {
                    self.v_plus
                } else {
                    0.0
                }
            }
        }
    }

    /// Checks `v_- 1_{B_r} <= V_0 <= v_+ 1_{B_R}` on every offset of the
    /// lattice `phase + h Z^d` within the support box.
    pub fn check_sandwich(&self, d: usize, h: f64, phase: f64) -> Result<(), ModelError> {
        let big_r = self.outer_radius;
        let reach = ((big_r + h) / h).ceil() as i64 + 1;
        let axis: Vec<f64> = (-reach..=reach).map(|j| phase + j as f64 * h).collect();
        let mut u = vec![0.0; d];
        for flat in 0..axis.len().pow(d as u32) {
            let mut rem = flat;
            for c in u.iter_mut() {
                *c = axis[rem % axis.len()];
                rem /= axis.len();
            }
            let sup = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let v = self.value(&u);
            let lower = if sup < self.r { self.v_minus } else { 0.0 };
            let upper = if sup <= big_r { self.v_plus } else { 0.0 };
            if v < lower || v > upper {
                return Err(ModelError::Sandwich {
                    offset: u.clone(),
                    value: v,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }
}

/// Discrete samples of `V_0` on the offsets a grid produces.
#[derive(Debug, Clone)]
pub struct BumpField {
    pub profile: BumpProfile,
    pub d: usize,
    /// Axis offsets `phase + j h` covering the support.
    pub axis: Vec<f64>,
    /// Row-major values over `axis^d` (first coordinate fastest).
    pub values: Vec<f64>,
}

/// Builds the discrete bump on the grid offsets `phase + h Z^d`, rejecting
/// profiles that violate the sandwich bound at any offset.
#[allow(clippy::too_many_arguments)]
pub fn build_bump_profile(
    kind: BumpKind,
    r: f64,
    outer_radius: f64,
    v_minus: f64,
    v_plus: f64,
    d: usize,
    h: f64,
    phase: f64,
) -> Result<BumpField, ModelError> {
    let profile = BumpProfile::new(kind, r, outer_radius, v_minus, v_plus)?;
    if !(1..=3).contains(&d) {
        return Err(ModelError::Dimension(d));
    }
    profile.check_sandwich(d, h, phase)?;
    let reach = (outer_radius / h).ceil() as i64 + 1;
    let axis: Vec<f64> = (-reach..=reach).map(|j| phase + j as f64 * h).collect();
    let total = axis.len().pow(d as u32);
    let mut values = Vec::with_capacity(total);
    let mut u = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for c in u.iter_mut() {
            *c = axis[rem % axis.len()];
            rem /= axis.len();
        }
        values.push(profile.value(&u));
    }
    Ok(BumpField {
        profile,
        d,
        axis,
        values,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DensityDoc {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// Piecewise-linear single-site density on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityDoc", into = "DensityDoc")]
pub struct DensitySpec {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest slope between adjacent knots.
    pub lipschitz: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    cumulative: Vec<f64>,
}

impl TryFrom<DensityDoc> for DensitySpec {
    type Error = ModelError;
    fn try_from(doc: DensityDoc) -> Result<Self, ModelError> {
        DensitySpec::new(doc.knots, doc.values)
    }
}

impl From<DensitySpec> for DensityDoc {
    fn from(d: DensitySpec) -> Self {
        DensityDoc {
            knots: d.knots,
            values: d.values,
        }
    }
}

impl DensitySpec {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(ModelError::Density(
                "need at least two knots and one value per knot".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ModelError::Density(
                "knots must be strictly increasing".into(),
            ));
        }
        if knots[0] < 0.0 || knots[knots.len() - 1] > 1.0 {
            return Err(ModelError::Density("support must lie in [0, 1]".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ModelError::Density(
                "values must be finite and nonnegative".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(knots.len());
        cumulative.push(0.0);
        let mut lipschitz = 0.0f64;
        for j in 0..knots.len() - 1 {
            let w = knots[j + 1] - knots[j];
            let mass = 0.5 * (values[j] + values[j + 1]) * w;
            cumulative.push(cumulative[j] + mass);
            lipschitz = lipschitz.max((values[j + 1] - values[j]).abs() / w);
        }
        let total = cumulative[cumulative.len() - 1];
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::Density(format!(
                "density integrates to {total}, expected 1"
            )));
        }
        let rho_minus = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let rho_plus = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            knots,
            values,
            lipschitz,
            rho_minus,
            rho_plus,
            cumulative,
        })
    }

    pub fn uniform() -> Self {
        Self::new(vec![0.0, 1.0], vec![1.0, 1.0]).expect("uniform density is valid")
    }

    /// Lipschitz-regular: bounded below by a positive constant on the whole of `[0, 1]`.
    pub fn is_lipschitz_regular(&self) -> bool {
        self.knots[0] == 0.0 && self.knots[self.knots.len() - 1] == 1.0 && self.rho_minus > 0.0
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.knots[0] || x > self.knots[self.knots.len() - 1] {
            return 0.0;
        }
        let j = self.segment_of(x);
        let (x0, x1) = (self.knots[j], self.knots[j + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[j] * (1.0 - t) + self.values[j + 1] * t
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.knots[0] {
            return 0.0;
        }
        if x >= self.knots[self.knots.len() - 1] {
            return 1.0;
        }
        let j = self.segment_of(x);
        let a = self.values[j];
        let w = self.knots[j + 1] - self.knots[j];
        let slope = (self.values[j + 1] - a) / w;
        let y = x - self.knots[j];
        self.cumulative[j] + a * y + 0.5 * slope * y * y
    }

    fn segment_of(&self, x: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    /// Inverse CDF, solving the per-segment quadratic in closed form.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let last = self.knots.len() - 2;
        let mut j = match self.cumulative.partition_point(|&c| c <= u) {
            0 => 0,
            p => (p - 1).min(last),
        };
        // skip zero-mass segments
        while j < last && self.cumulative[j + 1] <= self.cumulative[j] {
            j += 1;
        }
        let a = self.values[j];
        let w = self.knots[j + 1] - self.knots[j];
        let slope = (self.values[j + 1] - a) / w;
        let t = (u - self.cumulative[j]).max(0.0);
        let y = if slope.abs() < 1e-300 {
            if a > 0.0 {
                t / a
            } else {
                0.0
            }
        } else {
            let disc = (a * a + 2.0 * slope * t).max(0.0);
            let denom = a + disc.sqrt();
            if denom > 0.0 {
                2.0 * t / denom
            } else {
                0.0
            }
        };
        (self.knots[j] + y.min(w)).clamp(self.knots[0], self.knots[last + 1])
    }
}

/// `Z^d`-periodic scalar field used for the deformation `G` and background `V_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PeriodicField {
    Constant {
        value: f64,
    },
    /// `mean + amplitude · ∏_i cos(2π x_i)`.
    Cosine {
        mean: f64,
        amplitude: f64,
    },
}

impl PeriodicField {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            PeriodicField::Constant { value } => value,
            PeriodicField::Cosine { mean, amplitude } => {
                mean + amplitude * x.iter().map(|xi| (2.0 * PI * xi).cos()).product::<f64>()
            }
        }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            PeriodicField::Constant { value } => value,
            PeriodicField::Cosine { mean, amplitude } => mean - amplitude.abs(),
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            PeriodicField::Constant { value } => value,
            PeriodicField::Cosine { mean, amplitude } => mean + amplitude.abs(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.lower().abs().max(self.upper().abs())
    }
}

fn unit_field() -> PeriodicField {
    PeriodicField::Constant { value: 1.0 }
}

fn zero_field() -> PeriodicField {
    PeriodicField::Constant { value: 0.0 }
}

/// Full description of one operator family `-μ G Δ G + V_o + V_ω` on `Λ_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub mu: f64,
    #[serde(rename = "L")]
    pub box_side: f64,
    pub h: f64,
    pub bump: BumpProfile,
    pub density: DensitySpec,
    #[serde(rename = "G", default = "unit_field")]
    pub deformation: PeriodicField,
    #[serde(rename = "V_o", default = "zero_field")]
    pub background: PeriodicField,
    #[serde(default)]
    pub seed: u64,
}

impl ModelParams {
    /// Standard model (`G ≡ 1`, `V_o ≡ 0`) with flat unit tiles and uniform couplings.
    pub fn standard(d: usize, mu: f64, box_side: f64, h: f64) -> Self {
        Self {
            d,
            mu,
            box_side,
            h,
            bump: BumpProfile {
                kind: BumpKind::FlatTile,
                r: 0.5,
                outer_radius: 0.5,
                v_minus: 1.0,
                v_plus: 1.0,
            },
            density: DensitySpec::uniform(),
            deformation: unit_field(),
            background: zero_field(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=3).contains(&self.d) {
            return Err(ModelError::Dimension(self.d));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(param_err("mu", "must be positive"));
        }
        if !(self.h > 0.0) {
            return Err(param_err("h", "must be positive"));
        }
        let ratio = self.box_side / self.h;
        if (ratio - ratio.round()).abs() > GRID_TOL * ratio.max(1.0) || ratio.round() < 2.0 {
            return Err(param_err(
                "h",
                format!("L/h = {ratio} must be an integer >= 2"),
            ));
        }
        if !(self.deformation.lower() > 0.0) {
            return Err(param_err(
                "G",
                "deformation must be bounded below by G_- > 0",
            ));
        }
        if !self.background.sup_norm().is_finite() {
            return Err(param_err("V_o", "background must be bounded"));
        }
        self.bump.check_parameters()?;
        self.bump
            .check_sandwich(self.d, self.h, self.grid_phase())?;
        Ok(())
    }

    /// Number of grid intervals per side, `L/h`.
    pub fn cells_per_side(&self) -> usize {
        (self.box_side / self.h).round() as usize
    }

    /// Offset of the first grid line from the integer lattice, in `[0, h)`.
    pub fn grid_phase(&self) -> f64 {
        (-0.5 * self.box_side).rem_euclid(self.h)
    }

    pub fn index_set(&self) -> Vec<LatticePoint> {
        index_set(self.box_side, self.bump.outer_radius, self.d)
    }

    /// Position of the interior node with per-axis grid index `i` (1-based).
    pub fn node_position(&self, i: usize) -> f64 {
        -0.5 * self.box_side + i as f64 * self.h
    }

    /// `(V_-, V_+)`: extremes of `Σ_{k ∈ Γ_L} V_k` over the interior nodes.
    pub fn covering_bounds(&self) -> (f64, f64) {
        let m = self.cells_per_side();
        let axis: Vec<f64> = (1..m).map(|i| self.node_position(i)).collect();
        let indices = self.index_set();
        let total = axis.len().pow(self.d as u32);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut x = vec![0.0; self.d];
        let mut u = vec![0.0; self.d];
        for flat in 0..total {
            let mut rem = flat;
            for c in x.iter_mut() {
                *c = axis[rem % axis.len()];
                rem /= axis.len();
            }
            let mut s = 0.0;
            for k in &indices {
                for a in 0..self.d {
                    u[a] = x[a] - k[a] as f64;
                }
                s += self.bump.value(&u);
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model parameters serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let params: ModelParams =
            toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    /// Short content hash of the canonical serialization.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// `Γ_L = Λ_{L+R} ∩ Z^d`: integer points with `|k_i| <= (L+R)/2`, in
/// lexicographic order.
pub fn index_set(box_side: f64, outer_radius: f64, d: usize) -> Vec<LatticePoint> {
    let half = (0.5 * (box_side + outer_radius) + 1e-12).floor() as i64;
    if half < 0 {
        return Vec::new();
    }
    let side = (2 * half + 1) as usize;
    let mut out = Vec::with_capacity(side.pow(d as u32));
    for flat in 0..side.pow(d as u32) {
        let mut p = [0i64; 3];
        let mut rem = flat;
        for a in (0..d).rev() {
            p[a] = (rem % side) as i64 - half;
            rem /= side;
        }
        out.push(p);
    }
    out
}

/// SplitMix64 finalizer applied to `master + (index + 1) · γ`: a counter-based
/// per-stream seed that does not depend on scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One realization `ω` of the coupling field on `Γ_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub indices: Vec<LatticePoint>,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
    /// Set when some coupling lies outside `[0, 1]`.
    pub out_of_support: bool,
}

impl Configuration {
    pub fn new(indices: Vec<LatticePoint>, values: Vec<f64>) -> Self {
        assert_eq!(indices.len(), values.len(), "one value per lattice point");
        let out_of_support = values.iter().any(|v| !(0.0..=1.0).contains(v));
        Self {
            indices,
            values,
            seed: None,
            out_of_support,
        }
    }

    pub fn constant(indices: Vec<LatticePoint>, value: f64) -> Self {
        let n = indices.len();
        Self::new(indices, vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, k: &LatticePoint) -> Option<usize> {
        self.indices.binary_search(k).ok()
    }

    pub fn get(&self, k: &LatticePoint) -> Option<f64> {
        self.position(k).map(|i| self.values[i])
    }

    /// Returns a copy with `values[i]` replaced, recomputing the support flag.
    pub fn with_value(&self, i: usize, v: f64) -> Self {
        let mut values = self.values.clone();
        values[i] = v;
        let mut out = Self::new(self.indices.clone(), values);
        out.seed = self.seed;
        out
    }
}

/// Draws i.i.d. couplings by inverse CDF. Deterministic in `seed`.
pub fn sample_configuration(
    density: &DensitySpec,
    indices: &[LatticePoint],
    seed: u64,
) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = indices
        .iter()
        .map(|_| density.quantile(rng.random::<f64>()))
        .collect();
    let mut c = Configuration::new(indices.to_vec(), values);
    c.seed = Some(seed);
    c
}

/// `ω'_k = ω_k + τ`; shifted couplings may leave `[0, 1]` and are flagged.
pub fn shift_configuration(omega: &Configuration, tau: f64) -> Configuration {
    let values = omega.values.iter().map(|v| v + tau).collect();
    let mut c = Configuration::new(omega.indices.clone(), values);
    c.seed = omega.seed;
    c
}

/// Threshold energies derived from the model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub e_spc: f64,
    pub e_m: f64,
    /// `μ π² G_-² / (2 R² (2R+1)^d v_+)`.
    pub prefactor: f64,
    pub cover_minus: f64,
    pub cover_plus: f64,
    pub v_plus: f64,
    pub background_norm: f64,
    pub d: usize,
}

impl Thresholds {
    /// `ξ_{L,ℓ,n,r} = prefactor · (V_- - v_+ L^d e^{-mℓ} - 26 √n ℓ^{-r}) - ‖V_o‖`.
    pub fn xi(&self, box_side: f64, ell: f64, n: usize, r: f64, m: f64) -> f64 {
        let inner = self.cover_minus
            - self.v_plus * box_side.powi(self.d as i32) * (-m * ell).exp()
            - 26.0 * (n as f64).sqrt() * ell.powf(-r);
        self.prefactor * inner - self.background_norm
    }
}

pub fn thresholds(params: &ModelParams) -> Result<Thresholds, ModelError> {
    let big_r = params.bump.outer_radius;
    if !(big_r > 0.0) {
        return Err(param_err("bump.R", "must be positive"));
    }
    if !(params.bump.v_plus > 0.0) {
        return Err(param_err("bump.v_plus", "must be positive"));
    }
    let (cover_minus, cover_plus) = params.covering_bounds();
    if !(cover_minus > 0.0) {
        return Err(param_err("bump", "covering condition fails: V_- = 0"));
    }
    let g_minus = params.deformation.lower();
    let background_norm = params.background.sup_norm();
    let prefactor = params.mu * PI * PI * g_minus * g_minus
        / (2.0 * big_r * big_r * (2.0 * big_r + 1.0).powi(params.d as i32) * params.bump.v_plus);
    let e_spc = prefactor * cover_minus - background_norm;
    let e_m = prefactor * cover_minus * cover_minus / cover_plus - background_norm;
    Ok(Thresholds {
        e_spc,
        e_m,
        prefactor,
        cover_minus,
        cover_plus,
        v_plus: params.bump.v_plus,
        background_norm,
        d: params.d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn index_set_examples() {
        let s = index_set(4.0, 1.0, 1);
        let firsts: Vec<i64> = s.iter().map(|p| p[0]).collect();
        assert_eq!(firsts, vec![-2, -1, 0, 1, 2]);
        assert_eq!(index_set(2.0, 0.0, 2).len(), 9);
        assert!(index_set(2.0, 0.0, 2)
            .iter()
            .all(|p| p[0].abs() <= 1 && p[1].abs() <= 1 && p[2] == 0));
        assert_eq!(index_set(1.0, 0.0, 1), vec![[0, 0, 0]]);
    }

    #[test]
    fn index_set_is_sorted_and_sized() {
        for (l, r, d) in [(4.0, 1.0, 1), (6.0, 2.0, 2), (3.0, 1.0, 3)] {
            let s = index_set(l, r, d);
            let half = ((l + r) / 2.0f64).floor() as usize;
            assert_eq!(s.len(), (2 * half + 1).pow(d as u32));
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn thresholds_examples() {
        let params = ModelParams::standard(1, 1.0, 4.0, 0.25);
        let t = thresholds(&params).unwrap();
        assert_relative_eq!(t.e_spc, PI * PI, max_relative = 1e-14);
        assert_relative_eq!(t.e_m, t.e_spc, max_relative = 1e-14);
        let xi = t.xi(10.0, 10.0, 4, 2.0, 1.0);
        let expected = PI * PI * (1.0 - 10.0 * (-10.0f64).exp() - 26.0 * 2.0 * 0.01);
        assert_relative_eq!(xi, expected, max_relative = 1e-14);
        assert!((xi - 4.733).abs() < 1e-3);
    }

    #[test]
    fn thresholds_deformed_and_scaling() {
        let mut params = ModelParams::standard(1, 1.0, 4.0, 0.25);
        params.deformation = PeriodicField::Cosine {
            mean: 1.0,
            amplitude: 0.5,
        };
        params.background = PeriodicField::Constant { value: 0.25 };
        let t = thresholds(&params).unwrap();
        assert_relative_eq!(t.e_spc, PI * PI * 0.25 - 0.25, max_relative = 1e-14);
        assert!(t.e_m <= t.e_spc);

        let p1 = ModelParams::standard(2, 1.0, 4.0, 0.5);
        let mut p2 = p1.clone();
        p2.mu = 2.0;
        let (t1, t2) = (thresholds(&p1).unwrap(), thresholds(&p2).unwrap());
        assert_relative_eq!(t2.e_spc, 2.0 * t1.e_spc, max_relative = 1e-14);
    }

    #[test]
    fn xi_monotone_in_n_and_l() {
        let t = thresholds(&ModelParams::standard(1, 1.0, 4.0, 0.25)).unwrap();
        for n in 1..10 {
            assert!(t.xi(10.0, 5.0, n + 1, 1.5, 1.0) <= t.xi(10.0, 5.0, n, 1.5, 1.0));
        }
        for l in 1..10 {
            let l = l as f64;
            assert!(t.xi(l + 1.0, 5.0, 3, 1.5, 1.0) <= t.xi(l, 5.0, 3, 1.5, 1.0));
        }
    }

    #[test]
    fn thresholds_reject_degenerate_bump() {
        let mut params = ModelParams::standard(1, 1.0, 4.0, 0.25);
        params.bump.v_plus = 0.0;
        assert!(thresholds(&params).is_err());
        let mut params = ModelParams::standard(1, 1.0, 4.0, 0.25);
        params.bump.outer_radius = 0.0;
        assert!(thresholds(&params).is_err());
    }

    #[test]
    fn bump_examples() {
        let flat =
            build_bump_profile(BumpKind::FlatTile, 0.5, 0.5, 1.0, 1.0, 1, 0.25, 0.0).unwrap();
        assert_eq!(flat.profile.value(&[-0.5]), 1.0);
        assert_eq!(flat.profile.value(&[0.5]), 0.0);
        let tent = BumpProfile::new(BumpKind::Tent, 0.5, 1.0, 0.5, 1.0).unwrap();
        for &u in &[-1.5, -1.0, -0.25, 0.0, 0.3, 0.75] {
            assert_eq!(tent.value(&[u]), (1.0f64 - u.abs()).max(0.0));
        }
        tent.check_sandwich(1, 0.25, 0.0).unwrap();
        tent.check_sandwich(1, 0.1, 0.05).unwrap();
        // r too large for the tent height: 1 - 0.75 < 0.5
        let bad = BumpProfile::new(BumpKind::Tent, 0.75, 1.0, 0.5, 1.0).unwrap();
        assert!(bad.check_sandwich(1, 0.1, 0.0).is_err());
        // a Euclidean ball does not contain the sup-norm cube of the same radius
        let ball = BumpProfile::new(BumpKind::BallIndicator, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(ball.check_sandwich(2, 0.25, 0.0).is_err());
        let ball = BumpProfile::new(BumpKind::BallIndicator, 0.7, 1.0, 1.0, 1.0).unwrap();
        ball.check_sandwich(2, 0.25, 0.0).unwrap();
    }

    #[test]
    fn partition_of_unity_profiles() {
        for (kind, big_r) in [(BumpKind::FlatTile, 0.5), (BumpKind::Tent, 1.0)] {
            for d in 1..=2 {
                let mut params = ModelParams::standard(d, 1.0, 4.0, 0.25);
                params.bump = BumpProfile::new(kind, 0.5, big_r, 0.5, 1.0).unwrap();
                params.validate().unwrap();
                let (lo, hi) = params.covering_bounds();
                assert!((lo - 1.0).abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn density_quantile_example() {
        let rho = DensitySpec::new(vec![0.0, 1.0], vec![0.5, 1.5]).unwrap();
        assert_relative_eq!(rho.quantile(0.375), 0.5, max_relative = 1e-15);
        assert_relative_eq!(rho.cdf(0.5), 0.375, max_relative = 1e-15);
        assert_eq!(rho.lipschitz, 1.0);
        assert!(rho.is_lipschitz_regular());
    }

    #[test]
    fn density_rejects_bad_input() {
        assert!(DensitySpec::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(DensitySpec::new(vec![-0.5, 0.5], vec![1.0, 1.0]).is_err());
        assert!(DensitySpec::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(DensitySpec::new(vec![0.0, 1.0], vec![-1.0, 3.0]).is_err());
    }

    #[test]
    fn density_with_zero_segment() {
        // mass only on [0.5, 1]
        let rho = DensitySpec::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.0, 4.0]).unwrap();
        assert!(!rho.is_lipschitz_regular());
        for u in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let x = rho.quantile(u);
            assert!((0.5..=1.0).contains(&x));
            assert!((rho.cdf(x) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_matches_uniform_cdf() {
        let rho = DensitySpec::uniform();
        let indices: Vec<LatticePoint> = (0..100_000).map(|i| [i, 0, 0]).collect();
        let c = sample_configuration(&rho, &indices, 7);
        let mut v = c.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let sup = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((i as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "sup distance {sup}");
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let rho = DensitySpec::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5, 0.5]).unwrap();
        let idx = index_set(6.0, 1.0, 2);
        let a = sample_configuration(&rho, &idx, 42);
        let b = sample_configuration(&rho, &idx, 42);
        assert_eq!(a, b);
        assert_ne!(a, sample_configuration(&rho, &idx, 43));
    }

    #[test]
    fn shift_examples() {
        let idx = vec![[0, 0, 0], [1, 0, 0]];
        let c = Configuration::new(idx, vec![0.1, 0.2]);
        let s = shift_configuration(&c, 0.05);
        assert_relative_eq!(s.values[0], 0.15, max_relative = 1e-15);
        assert_relative_eq!(s.values[1], 0.25, max_relative = 1e-15);
        assert!(!s.out_of_support);
        let c = Configuration::new(vec![[0, 0, 0]], vec![0.99]);
        let s = shift_configuration(&c, 0.05);
        assert_relative_eq!(s.values[0], 1.04, max_relative = 1e-15);
        assert!(s.out_of_support);
        assert_eq!(shift_configuration(&c, 0.0), c);
    }

    #[test]
    fn model_document_round_trip() {
        let mut params = ModelParams::standard(2, 0.5, 6.0, 0.5);
        params.bump = BumpProfile::new(BumpKind::Tent, 0.5, 1.0, 0.5, 1.0).unwrap();
        params.density = DensitySpec::new(vec![0.0, 0.5, 1.0], vec![0.5, 1.5, 0.5]).unwrap();
        params.deformation = PeriodicField::Cosine {
            mean: 1.0,
            amplitude: 0.25,
        };
        params.seed = 99;
        let text = params.to_toml();
        for key in [
            "d =", "mu =", "L =", "h =", "[bump]", "R =", "v_minus", "v_plus", "knots", "[G]",
            "[V_o]", "kind", "seed =",
        ] {
            assert!(text.contains(key), "missing {key} in\n{text}");
        }
        let back = ModelParams::from_toml(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.hash_hex(), params.hash_hex());
    }

    #[test]
    fn model_document_minimal_keys() {
        let text = r#"
d = 1
mu = 1.0
L = 8.0
h = 0.25
[bump]
kind = "flat-tile"
r = 0.5
R = 0.5
v_minus = 1.0
v_plus = 1.0
[density]
knots = [0.0, 1.0]
values = [1.0, 1.0]
"#;
        let p = ModelParams::from_toml(text).unwrap();
        assert_eq!(p.deformation, PeriodicField::Constant { value: 1.0 });
        assert_eq!(p.background, PeriodicField::Constant { value: 0.0 });
        assert!(ModelParams::from_toml(&text.replace("h = 0.25", "h = 0.3")).is_err());
        assert!(ModelParams::from_toml(
            &text.replace("values = [1.0, 1.0]", "values = [1.0, 2.0]")
        )
        .is_err());
    }
}
