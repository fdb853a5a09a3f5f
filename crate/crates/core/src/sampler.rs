//! Random boundary conditions drawn from norm balls: a radial law times a
//! uniform direction on the unit sphere of the problem's trace norm.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    EllipticInterior,
    EllipticBoundary,
    RteInterior,
    RteBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Ball radius.
    pub radius: f64,
    /// Radial exponent: `(r / R)^D` is uniform.
    pub exponent: u32,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(radius: f64, exponent: u32, seed: u64) -> Result<Self> {
        let cfg = Self { radius, exponent, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Sampler(format!("radius must be positive, got {}", self.radius)));
        }
        if self.exponent == 0 {
            return Err(Error::Sampler("radial exponent must be at least 1".into()));
        }
        Ok(())
    }
}

/// Independent generator for sample `index` of `patch`.
///
/// The seed selects a ChaCha8 key, the patch a stream, and `(index, attempt)`
/// a block of 2^40 words inside it, so samples can be drawn in any order or
/// in parallel and still reproduce bit for bit.
pub fn stream_rng(seed: u64, patch: usize, index: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patch as u64);
    rng.set_word_pos(((index as u128) * 4 + attempt as u128) << 40);
    rng
}

fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Direction uniform on `{x : xᵀ W x = 1}` given the Cholesky factor `W = L Lᵀ`.
fn ellipsoid_direction<R: Rng + ?Sized>(l: &DMatrix<f64>, w: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = l.nrows();
    loop {
        let y = gaussian_vector(n, rng);
        // Z = C⁻¹ Y with C = Lᵀ
        let z = l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("Cholesky factor has a nonzero diagonal");
        let norm = z.dot(&(w * &z)).sqrt();
        if norm > 0.0 && norm.is_finite() {
            return z / norm;
        }
    }
}

fn clamp_roundoff(budget: f64, radius: f64) -> f64 {
    if budget < 0.0 && budget > -1e-12 * radius * radius {
        0.0
    } else {
        budget
    }
}

fn cholesky_factor(w: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    w.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} weight matrix")))
}

/// Prepared sampler for a ball in the norm `sqrt(φᵀ W φ)`.
#[derive(Debug, Clone)]
pub struct EllipticInteriorSampler {
    w: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl EllipticInteriorSampler {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let l = cholesky_factor(&w, "boundary")?;
        Ok(Self { w, l })
    }

    pub fn weight_matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sample<R: Rng + ?Sized>(&self, cfg: &SamplerConfig, rng: &mut R) -> Vec<f64> {
        let x = ellipsoid_direction(&self.l, &self.w, rng);
        let u: f64 = rng.gen();
        let r = cfg.radius * u.powf(1.0 / cfg.exponent as f64);
        (x * r).as_slice().to_vec()
    }
}

/// Draws `φ = r X` with `‖X‖_{1/2} = 1` and `(r/R)^D ~ U(0, 1)`.
pub fn sample_elliptic_interior<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    nodes: &[[f64; 2]],
    h: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let w = crate::elliptic::h12_weight_matrix(nodes, h)?;
    Ok(EllipticInteriorSampler::new(w)?.sample(cfg, rng))
}

/// Partition of the boundary weight matrix into physical (`d`) and free
/// (`r`) blocks, with the physical values fixed.
#[derive(Debug, Clone)]
pub struct EllipsoidSpec {
    pub fixed_idx: Vec<usize>,
    pub free_idx: Vec<usize>,
    pub w_dd: DMatrix<f64>,
    pub w_dr: DMatrix<f64>,
    pub w_rd: DMatrix<f64>,
    pub w_rr: DMatrix<f64>,
    pub phi_d: DVector<f64>,
    l_rr: DMatrix<f64>,
    budget: f64,
}

impl EllipsoidSpec {
    /// `fixed[i]` is `Some(value)` on physical-boundary entries.
    pub fn new(w: &DMatrix<f64>, fixed: &[Option<f64>]) -> Result<Self> {
        let n = w.nrows();
        if fixed.len() != n {
            return Err(Error::Sampler(format!(
                "mask has {} entries, weight matrix is {n}×{n}",
                fixed.len()
            )));
        }
        let fixed_idx: Vec<usize> = (0..n).filter(|&i| fixed[i].is_some()).collect();
        let free_idx: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let block = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| w[(rows[i], cols[j])])
        };
        let w_dd = block(&fixed_idx, &fixed_idx);
        let w_dr = block(&fixed_idx, &free_idx);
        let w_rd = block(&free_idx, &fixed_idx);
        let w_rr = block(&free_idx, &free_idx);
        let phi_d = DVector::from_iterator(fixed_idx.len(), fixed_idx.iter().map(|&i| fixed[i].unwrap()));
        let l_rr = if free_idx.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            cholesky_factor(&w_rr, "free-block")?
        };
        Ok(Self {
            fixed_idx,
            free_idx,
            w_dd,
            w_dr,
            w_rd,
            w_rr,
            phi_d,
            l_rr,
            budget: 0.0,
        }
        .with_budget_unchecked())
    }

    fn with_budget_unchecked(mut self) -> Self {
        let s = self.schur_complement();
        self.budget = self.phi_d.dot(&(&s * &self.phi_d));
        self
    }

    /// `W_dd − W_dr W_rr⁻¹ W_rd`.
    pub fn schur_complement(&self) -> DMatrix<f64> {
        if self.free_idx.is_empty() {
            return self.w_dd.clone();
        }
        let chol = self.w_rr.clone().cholesky().expect("checked in new");
        &self.w_dd - &self.w_dr * chol.solve(&self.w_rd)
    }

    /// `φ_dᵀ S φ_d`, the part of `R²` consumed by the fixed data.
    pub fn fixed_energy(&self) -> f64 {
        self.budget
    }

    /// `R² − φ_dᵀ S φ_d`.
    pub fn free_budget(&self, radius: f64) -> f64 {
        radius * radius - self.budget
    }

    pub fn len(&self) -> usize {
        self.fixed_idx.len() + self.free_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed physical entries plus a free block uniform in direction on
/// `{Xᵀ W_rr X = 1}` with `r^D ~ U(0, budget^{D/2})`. Output is in the
/// original entry order.
pub fn sample_elliptic_boundary<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    spec: &EllipsoidSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let budget = clamp_roundoff(spec.free_budget(cfg.radius), cfg.radius);
    if budget < 0.0 {
        return Err(Error::Sampler(format!(
            "fixed boundary data exceeds sampling radius (needs {:.4e} > R² = {:.4e})",
            spec.fixed_energy(),
            cfg.radius * cfg.radius
        )));
    }
    let mut out = vec![0.0; spec.len()];
    for (k, &i) in spec.fixed_idx.iter().enumerate() {
        out[i] = spec.phi_d[k];
    }
    // a fully pinned boundary leaves a single admissible trace
    if spec.free_idx.is_empty() {
        return Ok(out);
    }
    let x = ellipsoid_direction(&spec.l_rr, &spec.w_rr, rng);
    let u: f64 = rng.gen();
    let r = budget.sqrt() * u.powf(1.0 / cfg.exponent as f64);
    for (k, &i) in spec.free_idx.iter().enumerate() {
        out[i] = r * x[k];
    }
    Ok(out)
}

/// Weights of the slab trace norm in trace order: `w_j` for the `N_v`
/// inflow intensities, then one each for the two end temperatures.
pub fn rte_trace_weights(quad: &GaussLegendre) -> Vec<f64> {
    let mut w = quad.weights.clone();
    w.extend([1.0, 1.0]);
    w
}

fn nonnegative_direction<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    loop {
        let z: Vec<f64> = weights
            .iter()
            .map(|w| rng.sample::<f64, _>(StandardNormal).abs() / w.sqrt())
            .collect();
        let norm = crate::linalg::weighted_norm(&z, weights);
        if norm > 0.0 && norm.is_finite() {
            return z.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Nonnegative slab trace with `(r/R)²` uniform and unit weighted-norm direction.
pub fn sample_rte_interior<R: Rng + ?Sized>(cfg: &SamplerConfig, quad: &GaussLegendre, rng: &mut R) -> Vec<f64> {
    let weights = rte_trace_weights(quad);
    let x = nonnegative_direction(&weights, rng);
    let u: f64 = rng.gen();
    let r = cfg.radius * u.sqrt();
    x.into_iter().map(|v| r * v).collect()
}

/// Like [`sample_rte_interior`] on the free entries, with the radius reduced
/// to `sqrt(R² − ‖fixed‖²)`. `fixed[i]` is `Some` on physical entries.
pub fn sample_rte_boundary<R: Rng + ?Sized>(
    cfg: &SamplerConfig,
    fixed: &[Option<f64>],
    quad: &GaussLegendre,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let weights = rte_trace_weights(quad);
    if fixed.len() != weights.len() {
        return Err(Error::Sampler(format!(
            "trace mask has {} entries, expected {}",
            fixed.len(),
            weights.len()
        )));
    }
    if fixed.iter().any(|v| v.map_or(false, |v| v < 0.0)) {
        return Err(Error::Sampler("fixed slab data must be nonnegative".into()));
    }
    let fixed_sq: f64 = fixed
        .iter()
        .zip(&weights)
        .filter_map(|(v, w)| v.map(|v| w * v * v))
        .sum();
    let budget = clamp_roundoff(cfg.radius * cfg.radius - fixed_sq, cfg.radius);
    if budget < 0.0 {
        return Err(Error::Sampler(format!(
            "fixed boundary data exceeds sampling radius ({:.4} > {})",
            fixed_sq.sqrt(),
            cfg.radius
        )));
    }
    let free_w: Vec<f64> = fixed
        .iter()
        .zip(&weights)
        .filter(|(v, _)| v.is_none())
        .map(|(_, w)| *w)
        .collect();
    let x = nonnegative_direction(&free_w, rng);
    let u: f64 = rng.gen();
    let r = budget.sqrt() * u.sqrt();
    let mut free = x.into_iter();
    Ok(fixed
        .iter()
        .map(|v| match v {
            Some(v) => *v,
            None => r * free.next().unwrap(),
        })
        .collect())
}
