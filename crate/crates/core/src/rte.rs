//! Nonlinear radiative transfer in a slab,
//! `ε v ∂ₓI = T⁴ − I`, `ε² ∂ₓ²T = T⁴ − ⟨I⟩`, on vertex-centered grids with
//! Gauss–Legendre velocities.
//!
//! Flat field layout: `I[i·N_v + j]` for node `i` and velocity `j`, followed
//! by `T[i]`. Flat trace layout: entry `j < N_v` is the inflow intensity at
//! velocity `v_j` (left end for `v_j > 0`, right end for `v_j < 0`), then the
//! left and right end temperatures.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anderson::Anderson;
use crate::error::{Error, Result};
use crate::geometry::{build_partition_of_unity, BoundarySource, Grid1D, Interval, PatchLayout};
use crate::linalg::{inf_norm, solve_tridiagonal, weighted_norm};
use crate::problem::{Coupling, Problem, ProblemDescription, ProblemKind, TraceSource};
use crate::quadrature::GaussLegendre;
use crate::sampler::{rte_trace_weights, sample_rte_boundary, sample_rte_interior, SamplerConfig};

/// Scaled residual bound `dx²·|…|` for the temperature solve.
const TEMPERATURE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOpts {
    /// Bound on the relative L² change of `T` between sweeps.
    pub tol: f64,
    pub max_iter: usize,
    pub anderson_depth: usize,
    pub anderson_damping: f64,
}

impl Default for FixedPointOpts {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            anderson_depth: 5,
            anderson_damping: 1.0,
        }
    }
}

impl FixedPointOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.anderson_damping > 0.0) {
            return Err(Error::InvalidInput(format!("invalid fixed-point options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointStats {
    pub iterations: usize,
    pub change: f64,
}

/// `(E, α, β)` with `I_next = E·I + α·s_next + β·s_cur` for optical step `μ`.
pub fn transport_coefficients(mu: f64) -> (f64, f64, f64) {
    let e = (-mu).exp();
    if mu < 1e-4 {
        let m2 = mu * mu;
        let m3 = m2 * mu;
        let m4 = m3 * mu;
        let a = mu / 2.0 - m2 / 6.0 + m3 / 24.0 - m4 / 120.0;
        let b = mu / 2.0 - m2 / 3.0 + m3 / 8.0 - m4 / 30.0;
        (e, a, b)
    } else {
        let q = -(-mu).exp_m1() / mu;
        (e, 1.0 - q, q - e)
    }
}

/// Exponential-fitted sweep for a given emission `s_i` at every node.
pub fn sweep_source(source: &[f64], inflow: &[f64], eps: f64, dx: f64, quad: &GaussLegendre) -> Vec<f64> {
    let n = source.len();
    let nv = quad.len();
    let mut out = vec![0.0; n * nv];
    for (j, &v) in quad.nodes.iter().enumerate() {
        let (e, a, b) = transport_coefficients(dx / (eps * v.abs()));
        if v > 0.0 {
            let mut cur = inflow[j];
            out[j] = cur;
            for i in 0..n - 1 {
                cur = e * cur + a * source[i + 1] + b * source[i];
                out[(i + 1) * nv + j] = cur;
            }
        } else {
            let mut cur = inflow[j];
            out[(n - 1) * nv + j] = cur;
            for i in (0..n - 1).rev() {
                cur = e * cur + a * source[i] + b * source[i + 1];
                out[i * nv + j] = cur;
            }
        }
    }
    out
}

/// Intensity for the emission `T⁴`.
pub fn transport_sweep(t: &[f64], inflow: &[f64], eps: f64, dx: f64, quad: &GaussLegendre) -> Vec<f64> {
    let s: Vec<f64> = t.iter().map(|t| t.powi(4)).collect();
    sweep_source(&s, inflow, eps, dx, quad)
}

/// `⟨I⟩_i = ½ Σ_j w_j I_ij`.
pub fn velocity_average(intensity: &[f64], quad: &GaussLegendre) -> Vec<f64> {
    intensity
        .chunks_exact(quad.len())
        .map(|row| 0.5 * row.iter().zip(&quad.weights).map(|(i, w)| w * i).sum::<f64>())
        .collect()
}

/// Interior residual `ε²(2T_i − T_{i−1} − T_{i+1}) + dx²(T_i⁴ − ⟨I⟩_i)`.
pub fn temperature_residual(t: &[f64], mean: &[f64], eps: f64, dx: f64) -> Vec<f64> {
    let e2 = eps * eps;
    let d2 = dx * dx;
    (1..t.len() - 1)
        .map(|i| e2 * (2.0 * t[i] - t[i - 1] - t[i + 1]) + d2 * (t[i].powi(4) - mean[i]))
        .collect()
}

/// Solves the three-point discretization of `ε² T'' = T⁴ − ⟨I⟩` with
/// Dirichlet ends by Newton's method, keeping iterates between the
/// sub-solution 0 and the super-solution `max(θ₁, θ₂, max ⟨I⟩^{1/4})`.
pub fn temperature_solve(
    mean: &[f64],
    theta1: f64,
    theta2: f64,
    eps: f64,
    dx: f64,
    initial: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = mean.len();
    if n < 2 {
        return Err(Error::InvalidInput("temperature grid needs two nodes".into()));
    }
    if theta1 < 0.0 || theta2 < 0.0 || mean.iter().any(|m| *m < 0.0) {
        return Err(Error::InvalidInput("temperature data must be nonnegative".into()));
    }
    let tmax = mean
        .iter()
        .fold(theta1.max(theta2), |acc, m| acc.max(m.powf(0.25)));
    let clamp = |v: f64| v.clamp(0.0, tmax);
    let mut t: Vec<f64> = match initial {
        Some(init) if init.len() == n => init.iter().map(|v| clamp(*v)).collect(),
        _ => (0..n)
            .map(|i| theta1 + (theta2 - theta1) * i as f64 / (n - 1) as f64)
            .collect(),
    };
    t[0] = theta1;
    t[n - 1] = theta2;
    if n == 2 {
        return Ok(t);
    }
    let e2 = eps * eps;
    let d2 = dx * dx;
    let mut r = temperature_residual(&t, mean, eps, dx);
    let mut rn = inf_norm(&r);
    let mut trial = t.clone();
    // one Newton step past the tolerance keeps the map smooth in ⟨I⟩
    let mut polished = false;
    for it in 0..100 {
        if rn <= TEMPERATURE_TOL {
            if polished || rn == 0.0 {
                return Ok(t);
            }
            polished = true;
        }
        let m = n - 2;
        let diag: Vec<f64> = (1..n - 1).map(|i| 2.0 * e2 + 4.0 * d2 * t[i].powi(3)).collect();
        let off = vec![-e2; m];
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        solve_tridiagonal(&off, &diag, &off, &mut delta)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 1..n - 1 {
                trial[i] = clamp(t[i] + step * delta[i - 1]);
            }
            let rt = temperature_residual(&trial, mean, eps, dx);
            let tn = inf_norm(&rt);
            if tn < rn || (polished && tn <= rn) {
                std::mem::swap(&mut t, &mut trial);
                r = rt;
                rn = tn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if rn <= TEMPERATURE_TOL {
                return Ok(t);
            }
            return Err(Error::SolverFailure {
                context: "temperature Newton line search stalled".into(),
                iterations: it + 1,
                residual: rn,
            });
        }
    }
    if rn <= TEMPERATURE_TOL {
        return Ok(t);
    }
    Err(Error::SolverFailure {
        context: "temperature Newton did not converge".into(),
        iterations: 100,
        residual: rn,
    })
}

/// Trapezoid weights in `x`.
pub fn trapezoid_weights(nodes: usize, dx: f64) -> Vec<f64> {
    let mut w = vec![dx; nodes];
    w[0] = 0.5 * dx;
    w[nodes - 1] = 0.5 * dx;
    w
}

/// Norm weights of the flat field layout.
pub fn rte_field_weights(nodes: usize, dx: f64, quad: &GaussLegendre) -> Vec<f64> {
    let tw = trapezoid_weights(nodes, dx);
    let mut w = Vec::with_capacity(nodes * (quad.len() + 1));
    for &ti in &tw {
        w.extend(quad.weights.iter().map(|wj| ti * wj));
    }
    w.extend_from_slice(&tw);
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RteTrace {
    /// Inflow intensity per velocity.
    pub inflow: Vec<f64>,
    pub theta1: f64,
    pub theta2: f64,
}

impl RteTrace {
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() < 4 {
            return Err(Error::InvalidInput("slab trace too short".into()));
        }
        let nv = flat.len() - 2;
        Ok(Self {
            inflow: flat[..nv].to_vec(),
            theta1: flat[nv],
            theta2: flat[nv + 1],
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.inflow.clone();
        v.extend([self.theta1, self.theta2]);
        v
    }

    /// Constant equilibrium data `I = c⁴`, `T = c`.
    pub fn equilibrium(nv: usize, c: f64) -> Self {
        Self {
            inflow: vec![c.powi(4); nv],
            theta1: c,
            theta2: c,
        }
    }

    pub fn norm(&self, quad: &GaussLegendre) -> f64 {
        weighted_norm(&self.to_flat(), &rte_trace_weights(quad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RteField {
    pub interval: Interval,
    pub dx: f64,
    pub nv: usize,
    pub intensity: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl RteField {
    pub fn nodes(&self) -> usize {
        self.temperature.len()
    }

    #[inline]
    pub fn intensity_at(&self, i: usize, j: usize) -> f64 {
        self.intensity[i * self.nv + j]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.intensity.clone();
        v.extend_from_slice(&self.temperature);
        v
    }

    pub fn from_flat(interval: Interval, dx: f64, nv: usize, flat: &[f64]) -> Result<Self> {
        let nodes = interval.cells() + 1;
        if flat.len() != nodes * (nv + 1) {
            return Err(Error::InvalidInput(format!(
                "slab field has {} values, expected {}",
                flat.len(),
                nodes * (nv + 1)
            )));
        }
        Ok(Self {
            interval,
            dx,
            nv,
            intensity: flat[..nodes * nv].to_vec(),
            temperature: flat[nodes * nv..].to_vec(),
        })
    }

    /// Inflow trace the field induces on its own interval ends.
    pub fn trace(&self, quad: &GaussLegendre) -> RteTrace {
        let last = self.nodes() - 1;
        RteTrace {
            inflow: quad
                .nodes
                .iter()
                .enumerate()
                .map(|(j, &v)| if v > 0.0 { self.intensity_at(0, j) } else { self.intensity_at(last, j) })
                .collect(),
            theta1: self.temperature[0],
            theta2: self.temperature[last],
        }
    }

    /// Sub-field on `sub ⊂ interval`.
    pub fn restrict(&self, sub: Interval) -> Result<Self> {
        if sub.lo < self.interval.lo || sub.hi > self.interval.hi || sub.hi <= sub.lo {
            return Err(Error::InvalidInput(format!("{sub:?} is not inside {:?}", self.interval)));
        }
        let a = sub.lo - self.interval.lo;
        let b = sub.hi - self.interval.lo;
        Ok(Self {
            interval: sub,
            dx: self.dx,
            nv: self.nv,
            intensity: self.intensity[a * self.nv..(b + 1) * self.nv].to_vec(),
            temperature: self.temperature[a..=b].to_vec(),
        })
    }
}

pub fn rte_l2_norm(field: &RteField, quad: &GaussLegendre) -> f64 {
    weighted_norm(&field.to_flat(), &rte_field_weights(field.nodes(), field.dx, quad))
}

/// `‖ref − approx‖ / ‖ref‖` on the coarser grid; the reference must refine
/// the approximation in `x` by an integer factor with the same velocities.
pub fn rte_relative_error(reference: &RteField, approx: &RteField, quad: &GaussLegendre) -> Result<f64> {
    if reference.nv != approx.nv || quad.len() != approx.nv {
        return Err(Error::InvalidInput("velocity grids differ".into()));
    }
    let ratio = approx.dx / reference.dx;
    let f = ratio.round();
    if f < 1.0 || (ratio - f).abs() > 1e-9 * ratio {
        return Err(Error::InvalidInput("reference grid does not refine the run grid".into()));
    }
    let f = f as usize;
    if reference.interval.lo != approx.interval.lo * f || reference.interval.hi != approx.interval.hi * f {
        return Err(Error::InvalidInput("reference and run cover different intervals".into()));
    }
    let nodes = approx.nodes();
    let w = rte_field_weights(nodes, approx.dx, quad);
    let nv = approx.nv;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..nodes {
        for j in 0..nv {
            let r = reference.intensity_at(i * f, j);
            let d = r - approx.intensity_at(i, j);
            num += w[i * nv + j] * d * d;
            den += w[i * nv + j] * r * r;
        }
        let r = reference.temperature[i * f];
        let d = r - approx.temperature[i];
        num += w[nodes * nv + i] * d * d;
        den += w[nodes * nv + i] * r * r;
    }
    Ok((num / den).sqrt())
}

/// Fixed-point solve on a slab with `nodes` grid nodes; returns flat
/// `(I, T)` and iteration statistics.
pub fn solve_slab(
    nodes: usize,
    dx: f64,
    quad: &GaussLegendre,
    trace: &[f64],
    eps: f64,
    opts: &FixedPointOpts,
    warm_temperature: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, FixedPointStats)> {
    let nv = quad.len();
    if trace.len() != nv + 2 {
        return Err(Error::InvalidInput(format!("slab trace has {} entries, expected {}", trace.len(), nv + 2)));
    }
    if trace.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("slab trace must be finite and nonnegative".into()));
    }
    if nodes < 2 {
        return Err(Error::InvalidInput("slab needs at least two nodes".into()));
    }
    let (theta1, theta2) = (trace[nv], trace[nv + 1]);
    let inflow = &trace[..nv];
    let tw = trapezoid_weights(nodes, dx);
    let mut x: Vec<f64> = match warm_temperature {
        Some(w) if w.len() == nodes => w.iter().map(|v| v.max(0.0)).collect(),
        _ => (0..nodes)
            .map(|i| theta1 + (theta2 - theta1) * i as f64 / (nodes - 1) as f64)
            .collect(),
    };
    x[0] = theta1;
    x[nodes - 1] = theta2;
    let mut acc = Anderson::new(opts.anderson_depth, opts.anderson_damping);
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let intensity = transport_sweep(&x, inflow, eps, dx, quad);
        let mean = velocity_average(&intensity, quad);
        let g = temperature_solve(&mean, theta1, theta2, eps, dx, Some(&x))?;
        let diff: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gn = weighted_norm(&g, &tw);
        let dn = weighted_norm(&diff, &tw);
        change = if gn > 0.0 { dn / gn } else { dn };
        if change <= opts.tol {
            let intensity = transport_sweep(&g, inflow, eps, dx, quad);
            return Ok((intensity, g, FixedPointStats { iterations: it, change }));
        }
        x = acc.step(&x, &g);
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
        x[0] = theta1;
        x[nodes - 1] = theta2;
    }
    Err(Error::SolverFailure {
        context: "slab fixed-point iteration did not converge".into(),
        iterations: opts.max_iter,
        residual: change,
    })
}

pub fn solve_local_rte(
    interval: Interval,
    dx: f64,
    quad: &GaussLegendre,
    trace: &RteTrace,
    eps: f64,
    opts: &FixedPointOpts,
) -> Result<RteField> {
    let (intensity, temperature, _) = solve_slab(interval.cells() + 1, dx, quad, &trace.to_flat(), eps, opts, None)?;
    Ok(RteField {
        interval,
        dx,
        nv: quad.len(),
        intensity,
        temperature,
    })
}

/// Physical inflow and end temperatures of the slab.
#[derive(Clone)]
pub struct RteBoundary {
    pub left_inflow: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub right_inflow: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub theta1: f64,
    pub theta2: f64,
}

impl std::fmt::Debug for RteBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RteBoundary")
            .field("theta1", &self.theta1)
            .field("theta2", &self.theta2)
            .finish_non_exhaustive()
    }
}

impl RteBoundary {
    /// `3 + sin 2πv` entering on the left, `2 + sin 2πv` on the right,
    /// end temperatures 2 and 3.
    pub fn sinusoidal() -> Self {
        Self {
            left_inflow: Arc::new(|v| 3.0 + (2.0 * PI * v).sin()),
            right_inflow: Arc::new(|v| 2.0 + (2.0 * PI * v).sin()),
            theta1: 2.0,
            theta2: 3.0,
        }
    }

    pub fn equilibrium(c: f64) -> Self {
        let b = c.powi(4);
        Self {
            left_inflow: Arc::new(move |_| b),
            right_inflow: Arc::new(move |_| b),
            theta1: c,
            theta2: c,
        }
    }

    pub fn trace(&self, quad: &GaussLegendre) -> RteTrace {
        RteTrace {
            inflow: quad
                .nodes
                .iter()
                .map(|&v| if v > 0.0 { (self.left_inflow)(v) } else { (self.right_inflow)(v) })
                .collect(),
            theta1: self.theta1,
            theta2: self.theta2,
        }
    }
}

/// The decomposed slab problem.
pub struct RteProblem {
    pub eps: f64,
    pub grid: Grid1D,
    pub layout: PatchLayout<1>,
    pub boundary: RteBoundary,
    pub opts: FixedPointOpts,
    coupling: Coupling,
    slots: Vec<usize>,
}

impl RteProblem {
    pub fn new(eps: f64, grid: Grid1D, layout: PatchLayout<1>, boundary: RteBoundary, opts: FixedPointOpts) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("ε must be positive, got {eps}")));
        }
        opts.validate()?;
        if layout.cells() != grid.nx {
            return Err(Error::Layout("layout and grid disagree on cell count".into()));
        }
        let coupling = build_coupling(&grid, &layout, &boundary);
        let slots = assign_slots(&layout);
        Ok(Self {
            eps,
            grid,
            layout,
            boundary,
            opts,
            coupling,
            slots,
        })
    }

    pub fn quadrature(&self) -> &GaussLegendre {
        &self.grid.quadrature
    }

    pub fn interval(&self, m: usize) -> Interval {
        let p = self.layout.patch(m);
        Interval { lo: p.lo[0], hi: p.hi[0] }
    }

    pub fn domain(&self) -> Interval {
        Interval { lo: 0, hi: self.grid.nx }
    }

    pub fn field_from_flat(&self, interval: Interval, flat: &[f64]) -> Result<RteField> {
        RteField::from_flat(interval, self.grid.dx, self.grid.nv(), flat)
    }

    pub fn solve_global(&self) -> Result<RteField> {
        solve_local_rte(self.domain(), self.grid.dx, self.quadrature(), &self.boundary.trace(self.quadrature()), self.eps, &self.opts)
    }

    fn touches_physical(&self, m: usize) -> (bool, bool) {
        let p = self.layout.patch(m);
        (p.lo[0] == 0, p.hi[0] == self.grid.nx)
    }
}

/// Interior patches with identical patch and buffer geometry share a slot.
fn assign_slots(layout: &PatchLayout<1>) -> Vec<usize> {
    let n = layout.cells();
    let mut keys: Vec<Option<(usize, usize, usize)>> = Vec::new();
    let mut slots = Vec::with_capacity(layout.num_patches());
    for m in 0..layout.num_patches() {
        let p = layout.patch(m);
        let b = layout.buffered(m);
        let key = (p.lo[0] != 0 && p.hi[0] != n).then(|| (p.hi[0] - p.lo[0], p.lo[0] - b.lo[0], b.hi[0] - p.hi[0]));
        let slot = match key {
            Some(k) => match keys.iter().position(|e| *e == Some(k)) {
                Some(s) => s,
                None => {
                    keys.push(Some(k));
                    keys.len() - 1
                }
            },
            None => {
                keys.push(None);
                keys.len() - 1
            }
        };
        slots.push(slot);
    }
    slots
}

fn build_coupling(grid: &Grid1D, layout: &PatchLayout<1>, boundary: &RteBoundary) -> Coupling {
    let quad = &grid.quadrature;
    let nv = quad.len();
    let nx = grid.nx;
    let np = layout.num_patches();
    let pou = build_partition_of_unity(layout);
    let phys = boundary.trace(quad).to_flat();
    let mut c = Coupling {
        plans: Vec::with_capacity(np),
        trace_weights: Vec::with_capacity(np),
        field_weights: Vec::with_capacity(np),
        global_index: Vec::with_capacity(np),
        blend: Vec::with_capacity(np),
        global_weights: rte_field_weights(nx + 1, grid.dx, quad),
    };
    for m in 0..np {
        let p = layout.patch(m);
        let (lo, hi) = (p.lo[0], p.hi[0]);
        let nodes = hi - lo + 1;
        let src = layout.boundary_sources(m);
        let (left, right) = (src[0], src[1]);
        let intensity = |s: BoundarySource, node: usize, j: usize, k: usize| match s {
            BoundarySource::Physical => TraceSource::Fixed(phys[k]),
            BoundarySource::Neighbor(l) => TraceSource::Field {
                patch: l,
                index: (node - layout.patch(l).lo[0]) * nv + j,
            },
        };
        let temperature = |s: BoundarySource, node: usize, k: usize| match s {
            BoundarySource::Physical => TraceSource::Fixed(phys[k]),
            BoundarySource::Neighbor(l) => {
                let q = layout.patch(l);
                let ln = q.hi[0] - q.lo[0] + 1;
                TraceSource::Field {
                    patch: l,
                    index: ln * nv + node - q.lo[0],
                }
            }
        };
        let mut plan: Vec<TraceSource> = quad
            .nodes
            .iter()
            .enumerate()
            .map(|(j, &v)| if v > 0.0 { intensity(left, lo, j, j) } else { intensity(right, hi, j, j) })
            .collect();
        plan.push(temperature(left, lo, nv));
        plan.push(temperature(right, hi, nv + 1));
        c.plans.push(plan);
        c.trace_weights.push(rte_trace_weights(quad));
        c.field_weights.push(rte_field_weights(nodes, grid.dx, quad));
        let mut gi = Vec::with_capacity(nodes * (nv + 1));
        let mut bl = Vec::with_capacity(nodes * (nv + 1));
        for i in 0..nodes {
            for j in 0..nv {
                gi.push((lo + i) * nv + j);
                bl.push(pou.weights[m][i]);
            }
        }
        for i in 0..nodes {
            gi.push((nx + 1) * nv + lo + i);
            bl.push(pou.weights[m][i]);
        }
        c.global_index.push(gi);
        c.blend.push(bl);
    }
    c
}

impl Problem for RteProblem {
    fn kind(&self) -> ProblemKind {
        ProblemKind::Rte
    }

    fn describe(&self) -> ProblemDescription {
        ProblemDescription {
            kind: ProblemKind::Rte,
            eps: self.eps,
            grid: serde_json::to_value(&self.grid).expect("grid serializes"),
            layout: self.layout.spec().clone(),
            solver: serde_json::to_value(self.opts).expect("options serialize"),
        }
    }

    fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    fn solve_patch(&self, m: usize, trace: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let nodes = self.interval(m).cells() + 1;
        let nv = self.grid.nv();
        let warm_t = warm.map(|w| &w[nodes * nv..]);
        let (mut i, t, _) = solve_slab(nodes, self.grid.dx, self.quadrature(), trace, self.eps, &self.opts, warm_t)?;
        i.extend_from_slice(&t);
        Ok(i)
    }

    fn dictionary_slots(&self) -> Vec<usize> {
        self.slots.clone()
    }

    fn sample_entry(&self, m: usize, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let quad = self.quadrature();
        let nv = quad.len();
        let b = self.layout.buffered(m);
        let bint = Interval { lo: b.lo[0], hi: b.hi[0] };
        let (left_phys, right_phys) = self.touches_physical(m);
        let trace = if left_phys || right_phys {
            let phys = self.boundary.trace(quad).to_flat();
            let mut fixed = vec![None; nv + 2];
            for (j, &v) in quad.nodes.iter().enumerate() {
                if (v > 0.0 && left_phys) || (v < 0.0 && right_phys) {
                    fixed[j] = Some(phys[j]);
                }
            }
            if left_phys {
                fixed[nv] = Some(phys[nv]);
            }
            if right_phys {
                fixed[nv + 1] = Some(phys[nv + 1]);
            }
            sample_rte_boundary(cfg, &fixed, quad, rng)?
        } else {
            sample_rte_interior(cfg, quad, rng)
        };
        let (intensity, temperature, _) = solve_slab(bint.cells() + 1, self.grid.dx, quad, &trace, self.eps, &self.opts, None)?;
        let field = RteField {
            interval: bint,
            dx: self.grid.dx,
            nv,
            intensity,
            temperature,
        }
        .restrict(self.interval(m))?;
        Ok((field.trace(quad).to_flat(), field.to_flat()))
    }
}
