//! Semilinear elliptic problem `-∇·(a ∇u) + f(u) = 0` on squares, discretized
//! by a node-centered finite-volume scheme with harmonic-mean face
//! coefficients and solved by damped Newton.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_partition_of_unity, BoundarySource, Grid2D, IndexBox, PatchLayout};
use crate::linalg::{inf_norm, BandMatrix};
use crate::problem::{Coupling, Problem, ProblemDescription, ProblemKind, TraceSource};
use crate::sampler::{sample_elliptic_boundary, EllipsoidSpec, EllipticInteriorSampler, SamplerConfig};

/// Diffusion coefficient `a(x, y)`.
pub trait Coefficient: Send + Sync {
    fn eval(&self, x: f64, y: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64 + Send + Sync> Coefficient for F {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// Two-scale oscillatory media with slow variation and period-`ε` fast terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Media {
    pub eps: f64,
}

impl Media {
    pub fn new(eps: f64) -> Self {
        Self { eps }
    }
}

impl Coefficient for Media {
    fn eval(&self, x: f64, y: f64) -> f64 {
        media_eval(self.eps, x, y)
    }
}

pub fn media_eval(eps: f64, x: f64, y: f64) -> f64 {
    let tp = 2.0 * PI;
    2.0 + (tp * x).sin() * (tp * y).cos()
        + (2.0 + 1.8 * (tp * x / eps).sin()) / (2.0 + 1.8 * (tp * y / eps).cos())
        + (2.0 + (tp * y / eps).sin()) / (2.0 + 1.8 * (tp * x / eps).cos())
}

/// Zeroth-order term `f(u)`.
pub trait Reaction: Send + Sync {
    fn value(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Cubic;

impl Reaction for Cubic {
    #[inline]
    fn value(&self, u: f64) -> f64 {
        u * u * u
    }

    #[inline]
    fn derivative(&self, u: f64) -> f64 {
        3.0 * u * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Stop when the ∞-norm of the flux-balance residual is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings tried before giving up on an iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Nodal values on a closed box of the global grid (axis 0 fastest,
/// boundary nodes included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticField {
    pub patch: IndexBox<2>,
    pub h: f64,
    pub values: Vec<f64>,
}

impl EllipticField {
    pub fn zeros(patch: IndexBox<2>, h: f64) -> Self {
        Self {
            patch,
            h,
            values: vec![0.0; patch.node_count()],
        }
    }

    #[inline]
    pub fn value(&self, node: &[usize; 2]) -> f64 {
        self.values[self.patch.local_index(node)]
    }

    pub fn restrict(&self, sub: &IndexBox<2>) -> Result<EllipticField> {
        if !self.patch.contains_box(sub) {
            return Err(Error::InvalidInput(format!(
                "box {sub:?} is not inside field box {:?}",
                self.patch
            )));
        }
        let values = (0..sub.node_count())
            .map(|k| self.value(&sub.node_at(k)))
            .collect();
        Ok(EllipticField {
            patch: *sub,
            h: self.h,
            values,
        })
    }

    pub fn boundary_trace(&self) -> EllipticTrace {
        EllipticTrace {
            patch: self.patch,
            h: self.h,
            values: self
                .patch
                .boundary_nodes()
                .iter()
                .map(|n| self.value(n))
                .collect(),
        }
    }
}

/// Dirichlet data on a box perimeter, counterclockwise from the lower-left
/// corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticTrace {
    pub patch: IndexBox<2>,
    pub h: f64,
    pub values: Vec<f64>,
}

impl EllipticTrace {
    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        node_coordinates(&self.patch, self.h)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.h * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

fn node_coordinates(b: &IndexBox<2>, h: f64) -> Vec<[f64; 2]> {
    b.boundary_nodes()
        .iter()
        .map(|n| [n[0] as f64 * h, n[1] as f64 * h])
        .collect()
}

/// Weight matrix of the discrete Gagliardo `H^{1/2}` norm on boundary nodes.
pub fn h12_weight_matrix(nodes: &[[f64; 2]], h: f64) -> Result<DMatrix<f64>> {
    let n = nodes.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = h;
        for j in 0..n {
            if i == j {
                continue;
            }
            let dx = nodes[i][0] - nodes[j][0];
            let dy = nodes[i][1] - nodes[j][1];
            let d2 = dx * dx + dy * dy;
            if d2 == 0.0 {
                return Err(Error::InvalidInput(format!("boundary nodes {i} and {j} coincide")));
            }
            let c = 2.0 * h * h / d2;
            w[(i, j)] = -c;
            diag += c;
        }
        w[(i, i)] = diag;
    }
    Ok(w)
}

pub fn h12_norm(trace: &EllipticTrace) -> Result<f64> {
    let w = h12_weight_matrix(&trace.coordinates(), trace.h)?;
    let phi = nalgebra::DVector::from_column_slice(&trace.values);
    Ok(phi.dot(&(&w * &phi)).max(0.0).sqrt())
}

/// `h · sqrt(Σ u²)` over all nodes.
pub fn l2_norm_2d(field: &EllipticField) -> f64 {
    field.h * field.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖ref − approx‖ / ‖ref‖` on the run grid. The reference grid must refine
/// the run grid by an integer factor; its nodes are subsampled.
pub fn relative_error(reference: &EllipticField, approx: &EllipticField) -> Result<f64> {
    let ratio = approx.h / reference.h;
    let f = ratio.round();
    if f < 1.0 || (ratio - f).abs() > 1e-9 * ratio {
        return Err(Error::InvalidInput(format!(
            "reference mesh {} does not refine run mesh {} by an integer factor",
            reference.h, approx.h
        )));
    }
    let f = f as usize;
    let b = approx.patch;
    let rb = reference.patch;
    if rb.lo != [b.lo[0] * f, b.lo[1] * f] || rb.hi != [b.hi[0] * f, b.hi[1] * f] {
        return Err(Error::InvalidInput("reference and run fields cover different regions".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..b.node_count() {
        let n = b.node_at(k);
        let r = reference.value(&[n[0] * f, n[1] * f]);
        let d = r - approx.values[k];
        num += d * d;
        den += r * r;
    }
    Ok((num / den).sqrt())
}

/// Values of a field on `Ω_l` at the boundary positions of patch `m` that
/// the layout assigns to `l`.
pub fn restrict_trace(
    field: &EllipticField,
    layout: &PatchLayout<2>,
    l: usize,
    m: usize,
) -> Result<Vec<(usize, f64)>> {
    if !layout.neighbors(m).contains(&l) {
        return Err(Error::Layout(format!("patch {l} is not a neighbor of {m}")));
    }
    layout
        .trace_map(m, l)
        .into_iter()
        .map(|(pos, node)| {
            if field.patch.contains(&node) {
                Ok((pos, field.value(&node)))
            } else {
                Err(Error::Layout(format!("node {node:?} missing from field of patch {l}")))
            }
        })
        .collect()
}

/// Solves the Dirichlet problem on box `bx` with `boundary` given in
/// perimeter order. `initial` is a full-box starting iterate; by default the
/// transfinite bilinear blend of the boundary data.
pub fn solve_dirichlet(
    coef: &dyn Coefficient,
    reaction: &dyn Reaction,
    source: Option<&dyn Fn(f64, f64) -> f64>,
    bx: IndexBox<2>,
    h: f64,
    boundary: &[f64],
    initial: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<(EllipticField, NewtonStats)> {
    let bnodes = bx.boundary_nodes();
    if boundary.len() != bnodes.len() {
        return Err(Error::InvalidInput(format!(
            "trace has {} values, box perimeter has {} nodes",
            boundary.len(),
            bnodes.len()
        )));
    }
    let nx = bx.hi[0] - bx.lo[0];
    let ny = bx.hi[1] - bx.lo[1];
    let sx = nx + 1;
    let mut u = match initial {
        Some(init) if init.len() == bx.node_count() => init.to_vec(),
        Some(_) => return Err(Error::InvalidInput("initial iterate has wrong size".into())),
        None => vec![0.0; bx.node_count()],
    };
    for (n, v) in bnodes.iter().zip(boundary) {
        u[bx.local_index(n)] = *v;
    }
    if initial.is_none() {
        coons_fill(&mut u, nx, ny);
    }
    if nx < 2 || ny < 2 {
        return Ok((
            EllipticField { patch: bx, h, values: u },
            NewtonStats { iterations: 0, residual: 0.0 },
        ));
    }

    let x = |i: usize| (bx.lo[0] + i) as f64 * h;
    let y = |j: usize| (bx.lo[1] + j) as f64 * h;
    let a: Vec<f64> = (0..bx.node_count())
        .map(|k| coef.eval(x(k % sx), y(k / sx)))
        .collect();
    let harm = |p: f64, q: f64| 2.0 * p * q / (p + q);
    let mut ax = vec![0.0; nx * (ny + 1)];
    for j in 0..=ny {
        for i in 0..nx {
            ax[i + nx * j] = harm(a[i + sx * j], a[i + 1 + sx * j]);
        }
    }
    let mut ay = vec![0.0; sx * ny];
    for j in 0..ny {
        for i in 0..=nx {
            ay[i + sx * j] = harm(a[i + sx * j], a[i + sx * (j + 1)]);
        }
    }
    let h2 = h * h;
    let g: Vec<f64> = match source {
        Some(src) => (0..bx.node_count()).map(|k| h2 * src(x(k % sx), y(k / sx))).collect(),
        None => Vec::new(),
    };

    let mi = nx - 1;
    let unknowns = mi * (ny - 1);
    let residual = |u: &[f64], r: &mut [f64]| {
        for j in 1..ny {
            for i in 1..nx {
                let c = i + sx * j;
                let uc = u[c];
                let mut s = ax[i - 1 + nx * j] * (uc - u[c - 1])
                    + ax[i + nx * j] * (uc - u[c + 1])
                    + ay[i + sx * (j - 1)] * (uc - u[c - sx])
                    + ay[i + sx * j] * (uc - u[c + sx])
                    + h2 * reaction.value(uc);
                if !g.is_empty() {
                    s -= g[c];
                }
                r[(i - 1) + mi * (j - 1)] = s;
            }
        }
    };

    let mut r = vec![0.0; unknowns];
    residual(&u, &mut r);
    let mut rn = inf_norm(&r);
    let mut trial = u.clone();
    let mut rt = vec![0.0; unknowns];
    for it in 0..opts.max_iter {
        if rn <= opts.tol {
            return Ok((
                EllipticField { patch: bx, h, values: u },
                NewtonStats { iterations: it, residual: rn },
            ));
        }
        if !rn.is_finite() {
            break;
        }
        let mut jac = BandMatrix::zeros(unknowns, mi);
        for j in 1..ny {
            for i in 1..nx {
                let c = i + sx * j;
                let k = (i - 1) + mi * (j - 1);
                let d = ax[i - 1 + nx * j]
                    + ax[i + nx * j]
                    + ay[i + sx * (j - 1)]
                    + ay[i + sx * j]
                    + h2 * reaction.derivative(u[c]);
                jac.add(k, k, d);
                if i > 1 {
                    jac.add(k, k - 1, -ax[i - 1 + nx * j]);
                }
                if j > 1 {
                    jac.add(k, k - mi, -ay[i + sx * (j - 1)]);
                }
            }
        }
        let chol = jac.factorize()?;
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        chol.solve_in_place(&mut delta);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            trial.copy_from_slice(&u);
            for j in 1..ny {
                for i in 1..nx {
                    trial[i + sx * j] += t * delta[(i - 1) + mi * (j - 1)];
                }
            }
            residual(&trial, &mut rt);
            let tn = inf_norm(&rt);
            if tn < rn {
                std::mem::swap(&mut u, &mut trial);
                std::mem::swap(&mut r, &mut rt);
                rn = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::SolverFailure {
                context: "elliptic Newton line search stalled".into(),
                iterations: it + 1,
                residual: rn,
            });
        }
    }
    if rn <= opts.tol {
        return Ok((
            EllipticField { patch: bx, h, values: u },
            NewtonStats {
                iterations: opts.max_iter,
                residual: rn,
            },
        ));
    }
    Err(Error::SolverFailure {
        context: "elliptic Newton did not converge".into(),
        iterations: opts.max_iter,
        residual: rn,
    })
}

/// Transfinite bilinear interpolation of the box boundary into the interior.
fn coons_fill(u: &mut [f64], nx: usize, ny: usize) {
    let sx = nx + 1;
    let (c00, c10, c01, c11) = (u[0], u[nx], u[sx * ny], u[nx + sx * ny]);
    for j in 1..ny {
        let t = j as f64 / ny as f64;
        for i in 1..nx {
            let s = i as f64 / nx as f64;
            let south = u[i];
            let north = u[i + sx * ny];
            let west = u[sx * j];
            let east = u[nx + sx * j];
            u[i + sx * j] = (1.0 - t) * south + t * north + (1.0 - s) * west + s * east
                - ((1.0 - s) * (1.0 - t) * c00 + s * (1.0 - t) * c10 + (1.0 - s) * t * c01 + s * t * c11);
        }
    }
}

/// Local solve with cubic reaction on `patch` for the given perimeter trace.
pub fn solve_local(
    coef: &dyn Coefficient,
    patch: IndexBox<2>,
    h: f64,
    trace: &EllipticTrace,
    opts: &NewtonOptions,
) -> Result<EllipticField> {
    if trace.patch != patch {
        return Err(Error::InvalidInput("trace belongs to a different patch".into()));
    }
    solve_dirichlet(coef, &Cubic, None, patch, h, &trace.values, None, opts).map(|(f, _)| f)
}

/// Monolithic solve on the whole square with boundary data `g(x, y)`.
pub fn solve_global(
    coef: &dyn Coefficient,
    grid: &Grid2D,
    boundary: &BoundaryData,
    opts: &NewtonOptions,
) -> Result<EllipticField> {
    let bx = IndexBox::new([0, 0], [grid.n, grid.n]);
    let values: Vec<f64> = bx
        .boundary_nodes()
        .iter()
        .map(|n| boundary.eval(grid.coord(n[0]), grid.coord(n[1])))
        .collect();
    solve_dirichlet(coef, &Cubic, None, bx, grid.h, &values, None, opts).map(|(f, _)| f)
}

/// Global Dirichlet data `φ(x, y)` on the boundary of the unit-length square.
#[derive(Clone)]
pub struct BoundaryData {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryData(..)")
    }
}

impl BoundaryData {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0)
    }

    /// `∓sin 2πx` on the bottom/top edges, `±sin 2πy` on the left/right
    /// edges of `[0, L]²`.
    pub fn sinusoidal(length: f64) -> Self {
        Self::new(move |x, y| {
            let tp = 2.0 * PI;
            if y == 0.0 {
                -(tp * x).sin()
            } else if y == length {
                (tp * x).sin()
            } else if x == 0.0 {
                (tp * y).sin()
            } else {
                -(tp * y).sin()
            }
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }
}

enum PatchSampler {
    Interior(EllipticInteriorSampler),
    Boundary(EllipsoidSpec),
}

/// The decomposed elliptic problem: media, grid, layout and global data.
pub struct EllipticProblem {
    pub coef: Arc<dyn Coefficient>,
    /// Scale label of the coefficient, recorded in metadata.
    pub eps: f64,
    pub grid: Grid2D,
    pub layout: PatchLayout<2>,
    pub boundary: BoundaryData,
    pub newton: NewtonOptions,
    coupling: Coupling,
    samplers: Vec<OnceLock<std::result::Result<PatchSampler, String>>>,
}

impl EllipticProblem {
    pub fn new(
        coef: Arc<dyn Coefficient>,
        eps: f64,
        grid: Grid2D,
        layout: PatchLayout<2>,
        boundary: BoundaryData,
        newton: NewtonOptions,
    ) -> Result<Self> {
        if layout.cells() != grid.n {
            return Err(Error::Layout("layout and grid disagree on cell count".into()));
        }
        let coupling = build_coupling(&grid, &layout, &boundary);
        let samplers = (0..layout.num_patches()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            coef,
            eps,
            grid,
            layout,
            boundary,
            newton,
            coupling,
            samplers,
        })
    }

    pub fn physical_value(&self, node: &[usize; 2]) -> f64 {
        self.boundary.eval(self.grid.coord(node[0]), self.grid.coord(node[1]))
    }

    /// Problem with the two-scale media at scale `eps` and sinusoidal data.
    pub fn oscillatory(eps: f64, grid: Grid2D, layout: PatchLayout<2>, newton: NewtonOptions) -> Result<Self> {
        let length = grid.length;
        Self::new(Arc::new(Media::new(eps)), eps, grid, layout, BoundaryData::sinusoidal(length), newton)
    }

    /// Wraps a patch-local flat field.
    pub fn patch_field(&self, m: usize, values: Vec<f64>) -> EllipticField {
        EllipticField {
            patch: self.layout.patch(m),
            h: self.grid.h,
            values,
        }
    }

    pub fn global_field(&self, values: Vec<f64>) -> EllipticField {
        EllipticField {
            patch: self.layout.domain(),
            h: self.grid.h,
            values,
        }
    }

    pub fn solve_global(&self) -> Result<EllipticField> {
        solve_global(self.coef.as_ref(), &self.grid, &self.boundary, &self.newton)
    }

    fn sampler(&self, m: usize) -> Result<&PatchSampler> {
        self.samplers[m]
            .get_or_init(|| {
                let bb = self.layout.buffered(m);
                let nodes = bb.boundary_nodes();
                let coords = node_coordinates(&bb, self.grid.h);
                let w = h12_weight_matrix(&coords, self.grid.h).map_err(|e| e.to_string())?;
                if self.layout.is_interior_patch(m) {
                    EllipticInteriorSampler::new(w)
                        .map(PatchSampler::Interior)
                        .map_err(|e| e.to_string())
                } else {
                    let fixed: Vec<Option<f64>> = nodes
                        .iter()
                        .map(|n| self.layout.is_physical_node(n).then(|| self.physical_value(n)))
                        .collect();
                    EllipsoidSpec::new(&w, &fixed)
                        .map(PatchSampler::Boundary)
                        .map_err(|e| e.to_string())
                }
            })
            .as_ref()
            .map_err(|e| Error::Sampler(e.clone()))
    }
}

fn build_coupling(grid: &Grid2D, layout: &PatchLayout<2>, boundary: &BoundaryData) -> Coupling {
    let np = layout.num_patches();
    let domain = layout.domain();
    let pou = build_partition_of_unity(layout);
    let h = grid.h;
    let mut c = Coupling {
        plans: Vec::with_capacity(np),
        trace_weights: Vec::with_capacity(np),
        field_weights: Vec::with_capacity(np),
        global_index: Vec::with_capacity(np),
        blend: pou.weights,
        global_weights: vec![h * h; domain.node_count()],
    };
    for m in 0..np {
        let p = layout.patch(m);
        let plan: Vec<TraceSource> = p
            .boundary_nodes()
            .iter()
            .zip(layout.boundary_sources(m))
            .map(|(n, s)| match *s {
                BoundarySource::Physical => TraceSource::Fixed(boundary.eval(grid.coord(n[0]), grid.coord(n[1]))),
                BoundarySource::Neighbor(l) => TraceSource::Field {
                    patch: l,
                    index: layout.patch(l).local_index(n),
                },
            })
            .collect();
        c.trace_weights.push(vec![h; plan.len()]);
        c.plans.push(plan);
        c.field_weights.push(vec![h * h; p.node_count()]);
        c.global_index
            .push((0..p.node_count()).map(|k| domain.local_index(&p.node_at(k))).collect());
    }
    c
}

impl Problem for EllipticProblem {
    fn kind(&self) -> ProblemKind {
        ProblemKind::Elliptic
    }

    fn describe(&self) -> ProblemDescription {
        ProblemDescription {
            kind: ProblemKind::Elliptic,
            eps: self.eps,
            grid: serde_json::to_value(&self.grid).expect("grid serializes"),
            layout: self.layout.spec().clone(),
            solver: serde_json::to_value(self.newton).expect("options serialize"),
        }
    }

    fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    fn solve_patch(&self, m: usize, trace: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let p = self.layout.patch(m);
        solve_dirichlet(self.coef.as_ref(), &Cubic, None, p, self.grid.h, trace, warm, &self.newton)
            .map(|(f, _)| f.values)
    }

    fn sample_entry(&self, m: usize, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let bb = self.layout.buffered(m);
        let phi = match self.sampler(m)? {
            PatchSampler::Interior(s) => s.sample(cfg, rng),
            PatchSampler::Boundary(spec) => sample_elliptic_boundary(cfg, spec, rng)?,
        };
        let (field, _) = solve_dirichlet(self.coef.as_ref(), &Cubic, None, bb, self.grid.h, &phi, None, &self.newton)?;
        let local = field.restrict(&self.layout.patch(m))?;
        let trace = local.boundary_trace().values;
        Ok((trace, local.values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_layout_2d;

    fn eighth_media() -> Media {
        Media::new(2f64.powi(-3))
    }

    #[test]
    fn media_at_origin() {
        let v = media_eval(0.37, 0.0, 0.0);
        assert!((v - (2.0 + 2.0 / 3.8 + 2.0 / 3.8)).abs() < 1e-14);
        assert!((v - 3.052631578947368).abs() < 1e-12);
    }

    #[test]
    fn media_is_positive_on_dense_grid() {
        let eps = 2f64.powi(-4);
        let n = 1024;
        let mut lo = f64::INFINITY;
        for j in 0..n {
            for i in 0..n {
                lo = lo.min(media_eval(eps, i as f64 / n as f64, j as f64 / n as f64));
            }
        }
        assert!(lo > 0.2, "min {lo}");
    }

    #[test]
    fn zero_trace_gives_zero_field() {
        let g = Grid2D::new(1.0, 1.0 / 32.0).unwrap();
        let bx = IndexBox::new([4, 4], [20, 28]);
        let trace = EllipticTrace {
            patch: bx,
            h: g.h,
            values: vec![0.0; bx.boundary_nodes().len()],
        };
        let u = solve_local(&eighth_media(), bx, g.h, &trace, &NewtonOptions::default()).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
        let (_, stats) = solve_dirichlet(&eighth_media(), &Cubic, None, bx, g.h, &trace.values, None, &NewtonOptions::default()).unwrap();
        assert_eq!(stats.residual, 0.0);
        assert!(stats.iterations <= 1);
    }

    #[test]
    fn constant_trace_obeys_maximum_principle() {
        let h = 1.0 / 32.0;
        let bx = IndexBox::new([0, 0], [32, 32]);
        let c = 2.5;
        let values = vec![c; bx.boundary_nodes().len()];
        let (u, stats) = solve_dirichlet(&eighth_media(), &Cubic, None, bx, h, &values, None, &NewtonOptions::default()).unwrap();
        assert!(stats.residual <= 1e-10);
        assert!(u.values.iter().all(|v| *v >= 0.0 && *v <= c + 1e-8));
        // strictly below the boundary value inside
        assert!(u.value(&[16, 16]) < c);
    }

    #[test]
    fn reflection_symmetry() {
        // coefficient and data symmetric under x -> 1 - x
        let coef = |x: f64, y: f64| 2.0 + (8.0 * PI * (x - 0.5)).cos() * (1.0 + 0.5 * (2.0 * PI * y).sin());
        let n = 32;
        let h = 1.0 / n as f64;
        let bx = IndexBox::new([0, 0], [n, n]);
        let values: Vec<f64> = bx
            .boundary_nodes()
            .iter()
            .map(|p| {
                let x = p[0] as f64 * h;
                let y = p[1] as f64 * h;
                1.0 + (PI * x).sin() + y * y
            })
            .collect();
        let (u, _) = solve_dirichlet(&coef, &Cubic, None, bx, h, &values, None, &NewtonOptions::default()).unwrap();
        for j in 0..=n {
            for i in 0..=n {
                let a = u.value(&[i, j]);
                let b = u.value(&[n - i, j]);
                assert!((a - b).abs() < 1e-9, "asymmetry at ({i},{j}): {a} vs {b}");
            }
        }
    }

    /// Manufactured solution u = sin(πx) sin(πy) for -Δu + u³ = g with a ≡ 1.
    fn manufactured_error(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let source = move |x: f64, y: f64| {
            let u = exact(x, y);
            2.0 * PI * PI * u + u * u * u
        };
        let bx = IndexBox::new([0, 0], [n, n]);
        let values = vec![0.0; bx.boundary_nodes().len()];
        let one = |_: f64, _: f64| 1.0;
        let (u, _) = solve_dirichlet(&one, &Cubic, Some(&source), bx, h, &values, None, &NewtonOptions::default()).unwrap();
        let err: f64 = (0..bx.node_count())
            .map(|k| {
                let p = bx.node_at(k);
                let e = u.values[k] - exact(p[0] as f64 * h, p[1] as f64 * h);
                e * e
            })
            .sum();
        h * err.sqrt()
    }

    #[test]
    fn second_order_on_manufactured_solution() {
        let e1 = manufactured_error(16);
        let e2 = manufactured_error(32);
        let e3 = manufactured_error(64);
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!((1.8..=2.2).contains(&r1), "rate {r1}");
        assert!((1.8..=2.2).contains(&r2), "rate {r2}");
    }

    #[test]
    fn global_solve_is_deterministic_and_refines() {
        let media = eighth_media();
        let opts = NewtonOptions::default();
        let bd = BoundaryData::sinusoidal(1.0);
        let g32 = Grid2D::new(1.0, 1.0 / 32.0).unwrap();
        let a = solve_global(&media, &g32, &bd, &opts).unwrap();
        let b = solve_global(&media, &g32, &bd, &opts).unwrap();
        assert_eq!(a.values, b.values);

        let g64 = Grid2D::new(1.0, 1.0 / 64.0).unwrap();
        let g128 = Grid2D::new(1.0, 1.0 / 128.0).unwrap();
        let f64_ = solve_global(&media, &g64, &bd, &opts).unwrap();
        let f128 = solve_global(&media, &g128, &bd, &opts).unwrap();
        let d1 = relative_error(&f128, &a).unwrap();
        let d2 = relative_error(&f128, &f64_).unwrap();
        assert!(d2 < d1, "{d2} !< {d1}");
        // zero data
        let z = solve_global(&media, &g32, &BoundaryData::zero(), &opts).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn h12_constant_and_zero() {
        let h = 0.125;
        let bx = IndexBox::new([0, 0], [4, 4]);
        let n = bx.boundary_nodes().len();
        let one = EllipticTrace { patch: bx, h, values: vec![1.0; n] };
        assert!((h12_norm(&one).unwrap() - (n as f64 * h).sqrt()).abs() < 1e-13);
        let zero = EllipticTrace { patch: bx, h, values: vec![0.0; n] };
        assert_eq!(h12_norm(&zero).unwrap(), 0.0);
    }

    #[test]
    fn h12_quadratic_form_matches_double_sum() {
        let h = 0.25;
        let bx = IndexBox::new([0, 0], [4, 4]);
        let nodes = node_coordinates(&bx, h);
        assert_eq!(nodes.len(), 16);
        let phi: Vec<f64> = (0..16).map(|i| ((i * 7919 % 23) as f64 / 11.0) - 1.0).collect();
        // explicit double sum
        let mut oracle = h * phi.iter().map(|v| v * v).sum::<f64>();
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    let d2 = (nodes[i][0] - nodes[j][0]).powi(2) + (nodes[i][1] - nodes[j][1]).powi(2);
                    oracle += h * h * (phi[i] - phi[j]).powi(2) / d2;
                }
            }
        }
        let w = h12_weight_matrix(&nodes, h).unwrap();
        assert_eq!(w, w.transpose());
        assert!(w.clone().cholesky().is_some());
        let p = nalgebra::DVector::from_vec(phi);
        let q = p.dot(&(&w * &p));
        assert!((q - oracle).abs() < 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn h12_rejects_duplicate_nodes() {
        assert!(h12_weight_matrix(&[[0.0, 0.0], [0.0, 0.0]], 0.1).is_err());
    }

    #[test]
    fn l2_norm_and_relative_error_basics() {
        let p = 8;
        let h = 1.0 / p as f64;
        let bx = IndexBox::new([0, 0], [p, p]);
        let one = EllipticField { patch: bx, h, values: vec![1.0; bx.node_count()] };
        assert!((l2_norm_2d(&one) - h * (p + 1) as f64).abs() < 1e-14);
        assert_eq!(relative_error(&one, &one).unwrap(), 0.0);
        let zero = EllipticField::zeros(bx, h);
        assert_eq!(relative_error(&one, &zero).unwrap(), 1.0);
        // subsampling a 2x refined reference
        let fine = EllipticField { patch: IndexBox::new([0, 0], [2 * p, 2 * p]), h: h / 2.0, values: vec![1.0; (2 * p + 1).pow(2)] };
        assert_eq!(relative_error(&fine, &one).unwrap(), 0.0);
        let odd = EllipticField { patch: bx, h: h / 1.5, values: vec![1.0; bx.node_count()] };
        assert!(relative_error(&odd, &one).is_err());
    }

    #[test]
    fn trace_restriction_is_column_slice() {
        let g = Grid2D::new(1.0, 1.0 / 64.0).unwrap();
        let layout = build_layout_2d(&g, 4, 4, 2.0 / 64.0, 0.0).unwrap();
        let l = layout.linear_index([1, 1]);
        let m = layout.linear_index([2, 1]);
        let domain = layout.domain();
        let glob: Vec<f64> = (0..domain.node_count())
            .map(|k| {
                let n = domain.node_at(k);
                (n[0] as f64 * 0.37).sin() + n[1] as f64
            })
            .collect();
        let gf = EllipticField { patch: domain, h: g.h, values: glob };
        let fl = gf.restrict(&layout.patch(l)).unwrap();
        let part = restrict_trace(&fl, &layout, l, m).unwrap();
        let west = layout.patch(m).lo[0];
        let nodes = layout.patch(m).boundary_nodes();
        assert!(!part.is_empty());
        for (pos, v) in part {
            assert_eq!(nodes[pos][0], west);
            assert_eq!(v, gf.value(&nodes[pos]));
        }
        // constant field gives a constant segment
        let c = EllipticField { patch: layout.patch(l), h: g.h, values: vec![4.25; layout.patch(l).node_count()] };
        assert!(restrict_trace(&c, &layout, l, m).unwrap().iter().all(|(_, v)| *v == 4.25));
        assert!(restrict_trace(&c, &layout, l, layout.linear_index([3, 3])).is_err());
    }
}
