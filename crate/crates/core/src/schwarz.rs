//! Online stage: Jacobi Schwarz iteration whose local solves are replaced by
//! tangent-plane interpolation among the nearest dictionary entries, and the
//! classical iteration that calls the true local solver.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionarySet};
use crate::error::{Error, Result};
use crate::linalg::{weighted_distance_sq, weighted_norm};
use crate::problem::{Problem, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineOpts {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Singular values below `ls_truncation · σ_max` are dropped.
    pub ls_truncation: f64,
}

impl OnlineOpts {
    pub fn for_kind(kind: ProblemKind, k: usize) -> Self {
        Self {
            k,
            tol: default_tol(kind),
            max_iter: 500,
            ls_truncation: 1e-10,
        }
    }

    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.k < 2 || self.k > samples {
            return Err(Error::InvalidInput(format!("k = {} must lie in 2..={samples}", self.k)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.ls_truncation >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid online options {self:?}")));
        }
        Ok(())
    }
}

pub fn default_tol(kind: ProblemKind) -> f64 {
    match kind {
        ProblemKind::Elliptic => 1e-5,
        ProblemKind::Rte => 1e-3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalOpts {
    pub tol: f64,
    pub max_iter: usize,
}

impl ClassicalOpts {
    pub fn for_kind(kind: ProblemKind) -> Self {
        Self {
            tol: default_tol(kind),
            max_iter: 500,
        }
    }
}

/// The `k` entries nearest to `query` in the weighted trace metric, as
/// `(index, distance)`; ties go to the lower index.
pub fn knn(query: &[f64], dict: &Dictionary, weights: &[f64], k: usize) -> Vec<(usize, f64)> {
    let k = k.min(dict.len());
    // bounded insertion keeps the k best without sorting all N
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..dict.len() {
        let d = weighted_distance_sq(query, dict.trace(i), weights);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, bi)| bd < d || (bd == d && bi < i));
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    best.into_iter().map(|(d, i)| (i, d.sqrt())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub field: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Weighted norm of the unexplained part of the query.
    pub residual: f64,
    pub rank: usize,
}

impl Interpolation {
    /// All tangent directions vanished; the result is the nearest entry.
    pub fn degenerate(&self) -> bool {
        self.rank == 0
    }
}

/// Factored least-squares problem for one neighbor set: fits `query − φ_{i₁}`
/// by the tangent directions `φ_{i_q} − φ_{i₁}` in the weighted trace metric.
#[derive(Debug, Clone)]
pub struct TangentFit {
    neighbors: Vec<usize>,
    sqrt_w: Vec<f64>,
    /// Scaled tangent directions, one column each.
    directions: DMatrix<f64>,
    /// Truncated pseudo-inverse of `directions`.
    pinv: DMatrix<f64>,
    rank: usize,
}

impl TangentFit {
    pub fn new(dict: &Dictionary, neighbors: &[usize], weights: &[f64], truncation: f64) -> Self {
        let base = dict.trace(neighbors[0]);
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let n = base.len();
        let cols = neighbors.len() - 1;
        let directions = DMatrix::from_fn(n, cols, |i, q| (dict.trace(neighbors[q + 1])[i] - base[i]) * sqrt_w[i]);
        let mut pinv = DMatrix::zeros(cols, n);
        let mut rank = 0;
        if cols > 0 {
            // thin QR first so the SVD runs on a cols × cols factor
            let qr = directions.clone().qr();
            let q = qr.q();
            let svd = qr.r().svd(true, true);
            let u = svd.u.as_ref().expect("requested U");
            let vt = svd.v_t.as_ref().expect("requested Vᵀ");
            let smax = svd.singular_values.max();
            for (j, &s) in svd.singular_values.iter().enumerate() {
                if s > 0.0 && s > truncation * smax {
                    rank += 1;
                    let left = &q * u.column(j);
                    pinv += vt.row(j).transpose() * left.transpose() / s;
                }
            }
        }
        Self {
            neighbors: neighbors.to_vec(),
            sqrt_w,
            directions,
            pinv,
            rank,
        }
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn apply(&self, query: &[f64], dict: &Dictionary) -> Interpolation {
        let base = dict.trace(self.neighbors[0]);
        let b = DVector::from_iterator(query.len(), (0..query.len()).map(|i| (query[i] - base[i]) * self.sqrt_w[i]));
        let c = &self.pinv * &b;
        let residual = (&b - &self.directions * &c).norm();
        let coefficients: Vec<f64> = c.iter().copied().collect();
        // u = (1 − Σc) ψ_{i₁} + Σ c_q ψ_{i_q}
        let psi1 = dict.field(self.neighbors[0]);
        let lead = 1.0 - coefficients.iter().sum::<f64>();
        let mut field: Vec<f64> = psi1.iter().map(|p| lead * p).collect();
        for (q, &cq) in coefficients.iter().enumerate() {
            if cq != 0.0 {
                for (f, p) in field.iter_mut().zip(dict.field(self.neighbors[q + 1])) {
                    *f += cq * p;
                }
            }
        }
        Interpolation {
            field,
            coefficients,
            residual,
            rank: self.rank,
        }
    }
}

/// Tangent-plane interpolation: `u = ψ_{i₁} + Σ_q c_q (ψ_{i_q} − ψ_{i₁})`
/// with `c` the truncated least-squares fit of the query trace.
pub fn tangent_interpolate(
    query: &[f64],
    dict: &Dictionary,
    neighbors: &[usize],
    weights: &[f64],
    truncation: f64,
) -> Interpolation {
    TangentFit::new(dict, neighbors, weights, truncation).apply(query, dict)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzState {
    pub iteration: usize,
    pub traces: Vec<Vec<f64>>,
    pub fields: Vec<Vec<f64>>,
    pub history: Vec<f64>,
}

impl SchwarzState {
    /// Prescribed data on the physical boundary, zero on interfaces.
    pub fn initial(problem: &dyn Problem) -> Self {
        let c = problem.coupling();
        Self {
            iteration: 0,
            traces: (0..c.num_patches()).map(|m| c.initial_trace(m)).collect(),
            fields: (0..c.num_patches()).map(|m| vec![0.0; c.field_len(m)]).collect(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub knn: f64,
    pub least_squares: f64,
    pub local_solve: f64,
    pub assembly: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Online,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: Method,
    pub kind: ProblemKind,
    pub k: Option<usize>,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub update_norms: Vec<f64>,
    /// Interpolations whose tangent directions were all truncated.
    pub degenerate_fits: usize,
    /// Seconds.
    pub timings: Timings,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub global: Vec<f64>,
    pub state: SchwarzState,
    pub report: Report,
}

struct PatchEval {
    field: Vec<f64>,
    knn: Duration,
    ls: Duration,
    solve: Duration,
    degenerate: bool,
}

fn surrogate(
    problem: &dyn Problem,
    dicts: &DictionarySet,
    m: usize,
    trace: &[f64],
    opts: &OnlineOpts,
    cache: &mut Option<TangentFit>,
) -> PatchEval {
    let dict = dicts.for_patch(m);
    let w = &problem.coupling().trace_weights[m];
    let t0 = Instant::now();
    let nn: Vec<usize> = knn(trace, dict, w, opts.k).into_iter().map(|(i, _)| i).collect();
    let t1 = Instant::now();
    // the neighbor set settles as the iteration converges; reuse its factorization
    if cache.as_ref().map_or(true, |f| f.neighbors() != nn.as_slice()) {
        *cache = Some(TangentFit::new(dict, &nn, w, opts.ls_truncation));
    }
    let fit = cache.as_ref().expect("fit cached").apply(trace, dict);
    let t2 = Instant::now();
    PatchEval {
        degenerate: fit.degenerate(),
        field: fit.field,
        knn: t1 - t0,
        ls: t2 - t1,
        solve: Duration::ZERO,
    }
}

fn trace_change(problem: &dyn Problem, old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    let w = &problem.coupling().trace_weights;
    old.iter()
        .zip(new)
        .zip(w)
        .map(|((a, b), w)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            weighted_norm(&d, w)
        })
        .sum()
}

fn iterate<F>(problem: &dyn Problem, tol: f64, max_iter: usize, mut eval: F) -> Result<(SchwarzState, usize, Timings, bool)>
where
    F: FnMut(&SchwarzState) -> Result<Vec<PatchEval>>,
{
    let coupling = problem.coupling();
    let mut state = SchwarzState::initial(problem);
    let mut timings = Timings::default();
    let mut degenerate = 0;
    let mut converged = false;
    while state.iteration < max_iter {
        let evals = eval(&state)?;
        for e in &evals {
            timings.knn += e.knn.as_secs_f64();
            timings.least_squares += e.ls.as_secs_f64();
            timings.local_solve += e.solve.as_secs_f64();
            degenerate += e.degenerate as usize;
        }
        state.fields = evals.into_iter().map(|e| e.field).collect();
        let next: Vec<Vec<f64>> = (0..coupling.num_patches()).map(|m| coupling.gather(m, &state.fields)).collect();
        let change = trace_change(problem, &state.traces, &next);
        state.traces = next;
        state.iteration += 1;
        state.history.push(change);
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok((state, degenerate, timings, converged))
}

/// Reduced Schwarz iteration with dictionary surrogates.
pub fn run_online(problem: &dyn Problem, dicts: &DictionarySet, opts: &OnlineOpts) -> Result<Outcome> {
    let np = problem.coupling().num_patches();
    if dicts.num_patches() != np {
        return Err(Error::InvalidInput(format!(
            "dictionary set covers {} patches, layout has {np}",
            dicts.num_patches()
        )));
    }
    if dicts.meta.problem.kind != problem.kind() {
        return Err(Error::InvalidInput("dictionary was built for a different problem".into()));
    }
    for m in 0..np {
        let d = dicts.for_patch(m);
        if d.trace_len != problem.coupling().trace_len(m) || d.field_len != problem.coupling().field_len(m) {
            return Err(Error::InvalidInput(format!("dictionary shape mismatch on patch {m}")));
        }
        opts.validate(d.len())?;
    }
    let start = Instant::now();
    let mut fits: Vec<Option<TangentFit>> = vec![None; np];
    let (state, degenerate, mut timings, converged) = iterate(problem, opts.tol, opts.max_iter, |s| {
        Ok(fits
            .par_iter_mut()
            .enumerate()
            .map(|(m, cache)| surrogate(problem, dicts, m, &s.traces[m], opts, cache))
            .collect())
    })?;
    let t = Instant::now();
    let global = problem.coupling().assemble(&state.fields);
    timings.assembly = t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();
    if !converged {
        log::warn!("online iteration stopped after {} iterations without meeting tol {}", state.iteration, opts.tol);
    }
    let report = Report {
        method: Method::Online,
        kind: problem.kind(),
        k: Some(opts.k),
        tol: opts.tol,
        iterations: state.iteration,
        converged,
        update_norms: state.history.clone(),
        degenerate_fits: degenerate,
        timings,
    };
    Ok(Outcome { global, state, report })
}

/// Classical Schwarz iteration with the true local solver on each patch,
/// warm-started from the previous local field.
pub fn run_classical(problem: &dyn Problem, opts: &ClassicalOpts) -> Result<Outcome> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidInput(format!("invalid classical options {opts:?}")));
    }
    let np = problem.coupling().num_patches();
    let start = Instant::now();
    let (state, _, mut timings, converged) = iterate(problem, opts.tol, opts.max_iter, |s| {
        (0..np)
            .into_par_iter()
            .map(|m| {
                let t0 = Instant::now();
                let warm = (s.iteration > 0).then(|| s.fields[m].as_slice());
                let field = problem.solve_patch(m, &s.traces[m], warm)?;
                Ok(PatchEval {
                    field,
                    knn: Duration::ZERO,
                    ls: Duration::ZERO,
                    solve: t0.elapsed(),
                    degenerate: false,
                })
            })
            .collect()
    })?;
    let t = Instant::now();
    let global = problem.coupling().assemble(&state.fields);
    timings.assembly = t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();
    let report = Report {
        method: Method::Classical,
        kind: problem.kind(),
        k: None,
        tol: opts.tol,
        iterations: state.iteration,
        converged,
        update_norms: state.history.clone(),
        degenerate_fits: 0,
        timings,
    };
    Ok(Outcome { global, state, report })
}

/// Relative weighted L² distance `‖a − b‖ / ‖a‖`.
pub fn relative_difference(reference: &[f64], approx: &[f64], weights: &[f64]) -> f64 {
    let d: Vec<f64> = reference.iter().zip(approx).map(|(a, b)| a - b).collect();
    weighted_norm(&d, weights) / weighted_norm(reference, weights)
}
