//! Problem-independent view of a decomposed PDE: flat per-patch traces and
//! fields, how each trace entry is refreshed from neighbors, and how local
//! fields blend into a global one.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Elliptic,
    Rte,
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemKind::Elliptic => write!(f, "elliptic"),
            ProblemKind::Rte => write!(f, "rte"),
        }
    }
}

/// Origin of one entry of a patch boundary trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceSource {
    /// Prescribed physical boundary data, pinned at every iteration.
    Fixed(f64),
    /// Entry `index` of the local field on `patch`.
    Field { patch: usize, index: usize },
}

/// Flattened exchange and assembly plan for one decomposition.
#[derive(Debug, Clone)]
pub struct Coupling {
    /// Per patch, one source per trace entry.
    pub plans: Vec<Vec<TraceSource>>,
    /// Quadrature weights of the discrete L² trace metric.
    pub trace_weights: Vec<Vec<f64>>,
    /// Quadrature weights of the discrete L² field norm on each patch.
    pub field_weights: Vec<Vec<f64>>,
    /// Global index of every local field entry.
    pub global_index: Vec<Vec<usize>>,
    /// Partition-of-unity weight of every local field entry.
    pub blend: Vec<Vec<f64>>,
    pub global_weights: Vec<f64>,
}

impl Coupling {
    pub fn num_patches(&self) -> usize {
        self.plans.len()
    }

    pub fn trace_len(&self, m: usize) -> usize {
        self.plans[m].len()
    }

    pub fn field_len(&self, m: usize) -> usize {
        self.global_index[m].len()
    }

    /// True when some trace entry is read from a neighbor.
    pub fn has_interfaces(&self) -> bool {
        self.plans
            .iter()
            .flatten()
            .any(|s| matches!(s, TraceSource::Field { .. }))
    }

    /// Initial guess: prescribed data on the physical boundary, zero elsewhere.
    pub fn initial_trace(&self, m: usize) -> Vec<f64> {
        self.plans[m]
            .iter()
            .map(|s| match s {
                TraceSource::Fixed(v) => *v,
                TraceSource::Field { .. } => 0.0,
            })
            .collect()
    }

    /// New trace for patch `m` read off the current local fields.
    pub fn gather(&self, m: usize, fields: &[Vec<f64>]) -> Vec<f64> {
        self.plans[m]
            .iter()
            .map(|s| match *s {
                TraceSource::Fixed(v) => v,
                TraceSource::Field { patch, index } => fields[patch][index],
            })
            .collect()
    }

    /// `u = Σ_m χ_m u_m` on the global grid.
    pub fn assemble(&self, fields: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.global_weights.len()];
        for (m, f) in fields.iter().enumerate() {
            for ((v, &g), &w) in f.iter().zip(&self.global_index[m]).zip(&self.blend[m]) {
                out[g] += w * v;
            }
        }
        out
    }

    /// Local field of patch `m` cut out of a global field.
    pub fn localize(&self, m: usize, global: &[f64]) -> Vec<f64> {
        self.global_index[m].iter().map(|&g| global[g]).collect()
    }
}

/// A decomposed problem that can run the true local solver on each patch
/// and draw offline dictionary samples on the buffered patches.
pub trait Problem: Sync {
    fn kind(&self) -> ProblemKind;

    fn describe(&self) -> ProblemDescription;

    fn coupling(&self) -> &Coupling;

    /// Local PDE solve on the (unbuffered) patch `m`.
    fn solve_patch(&self, m: usize, trace: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>>;

    /// Dictionary slot used by each patch. Patches sharing a slot share one
    /// dictionary.
    fn dictionary_slots(&self) -> Vec<usize> {
        (0..self.coupling().num_patches()).collect()
    }

    /// Draws one random boundary condition on the buffered patch `m`, solves
    /// there, and returns the `(trace, field)` pair confined to patch `m`.
    fn sample_entry(
        &self,
        m: usize,
        cfg: &SamplerConfig,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Discretization metadata recorded alongside dictionaries and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescription {
    pub kind: ProblemKind,
    pub eps: f64,
    pub grid: serde_json::Value,
    pub layout: crate::geometry::LayoutSpec,
    pub solver: serde_json::Value,
}
