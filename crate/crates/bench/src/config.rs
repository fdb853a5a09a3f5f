//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use manifold_dd::geometry::{cells_for, Grid1D, Grid2D};
use manifold_dd::rte::FixedPointOpts;
use manifold_dd::sampler::SamplerConfig;
use manifold_dd::schwarz::default_tol;
use manifold_dd::ProblemKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Side of the square (elliptic) or slab length (RTE).
    pub length: f64,
    /// `h` or `dx`.
    pub spacing: f64,
    /// Velocity nodes, RTE only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nv: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// `[M1, M2]` for the elliptic problem, `[M]` for the slab.
    pub patches: Vec<usize>,
    pub overlap: f64,
    /// Buffer widths `Δx_b`; every command runs once per entry.
    pub buffer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub radius: f64,
    pub exponent: u32,
    /// Dictionary size `N`.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineSection {
    pub k: Vec<usize>,
    /// Defaults to 1e-5 (elliptic) or 1e-3 (RTE); shared by the classical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    500
}

fn default_refinement() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub grid: GridConfig,
    pub eps: Vec<f64>,
    pub layout: LayoutConfig,
    pub sampler: SamplerSection,
    pub online: OnlineSection,
    /// The reference mesh is the run mesh refined by this factor.
    #[serde(default = "default_refinement")]
    pub reference_refinement: usize,
    /// Patch analysed by the SVD and projection benchmarks; defaults to the
    /// patch at the middle of the layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_patch: Option<Vec<usize>>,
    /// Slab fixed-point options.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rte_solver: Option<FixedPointOpts>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tol(&self) -> f64 {
        self.online.tol.unwrap_or_else(|| default_tol(self.problem))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            radius: self.sampler.radius,
            exponent: self.sampler.exponent,
            seed: self.sampler.seed,
        }
    }

    /// Fixed-point options for slab solves: depth-20 Anderson, 2000 iterations.
    pub fn rte_opts(&self) -> FixedPointOpts {
        self.rte_solver.unwrap_or(FixedPointOpts {
            anderson_depth: 20,
            max_iter: 2000,
            ..FixedPointOpts::default()
        })
    }

    pub fn grid_2d(&self, refinement: usize) -> Result<Grid2D, CliError> {
        Ok(Grid2D::new(self.grid.length, self.grid.spacing / refinement as f64)?)
    }

    pub fn grid_1d(&self, refinement: usize) -> Result<Grid1D, CliError> {
        let nv = self.grid.nv.ok_or_else(|| CliError::Config("grid.nv is required for the rte problem".into()))?;
        Ok(Grid1D::new(self.grid.length, self.grid.spacing / refinement as f64, nv)?)
    }

    /// Multi-index of the analysed patch.
    pub fn analysis_index(&self) -> Vec<usize> {
        self.analysis_patch
            .clone()
            .unwrap_or_else(|| self.layout.patches.iter().map(|m| m / 2).collect())
    }

    /// Rejects every setting that would fail later, before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let dims = match self.problem {
            ProblemKind::Elliptic => 2,
            ProblemKind::Rte => 1,
        };
        if self.layout.patches.len() != dims || self.layout.patches.iter().any(|&m| m == 0) {
            return bad(format!("layout.patches needs {dims} positive entries for the {} problem", self.problem));
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad("eps must be a non-empty list of positive numbers".into());
        }
        if self.layout.buffer.is_empty() {
            return bad("layout.buffer must list at least one width".into());
        }
        if self.online.k.is_empty() {
            return bad("online.k must list at least one value".into());
        }
        for &k in &self.online.k {
            if k < 2 || k > self.sampler.samples {
                return bad(format!("k = {k} must lie in 2..={} (the dictionary size)", self.sampler.samples));
            }
        }
        if !(self.tol() > 0.0) || self.online.max_iter == 0 {
            return bad("online.tol must be positive and online.max_iter nonzero".into());
        }
        if self.reference_refinement == 0 {
            return bad("reference_refinement must be a positive integer".into());
        }
        self.sampler_config().validate()?;
        match self.problem {
            ProblemKind::Elliptic => {
                if self.grid.nv.is_some() {
                    return bad("grid.nv applies to the rte problem only".into());
                }
                self.grid_2d(1)?;
                self.grid_2d(self.reference_refinement)?;
            }
            ProblemKind::Rte => {
                let g = self.grid_1d(1)?;
                if g.nv() % 2 != 0 {
                    return bad("grid.nv must be even".into());
                }
                self.grid_1d(self.reference_refinement)?;
                self.rte_opts().validate()?;
            }
        }
        let s = self.grid.spacing;
        cells_for(self.layout.overlap, s, "overlap width")?;
        for &b in &self.layout.buffer {
            cells_for(b, s, "buffer width")?;
        }
        // layouts also check that patches fit the grid
        for &b in &self.layout.buffer {
            crate::setup::build_problem(self, self.eps[0], b)?;
        }
        let idx = self.analysis_index();
        if idx.len() != dims || idx.iter().zip(&self.layout.patches).any(|(i, m)| i >= m) {
            return bad(format!("analysis_patch {idx:?} is outside the layout"));
        }
        Ok(())
    }
}
