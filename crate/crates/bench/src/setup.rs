//! Problem instances and reference fields built from a configuration.

use manifold_dd::elliptic::{EllipticProblem, NewtonOptions};
use manifold_dd::geometry::{build_layout_1d, build_layout_2d};
use manifold_dd::rte::{RteBoundary, RteField, RteProblem};
use manifold_dd::{Problem, ProblemKind};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub enum Instance {
    Elliptic(EllipticProblem),
    Rte(RteProblem),
}

impl Instance {
    pub fn problem(&self) -> &dyn Problem {
        match self {
            Instance::Elliptic(p) => p,
            Instance::Rte(p) => p,
        }
    }

    /// Monolithic solve on this instance's grid, flattened like an
    /// assembled Schwarz field.
    pub fn solve_global(&self) -> Result<Vec<f64>, CliError> {
        Ok(match self {
            Instance::Elliptic(p) => p.solve_global()?.values,
            Instance::Rte(p) => p.solve_global()?.to_flat(),
        })
    }

    /// Flat patch index of a layout multi-index.
    pub fn patch_index(&self, idx: &[usize]) -> usize {
        match self {
            Instance::Elliptic(p) => p.layout.linear_index([idx[0], idx[1]]),
            Instance::Rte(p) => p.layout.linear_index([idx[0]]),
        }
    }
}

/// The decomposed problem for one `(ε, Δx_b)` pair on the run grid.
pub fn build_problem(cfg: &ExperimentConfig, eps: f64, buffer: f64) -> Result<Instance, CliError> {
    let ov = cfg.layout.overlap;
    Ok(match cfg.problem {
        ProblemKind::Elliptic => {
            let grid = cfg.grid_2d(1)?;
            let p = &cfg.layout.patches;
            let layout = build_layout_2d(&grid, p[0], p[1], ov, buffer)?;
            Instance::Elliptic(EllipticProblem::oscillatory(eps, grid, layout, NewtonOptions::default())?)
        }
        ProblemKind::Rte => {
            let grid = cfg.grid_1d(1)?;
            let layout = build_layout_1d(&grid, cfg.layout.patches[0], ov, buffer)?;
            Instance::Rte(RteProblem::new(eps, grid, layout, RteBoundary::sinusoidal(), cfg.rte_opts())?)
        }
    })
}

/// Single-patch instance on the reference mesh.
pub fn build_reference_problem(cfg: &ExperimentConfig, eps: f64) -> Result<Instance, CliError> {
    let r = cfg.reference_refinement;
    Ok(match cfg.problem {
        ProblemKind::Elliptic => {
            let grid = cfg.grid_2d(r)?;
            let layout = build_layout_2d(&grid, 1, 1, 0.0, 0.0)?;
            Instance::Elliptic(EllipticProblem::oscillatory(eps, grid, layout, NewtonOptions::default())?)
        }
        ProblemKind::Rte => {
            let grid = cfg.grid_1d(r)?;
            let layout = build_layout_1d(&grid, 1, 0.0, 0.0)?;
            Instance::Rte(RteProblem::new(eps, grid, layout, RteBoundary::sinusoidal(), cfg.rte_opts())?)
        }
    })
}

/// Restricts a flat reference-mesh field to the run mesh nodes.
pub fn coarsen(cfg: &ExperimentConfig, fine: &[f64]) -> Result<Vec<f64>, CliError> {
    let f = cfg.reference_refinement;
    let n = (cfg.grid.length / cfg.grid.spacing).round() as usize;
    let nf = n * f;
    match cfg.problem {
        ProblemKind::Elliptic => {
            if fine.len() != (nf + 1) * (nf + 1) {
                return Err(CliError::Config(format!(
                    "reference field has {} values, expected {}",
                    fine.len(),
                    (nf + 1) * (nf + 1)
                )));
            }
            let mut out = Vec::with_capacity((n + 1) * (n + 1));
            // node-major with x fastest, matching IndexBox ordering
            for j in 0..=n {
                for i in 0..=n {
                    out.push(fine[(j * f) * (nf + 1) + i * f]);
                }
            }
            Ok(out)
        }
        ProblemKind::Rte => {
            let grid = cfg.grid_1d(f)?;
            let nv = grid.nv();
            let field = RteField::from_flat(
                manifold_dd::geometry::Interval { lo: 0, hi: nf },
                grid.dx,
                nv,
                fine,
            )?;
            let coarse = RteField {
                interval: manifold_dd::geometry::Interval { lo: 0, hi: n },
                dx: cfg.grid.spacing,
                nv,
                intensity: (0..=n).flat_map(|i| (0..nv).map(move |j| (i, j))).map(|(i, j)| field.intensity_at(i * f, j)).collect(),
                temperature: (0..=n).map(|i| field.temperature[i * f]).collect(),
            };
            Ok(coarse.to_flat())
        }
    }
}
