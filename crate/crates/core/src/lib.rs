//! Overlapping Schwarz domain decomposition for nonlinear multiscale PDEs
//! with offline-learned local solution manifolds.
//!
//! Offline, every patch of an overlapping decomposition gets a dictionary of
//! `(boundary trace, local solution)` pairs computed from random boundary
//! data on a buffered patch. Online, the Schwarz iteration replaces each
//! local solve by tangent-plane interpolation among the nearest dictionary
//! entries.

pub mod anderson;
pub mod dictionary;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod problem;
pub mod quadrature;
pub mod rte;
pub mod sampler;
pub mod schwarz;

pub use error::{Error, Result};
pub use problem::{Coupling, Problem, ProblemKind, TraceSource};
