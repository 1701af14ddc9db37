//! Exact computations for multitype Galton-Watson processes: generating
//! functions, Perron data, tilted (associated) processes, Q-process kernels,
//! Yaglom-type limits, conditional path laws and total-progeny laws, with a
//! Monte Carlo oracle for cross-checking.

pub mod conditioning;
pub mod error;
pub mod fixtures;
pub mod lattice;
pub mod matrix;
pub mod model;
pub mod montecarlo;
pub mod progeny;
pub mod spectral;
pub mod tilt;

pub use error::{GwError, Result};
pub use lattice::{LatticeBox, LatticeDistribution, PathEvent};
pub use matrix::Matrix;
pub use model::{BranchingModel, ModelDiagnostics, OffspringLaw, State};
pub use spectral::SpectralData;

/// Lossless text form of a float (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
