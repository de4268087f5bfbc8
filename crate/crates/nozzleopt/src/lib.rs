//! Topology optimization for low-resolution, high-deposition-rate additive
//! manufacturing.
//!
//! The toolkit generates stiffness-optimized structures whose member widths
//! conform to the size of a deposition nozzle. It combines:
//!
//! * a three-field (eroded / intermediate / dilated) robust projection scheme
//!   that imposes minimum solid and void sizes,
//! * local annular void constraints aggregated into a single differentiable
//!   maximum-member-size constraint,
//! * two nozzle-conforming recipes: uniform-width members (inner and outer
//!   radii pinned to the bead width), and skeleton dilation (a thin
//!   size-constrained skeleton grown by a calibrated dilation distance),
//! * structured-grid linear FEA with SIMP interpolation and adjoint
//!   sensitivities (compliance, output displacement, von Mises stress),
//! * an MMA optimizer and continuation-driven iteration loop,
//! * morphological printability and member-size measurement oracles.
//!
//! The `bench` module bundles the standard test problems (2D/3D cantilever,
//! L-beam with stress constraint, force inverter); the `nozzleopt` binary
//! drives them from the command line.

pub mod bench;
pub mod config;
pub mod export;
pub mod fem;
pub mod field;
pub mod lengthscale;
pub mod maxsize;
pub mod mma;
pub mod printability;
pub mod problems;
pub(crate) mod util;

/// Toolkit-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or parameters (bad thresholds, radii, keys, ...).
    #[error("config error: {0}")]
    Config(String),
    /// Array/grid shape mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),
    /// Operation requires state (e.g. a cached forward pass) that is missing
    /// or stale.
    #[error("state error: {0}")]
    State(String),
    /// Non-finite or otherwise corrupt numeric data.
    #[error("data error: {0}")]
    Data(String),
    /// Linear solver failure (singular system, no convergence).
    #[error("solver error: {0}")]
    Solver(String),
    /// Requested feature is out of scope for this build.
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
