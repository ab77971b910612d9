//! Mosaic Flow pipeline for the 2-D Laplace equation.
//!
//! The crate trains a physics-informed subdomain solver (SDNet) on small
//! fixed-size domains and then solves large Dirichlet boundary-value problems
//! by an alternating-Schwarz-style inference loop (the Mosaic Flow predictor),
//! sequentially, batched, or distributed across worker ranks with halo
//! exchange. A built-in geometric-multigrid solver provides ground truth for
//! data generation and validation.
//!
//! Module map:
//! - [`grid`]: grids, subdomain tiling, perimeter/center-line index maps,
//!   processor-block decomposition
//! - [`oracle`]: multigrid Dirichlet solver plus error metrics
//! - [`boundary`]: Sobol-driven Gaussian-process boundary generation and the
//!   dataset file format
//! - [`autodiff`]: second-order forward jets and a reverse-mode tape
//! - [`sdnet`]: the subdomain solver network (embedding, split layer, MLP)
//! - [`fabric`]: in-process rank-addressed message passing with traffic
//!   counters
//! - [`train`]: physics-informed training (LAMB, LR schedule, data-parallel
//!   step)
//! - [`mfp`]: the Mosaic Flow predictor (sequential, batched, distributed)
//!   and the alpha-beta cost model

pub mod autodiff;
pub mod boundary;
pub mod fabric;
pub mod grid;
pub mod mfp;
pub mod oracle;
pub mod sdnet;
pub mod train;
pub(crate) mod util;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
