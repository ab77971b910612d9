//! Training/test boundary-condition generation and the dataset file format.
//!
//! Boundary curves are drawn from 1-D Gaussian processes whose
//! squared-exponential kernel hyperparameters are sampled with a Sobol
//! sequence; each curve is paired with the multigrid solution of the Laplace
//! problem it induces on a training-size subdomain.

pub mod dataset;
pub mod gp;
pub mod sobol;

pub use dataset::{generate_dataset, read_dataset, write_dataset, DatasetRecord, SobolBox};
pub use gp::{sample_gp_curve, GpKernelParams};
pub use sobol::sobol;
