//! Minimal automatic differentiation for physics-informed training: exact
//! second derivatives with respect to spatial inputs (forward-mode jets) and
//! parameter gradients (reverse-mode tape), composable so the PDE residual
//! itself can be differentiated with respect to parameters.
//!
//! The jet arithmetic is generic over [`Real`]; instantiated at `f64` it is a
//! plain fast forward pass, instantiated at tape [`Var`]s the jet
//! coefficients become tape scalars and a single reverse sweep yields
//! `d loss / d theta` through the second-order forward computation.

pub mod jet;
pub mod real;
pub mod tape;

pub use jet::{laplacian, Jet2};
pub use real::Real;
pub use tape::{grad_params, Tape, Var};
