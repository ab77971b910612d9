//! The Mosaic Flow predictor: Schwarz-style iterative inference over a
//! lattice of overlapping subdomains, with sequential, batched, and
//! distributed execution modes, plus the alpha-beta communication cost
//! model.

pub mod cost;
pub mod distributed;
pub mod predictor;
pub mod solver;

pub use cost::{cost_model, CostModelInput, CostModelOutput};
pub use distributed::{run_distributed, run_distributed_on, DistributedOutcome};
pub use predictor::{init_state, iterate_once, run, MfpConfig, Mode, PredictorState, RunReport};
pub use solver::{OracleSolver, SdnetSolver, SubSolver};
