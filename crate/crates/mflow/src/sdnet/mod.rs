//! The subdomain solver network (SDNet): a boundary convolution stack, a
//! split first layer that broadcasts the boundary embedding across query
//! points, and a GELU MLP head.

pub mod forward;
pub mod model;
pub mod scalar;

pub use forward::{
    backward_data, backward_pde, first_layer_concat, first_layer_split, forward_stack,
    forward_values, laplacian_stack, BoundaryEmbedding, ForwardCache, JetCache, OpMetrics,
};
pub use model::{load_model, save_model, Conv1d, Linear, SdnetConfig, SdnetModel, SdnetParams};
pub use scalar::forward_point_generic;
