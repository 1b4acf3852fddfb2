//! Neural-network layers lowered onto the protocol, and plaintext references.

pub mod eval;
pub mod init;
pub mod lower;
pub mod model;
pub mod relu;

pub use eval::{apply_layer_float, plaintext_eval, EvalMode};
pub use init::random_weights;
pub use lower::{apply_layer, lower_model, public_weights, LoweredModel, ModelWeights, Roles};
pub use model::{build_network, build_network_with, fold_batchnorm, LayerKind, LayerSpec, ModelSpec, Network, WeightRole, WeightSpec};
pub use relu::{eval_poly, poly_relu_fit, ReluFit};
