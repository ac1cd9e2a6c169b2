//! Tensor type and the layer kernels of the network, each with a forward
//! and a reverse-mode gradient pass.

pub mod act;
pub mod conv;
pub mod fc;
pub mod lstm;
pub mod norm;
pub mod tape;
pub mod tensor;

pub use act::prelu;
pub use conv::{conv2d, conv2d_adjoint, conv2d_causal, conv2d_transpose_causal, ConvGeom};
pub use fc::fully_connected;
pub use lstm::{bilstm_over_axis, lstm_seq, BinStates, LstmParams};
pub use norm::{batch_norm, iln, BnMode, BnParams};
pub use tape::{backward, Eval, GradTape, Gradients, Graph, NodeId, ParamMap};
pub use tensor::{Axis, Real, Tensor};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Instant-layer-norm variance floor.
pub const ILN_EPS: f64 = 1e-8;
/// Weight of the old value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.99;
