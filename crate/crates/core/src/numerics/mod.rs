//! Dense `f64` tensors with reverse-mode differentiation.

pub mod attention;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{multi_head_attention, AttentionParams, AttentionWeights};
pub use gradcheck::{grad_check, grad_check_inputs, GradCheckReport};
pub use params::{GradientMap, Param, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var, PROB_EPS};
pub use tensor::Tensor;
