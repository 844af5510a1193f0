//! Numeric kernels: log-space reductions and the forward/backward rules of
//! every differentiable layer the model uses. All pure functions on `f64`.

mod affine;
mod layer_norm;
mod logspace;
mod lstm;
mod matrix;

pub(crate) use affine::affine_backward_acc;
pub use affine::{affine_backward, affine_forward};
pub use layer_norm::{layer_norm, layer_norm_backward, layer_norm_cached, LayerNormCache, LAYER_NORM_EPS};
pub(crate) use layer_norm::{standardize, standardize_backward};
pub use logspace::{log_add, log_softmax, log_softmax_backward, logsumexp, LogValue, LOG_ZERO};
pub(crate) use logspace::{log_softmax_backward_into, log_softmax_in_place};
pub use lstm::{lstm_step, lstm_step_backward, lstm_step_cached, LstmCache, LstmParams, LstmState, LstmStepGrads};
pub use matrix::{axpy, dot, RealMatrix};
