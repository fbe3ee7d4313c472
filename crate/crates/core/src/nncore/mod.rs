//! Dense neural building blocks with hand-derived gradients.

pub(crate) mod batchnorm;
mod gradcheck;
mod layers;
mod matrix;
pub(crate) use matrix::gemm;
mod optim;

pub use batchnorm::{BatchNorm, BnCache, Mode};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{
    leaky_relu, leaky_relu_backward, softmax_cross_entropy, softmax_rows, unary_backward,
    unary_forward, UnaryGrads, DEFAULT_LEAKY_SLOPE,
};
pub use matrix::Matrix;
pub use optim::{momentum_step, ParamId, Parameter, ParameterStore, DEFAULT_LR, DEFAULT_MOMENTUM};
