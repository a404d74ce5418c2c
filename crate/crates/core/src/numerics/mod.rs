//! Dense tensor kernel: layer forward/backward passes, a gradient tape,
//! optimizers and a finite-difference checker.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32`
//! and runs gradient checks in `f64`.

mod conv;
mod gradcheck;
mod ops;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use conv::{
    conv2d, conv2d_backward, conv2d_transpose, conv2d_transpose_backward, ConvGeometry, Padding,
};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use ops::{
    concat_last, dense, dense_backward, dropout, max_pool2, max_pool2_backward, mse_loss,
    mse_loss_grad, relu, relu_backward, split_last,
};
pub use optim::{adam_step, sgd_step, AdamHyper, AdamState, OptimizerKind};
pub use scalar::Scalar;
pub use tape::{GradTape, Gradients, ParamId, Var};
pub use tensor::Tensor;
