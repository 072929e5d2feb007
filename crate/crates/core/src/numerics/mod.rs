//! Dense tensors, reverse-mode autodiff with second-order support, and optimizers.

mod ops;
mod optim;
mod tape;
mod tensor;

pub use ops::{batch_norm_eval, batch_norm_train, conv2d, one_hot, unfold_map, BatchStats};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
pub use tape::{higher_order_grad, Gradients, Tape, Var};
pub use tensor::{Tensor, PAD_INDEX};
