//! Losses, unrolled TD(1) training, optimizers and initialization.

mod config;
mod losses;
mod optim;
mod td1;
mod trainer;

pub use config::{GradNorm, LossKind, LrStep, Optimizer, TrainConfig};
pub use losses::{loss_delta_e, loss_delta_e_plus, loss_se, ContrastivePair, TANH_CLIP};
pub use optim::{fc_init_std, init_weights, init_weights_with, optimizer_step, OptimizerState, DEFAULT_CONV_INIT_STD};
pub use td1::{td1_forward, td1_loss_and_grad, Td1Output, Td1Settings};
pub use trainer::{batch_inputs, complete, train, BatchStats, EpochStats, Trainer};
