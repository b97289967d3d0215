//! Trainable nonlinear transformations applied to windows before scoring.

mod checkpoint;
mod net;
mod objective;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use net::{pretrain_init, Architecture, TransformNet};
pub use objective::{loss_and_grad, PairLoss, Side};
pub use train::{train_alternating, TrainConfig, TrainHistory, TrainMode, TrainOutput};
