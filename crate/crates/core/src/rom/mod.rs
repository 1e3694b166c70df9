//! The explicit-Euler neural network ROM.

mod eenn;
pub mod mlp;
mod train;

pub use eenn::{
    eenn_step, lift_trajectory, one_step_error, relative_error, rollout, train_eenn,
    trajectory_relative_error, EennRom, ProjectedFom, ReducedModel,
};
pub use mlp::{DenseLayer, Gradients, MlpNetwork};
pub use train::{
    train_network, EpochLoss, ReducedPairs, TrainingConfig, TrainingReport, TrainingSet, TrainingStop,
};
