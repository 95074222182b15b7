//! Minimal network stack: ReLU MLPs with batched reverse mode, Adam, box projection, and
//! a minibatch trainer.
mod adam;
mod mlp;
mod projection;
mod train;

pub use adam::{AdamState, BETA1, BETA2, EPS};
pub use mlp::{param_count, Activation, Mlp, Workspace};
pub use projection::{project_in_place, project_input};
pub use train::{
    train, CellResult, HyperGrid, Objective, OutputAffine, TrainConfig, TrainOutcome, TrainSummary,
};
