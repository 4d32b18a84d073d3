//! Small feed-forward velocity network with hand-written reverse mode, Adam,
//! and the regression objectives used for training and one-step distillation.

mod adam;
mod mlp;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{Activation, Mlp};
pub use train::{
    distill_one_step, loss_and_grad, train_velocity, CurvePoint, FeatureMap, OneStepMap,
    TimeSampling, TimeWeight, TrainConfig, TrainedVelocity, DIVERGENCE_LIMIT,
};
