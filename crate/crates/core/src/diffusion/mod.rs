//! Gaussian diffusion: noise schedule, forward corruption, reverse posterior
//! and the denoiser training loop.

mod process;
mod schedule;
mod train;

use thiserror::Error;

pub use process::{posterior_mean, posterior_step, q_sample, recover_noise};
pub use schedule::{build_cosine_schedule, cosine_profile, NoiseSchedule, MAX_BETA};
pub use train::{lr_at_step, to_model_range, train, train_with_progress, TrainConfig, TrainReport};

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("a schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("cosine offset must be positive and finite, got {0}")]
    BadOffset(f64),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("image {index} has {got} values, expected {expected}")]
    BadImage { index: usize, expected: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error(transparent)]
    Net(#[from] crate::nn::NetError),
}
