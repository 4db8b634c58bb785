//! Adversarial training loops and post-hoc seed optimisation.

mod adversarial;
mod config;
mod observer;
mod zopt;

pub use adversarial::{content_loss, content_loss_grad, evaluate_gopt, gradient_penalty, train_gopt, train_wgan};
pub use config::{read_config, Lipschitz, SeedMode, TrainingConfig, ZOptConfig};
pub use observer::{
    CancelToken, JsonLinesObserver, NullObserver, Observer, SampleSource, TrainStep, ZOptCheckpoint,
};
pub use zopt::{evaluate_zopt, kl_to_standard_normal, optimize_seed, renormalize_seed, ZOptTrace};

