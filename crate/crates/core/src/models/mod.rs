//! Generator and critic networks, seed geometry and bundle persistence.

mod bundle;
mod critic;
mod generator;
mod seed;

use serde::{Deserialize, Serialize};

pub use bundle::{load_bundle, save_bundle, Method, ModelBundle, BUNDLE_VERSION};
pub use critic::{CriticGrads, CriticNet, CriticTrace};
pub use generator::{upsample_target, GenTrace, GeneratorGrads, GeneratorNet, OutputActivation};
pub use seed::{
    changeable_center_size, output_extent, randomize_center, seed_extent_for_window, seed_size_for, Randomized,
    SeedTensor, MIN_SEED,
};

pub(crate) use seed::moments;

/// Layer widths and initialisation shared by both training methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub latent_depth: usize,
    /// Output channels of the two transpose convolutions and the middle convolution.
    pub gen_channels: [usize; 3],
    /// Hidden widths of the critic; a final single-channel layer is appended.
    pub critic_channels: Vec<usize>,
    /// Standard deviation of the normal weight initialisation (biases start at 0).
    pub init_std: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_depth: 100,
            gen_channels: [512, 256, 128],
            critic_channels: vec![64, 128, 256, 512],
            init_std: 0.02,
        }
    }
}

impl ArchConfig {
    /// Same topology with every hidden width divided by `factor`.
    pub fn narrowed(factor: usize) -> Self {
        let d = Self::default();
        let f = factor.max(1);
        Self {
            latent_depth: d.latent_depth,
            gen_channels: d.gen_channels.map(|c| (c / f).max(1)),
            critic_channels: d.critic_channels.iter().map(|c| (c / f).max(1)).collect(),
            init_std: d.init_std,
        }
    }
}
