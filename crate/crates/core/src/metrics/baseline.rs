use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Micrograph, Region};
use crate::inpaint::{InpaintMethod, InpaintResult};
use crate::models::{seed_size_for, ModelBundle, SeedTensor};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Zeros,
    UniformNoise,
    /// Generator output for an unoptimised standard normal seed.
    RandomSeed,
}

/// Reference fills of `region` for judging inpaint quality. Segmented images
/// take the argmax of the fill, so zeros become phase 0 and uniform noise a
/// uniformly random phase.
pub fn baseline_fill(
    original: &Micrograph,
    region: &Region,
    kind: BaselineKind,
    bundle: Option<&ModelBundle>,
    rng: &mut ChaCha8Rng,
) -> Result<InpaintResult> {
    region.validate(original.width(), original.height())?;
    let win = region.window();
    let c = original.channels();
    let (fill, method, digest) = match kind {
        BaselineKind::Zeros => (Tensor::<f32>::zeros([1, c, win.h, win.w]), InpaintMethod::Zeros, None),
        BaselineKind::UniformNoise => {
            let data = (0..c * win.h * win.w).map(|_| rng.random::<f32>()).collect();
            (Tensor::from_vec([1, c, win.h, win.w], data)?, InpaintMethod::UniformNoise, None)
        }
        BaselineKind::RandomSeed => {
            let b = bundle.ok_or_else(|| Error::Config("random-seed fill needs a trained bundle".into()))?;
            b.check_image(original)?;
            let core = region.core();
            let (s_x, s_y) = seed_size_for(core.w, core.h)?;
            let z = SeedTensor::sample(b.arch.latent_depth, s_x, s_y, rng);
            (b.generator.forward_seed(&z)?, InpaintMethod::RandomSeed, Some(z.digest()))
        }
    };
    InpaintResult::from_window(original, region, &fill, method, digest)
}
