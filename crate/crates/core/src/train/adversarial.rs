use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{Mask, Micrograph, PatchSet, Region, DEFAULT_PATCH};
use crate::inpaint::{InpaintMethod, InpaintResult};
use crate::models::{
    randomize_center, seed_size_for, ArchConfig, CriticNet, Method, ModelBundle, SeedTensor, MIN_SEED,
};
use crate::nn::{Adam, Real, Tensor};
use crate::train::{Lipschitz, Observer, SampleSource, TrainStep, TrainingConfig};

/// RNG stream used for the fixed seed, so drawing it leaves the training
/// stream untouched.
const FIXED_SEED_STREAM: u64 = 1;

/// Independent copy of `rng` on another stream.
pub(crate) fn fork(rng: &ChaCha8Rng, stream: u64) -> ChaCha8Rng {
    let mut r = rng.clone();
    r.set_stream(stream);
    r
}

/// Mean squared difference over masked pixels and all channels.
pub fn content_loss<F: Real>(gen: &Tensor<F>, gt: &Tensor<F>, mask: &Mask) -> Result<F> {
    Ok(content_loss_grad(gen, gt, mask, false)?.0)
}

/// [`content_loss`] and, when `want_grad`, its gradient w.r.t. `gen`.
pub fn content_loss_grad<F: Real>(
    gen: &Tensor<F>,
    gt: &Tensor<F>,
    mask: &Mask,
    want_grad: bool,
) -> Result<(F, Option<Tensor<F>>)> {
    let [n, c, h, w] = gen.shape();
    if gen.shape() != gt.shape() || n != 1 || mask.width != w || mask.height != h {
        return Err(Error::Shape(format!(
            "content loss over {:?} vs {:?} with mask {}x{}",
            gen.shape(),
            gt.shape(),
            mask.width,
            mask.height
        )));
    }
    let count = mask.count() * c;
    if count == 0 {
        return Err(Error::Shape("content loss mask is empty".into()));
    }
    let inv = F::lit(1.0 / count as f64);
    let mut loss = F::zero();
    let mut grad = want_grad.then(|| Tensor::zeros(gen.shape()));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                let d = gen.at(0, ch, y, x) - gt.at(0, ch, y, x);
                loss += d * d;
                if let Some(g) = grad.as_mut() {
                    *g.at_mut(0, ch, y, x) = F::lit(2.0) * d * inv;
                }
            }
        }
    }
    Ok((loss * inv, grad))
}

/// Batch of minimum-size standard normal seeds, `[n, depth, 10, 10]`.
fn random_seeds<R: Rng + ?Sized>(n: usize, depth: usize, rng: &mut R) -> Tensor<f32> {
    let data = (0..n * depth * MIN_SEED * MIN_SEED).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec([n, depth, MIN_SEED, MIN_SEED], data).expect("shape matches data")
}

/// Gradient penalty at random interpolates of `real` and `fake`, with one
/// mixing weight per sample. Accumulates the parameter gradient into `grads`.
pub fn gradient_penalty<R: Rng + ?Sized>(
    d: &CriticNet<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    weight: f64,
    grads: Option<&mut crate::models::CriticGrads<f32>>,
    rng: &mut R,
) -> Result<f32> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
    }
    let mut x_hat = real.clone();
    for n in 0..real.batch() {
        let eps: f32 = rng.random();
        for (x, f) in x_hat.sample_mut(n).iter_mut().zip(fake.sample(n)) {
            *x = eps * *x + (1.0 - eps) * f;
        }
    }
    d.gradient_penalty(&x_hat, weight, grads)
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

/// Fixed-seed content target of a G-opt run.
struct Anchor {
    seed: Tensor<f32>,
    target: Tensor<f32>,
    mask: Mask,
}

fn run(
    mut bundle: ModelBundle,
    img: &Micrograph,
    anchor: Option<Anchor>,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn Observer,
) -> Result<ModelBundle> {
    let cfg = bundle.config.clone();
    let patches = PatchSet::new(img, bundle.region.as_ref(), DEFAULT_PATCH, cfg.augmentation)?;
    let b = cfg.batch_size;
    let depth = bundle.arch.latent_depth;
    let inv = 1.0 / b as f32;
    let mut adam_d = Adam::<f32>::new(cfg.learning_rate, cfg.adam_betas, &bundle.critic.param_sizes());
    let mut adam_g = Adam::<f32>::new(cfg.learning_rate, cfg.adam_betas, &bundle.generator.param_sizes());
    let start = Instant::now();

    for i in 1..=cfg.i_max {
        if obs.should_stop() {
            log::info!("training stopped after {} iterations", i - 1);
            bundle.partial = true;
            break;
        }

        // critic
        let real: Tensor<f32> = patches.sample(b, rng)?;
        let fake = bundle.generator.forward(&random_seeds(b, depth, rng))?;
        obs.critic_scored(SampleSource::Real);
        obs.critic_scored(SampleSource::RandomSeed);
        let critic = &mut bundle.critic;
        let mut dg = critic.zero_grads();
        let tr_real = critic.forward_trace(&real)?;
        let tr_fake = critic.forward_trace(&fake)?;
        critic.backward(&tr_fake, &vec![inv; b], Some(&mut dg), false);
        critic.backward(&tr_real, &vec![-inv; b], Some(&mut dg), false);
        let mut l_d = mean(&tr_fake.scores) - mean(&tr_real.scores);
        if cfg.lipschitz == Lipschitz::GradientPenalty {
            obs.critic_scored(SampleSource::Interpolate);
            l_d += gradient_penalty(critic, &real, &fake, cfg.gp_weight, Some(&mut dg), rng)? as f64;
        }
        adam_d.update(critic.params_mut(), dg.as_slices());
        if let Lipschitz::WeightClip { clip } = cfg.lipschitz {
            critic.clip(clip);
        }

        // generator
        let (mut l_g, mut l_cl) = (None, None);
        if i % cfg.critic_per_g == 0 {
            let gen = &bundle.generator;
            let trace = gen.forward_trace(&random_seeds(b, depth, rng))?;
            obs.critic_scored(SampleSource::RandomSeed);
            let ctr = bundle.critic.forward_trace(&trace.output)?;
            let (gx, _) = bundle.critic.backward(&ctr, &vec![-inv; b], None, true);
            let mut gg = gen.zero_grads();
            gen.backward(&trace, &gx.expect("input gradient"), Some(&mut gg), false);
            let mut loss = -mean(&ctr.scores);
            if let Some(a) = &anchor {
                let tr = gen.forward_trace(&a.seed)?;
                let optimise = cfg.content_coeff > 0.0;
                let (cl, g) = content_loss_grad(&tr.output, &a.target, &a.mask, optimise)?;
                if let Some(mut g) = g {
                    let c = cfg.content_coeff as f32;
                    g.data_mut().iter_mut().for_each(|v| *v *= c);
                    gen.backward(&tr, &g, Some(&mut gg), false);
                }
                loss += cfg.content_coeff * cl as f64;
                l_cl = Some(cl as f64);
            }
            l_g = Some(loss);
            adam_g.update(bundle.generator.params_mut(), gg.as_slices());
        }

        let step = TrainStep { iteration: i, l_d, l_g, l_cl, wall_time: start.elapsed().as_secs_f64() };
        if !step.l_d.is_finite() || step.l_g.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Other(format!("training diverged at iteration {i}")));
        }
        obs.step(&step);
        bundle.iterations = i;
        if i % cfg.snapshot_every == 0 && i < cfg.i_max {
            obs.snapshot(&bundle);
        }
    }
    obs.snapshot(&bundle);
    Ok(bundle)
}

/// Generator optimisation: adversarial training plus a boundary content loss
/// on one fixed seed whose output covers the region's window.
pub fn train_gopt(
    img: &Micrograph,
    region: &Region,
    cfg: &TrainingConfig,
    arch: &ArchConfig,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn Observer,
) -> Result<ModelBundle> {
    cfg.validate()?;
    if !region.is_rect() {
        return Err(Error::InvalidRegion("generator optimisation needs a rectangular region".into()));
    }
    region.validate(img.width(), img.height())?;
    let core = region.core();
    let (s_x, s_y) = seed_size_for(core.w, core.h)?;
    let mut bundle = ModelBundle::init(
        Method::Gopt,
        img.kind(),
        arch.clone(),
        cfg.clone(),
        Some(region.clone()),
        img.source_hash().to_string(),
        rng,
    );
    let fixed = SeedTensor::sample(arch.latent_depth, s_x, s_y, &mut fork(rng, FIXED_SEED_STREAM));
    let win = region.window();
    let anchor = Anchor { seed: fixed.to_tensor(), target: img.window_tensor(win.x, win.y, win.w, win.h)?, mask: region.annulus_mask() };
    bundle.fixed_seed = Some(fixed);
    run(bundle, img, Some(anchor), rng, obs)
}

/// Plain adversarial training with no fixed seed. A known region is
/// excluded from the training patches.
pub fn train_wgan(
    img: &Micrograph,
    region: Option<&Region>,
    cfg: &TrainingConfig,
    arch: &ArchConfig,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn Observer,
) -> Result<ModelBundle> {
    cfg.validate()?;
    if let Some(r) = region {
        r.validate(img.width(), img.height())?;
    }
    let bundle = ModelBundle::init(
        Method::Wgan,
        img.kind(),
        arch.clone(),
        cfg.clone(),
        region.cloned(),
        img.source_hash().to_string(),
        rng,
    );
    run(bundle, img, None, rng, obs)
}

/// Inpaint the bundle's region from its fixed seed, optionally with the
/// changeable centre resampled.
pub fn evaluate_gopt(b: &ModelBundle, img: &Micrograph, resample: bool, rng: &mut ChaCha8Rng) -> Result<InpaintResult> {
    b.check_image(img)?;
    let fixed = b.fixed_seed.as_ref().ok_or_else(|| Error::Bundle("bundle has no fixed seed".into()))?;
    let region = b.region.as_ref().ok_or_else(|| Error::Bundle("bundle has no region".into()))?;
    if img.source_hash() != b.source_hash {
        log::warn!("image digest differs from the one the bundle was trained on");
    }
    let (seed, warning) = if resample {
        let r = randomize_center(fixed, rng)?;
        let warning = r.unchanged.then(|| "seed has no changeable centre; output unchanged".to_string());
        (r.seed, warning)
    } else {
        (fixed.clone(), None)
    };
    let out = b.generator.forward_seed(&seed)?;
    let mut result = InpaintResult::from_window(img, region, &out, InpaintMethod::Gopt, Some(seed.digest()))?;
    result.warning = warning;
    Ok(result)
}
