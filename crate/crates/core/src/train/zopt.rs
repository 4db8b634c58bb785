use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Micrograph, Region};
use crate::inpaint::{InpaintMethod, InpaintResult};
use crate::models::{moments, seed_size_for, ModelBundle, SeedTensor};
use crate::nn::Adam;
use crate::train::{content_loss_grad, Observer, SeedMode, ZOptCheckpoint, ZOptConfig};

/// Betas of the seed optimiser.
const SEED_BETAS: (f64, f64) = (0.9, 0.999);

/// Record of a seed optimisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZOptTrace {
    pub checkpoints: Vec<ZOptCheckpoint>,
    pub initial_mse: f64,
    pub best_mse: f64,
    pub best_iteration: usize,
    /// A non-finite loss ended the run early.
    pub diverged: bool,
    /// Cancelled before `iterations` updates.
    pub stopped: bool,
}

fn checked_moments(values: &[f32]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::DegenerateSeed);
    }
    let (mu, sigma) = moments(values);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSeed);
    }
    Ok((mu, sigma))
}

/// KL divergence of `N(mu, sigma^2)` from `N(0, 1)`, where `mu` and `sigma`
/// are the mean and (population) standard deviation of the seed entries.
pub fn kl_to_standard_normal(z: &SeedTensor) -> Result<f64> {
    let (mu, sigma) = checked_moments(&z.values)?;
    Ok(kl_closed_form(mu, sigma))
}

fn kl_closed_form(mu: f64, sigma: f64) -> f64 {
    (sigma * sigma + mu * mu - 1.0) / 2.0 - sigma.ln()
}

/// Gradient of [`kl_to_standard_normal`] w.r.t. every entry.
fn kl_grad(values: &[f32], mu: f64, sigma: f64) -> impl Iterator<Item = f64> + '_ {
    let n = values.len() as f64;
    let k = 1.0 - 1.0 / (sigma * sigma);
    values.iter().map(move |&v| mu / n + (v as f64 - mu) / n * k)
}

/// Shift and scale the seed to zero mean and unit standard deviation.
pub fn renormalize_seed(z: &SeedTensor) -> Result<SeedTensor> {
    let (mu, sigma) = checked_moments(&z.values)?;
    let mut out = z.clone();
    out.values.iter_mut().for_each(|v| *v = ((*v as f64 - mu) / sigma) as f32);
    Ok(out)
}

/// Optimise a fresh seed so the frozen generator's output matches the known
/// pixels around `region`. Returns the seed with the lowest boundary MSE.
pub fn optimize_seed(
    b: &ModelBundle,
    img: &Micrograph,
    region: &Region,
    cfg: &ZOptConfig,
    rng: &mut ChaCha8Rng,
    obs: &mut dyn Observer,
) -> Result<(SeedTensor, ZOptTrace)> {
    cfg.validate()?;
    b.check_image(img)?;
    region.validate(img.width(), img.height())?;
    let core = region.core();
    let (s_x, s_y) = seed_size_for(core.w, core.h)?;
    let win = region.window();
    let target = img.window_tensor::<f32>(win.x, win.y, win.w, win.h)?;
    let mask = region.annulus_mask();
    let gen = &b.generator;

    let mut z = SeedTensor::sample(b.arch.latent_depth, s_x, s_y, rng);
    let mut adam = Adam::<f32>::new(cfg.seed_lr, SEED_BETAS, &[z.len()]);
    let use_kl = cfg.mode == SeedMode::KlAnchor && cfg.kl_weight > 0.0;
    let mut best = (f64::INFINITY, 0, z.clone());
    let mut trace = ZOptTrace {
        checkpoints: Vec::new(),
        initial_mse: f64::NAN,
        best_mse: f64::INFINITY,
        best_iteration: 0,
        diverged: false,
        stopped: false,
    };

    for t in 0..=cfg.iterations {
        let tr = gen.forward_trace(&z.to_tensor())?;
        let want_grad = t < cfg.iterations;
        let (mse, g_out) = content_loss_grad(&tr.output, &target, &mask, want_grad)?;
        let mse = mse as f64;
        let (mu, sigma) = moments(&z.values);
        let kl = if sigma > 0.0 { kl_closed_form(mu, sigma) } else { f64::INFINITY };
        let loss = if use_kl { mse + cfg.kl_weight * kl } else { mse };
        if !loss.is_finite() {
            log::warn!("seed optimisation diverged at iteration {t}");
            trace.diverged = true;
            break;
        }
        if t == 0 {
            trace.initial_mse = mse;
        }
        if mse < best.0 {
            best = (mse, t, z.clone());
        }
        if t % cfg.record_every == 0 || t == cfg.iterations {
            let cp = ZOptCheckpoint { iteration: t, mse, kl, seed_mean: mu, seed_std: sigma, best_mse: best.0 };
            obs.checkpoint(&cp, &z);
            trace.checkpoints.push(cp);
        }
        let Some(g_out) = g_out else { break };
        if obs.should_stop() {
            trace.stopped = true;
            break;
        }
        let g = gen.backward(&tr, &g_out, None, true).expect("seed gradient requested");
        let mut grad: Vec<f32> = g.into_vec();
        if use_kl {
            for (gv, k) in grad.iter_mut().zip(kl_grad(&z.values, mu, sigma)) {
                *gv += (cfg.kl_weight * k) as f32;
            }
        }
        adam.update(vec![&mut z.values], vec![&grad]);
        if cfg.mode == SeedMode::Renormalize {
            z = renormalize_seed(&z)?;
        }
    }
    trace.best_mse = best.0;
    trace.best_iteration = best.1;
    Ok((best.2, trace))
}

/// Inpaint `region` with the generator output for seed `z`.
pub fn evaluate_zopt(b: &ModelBundle, z: &SeedTensor, img: &Micrograph, region: &Region) -> Result<InpaintResult> {
    b.check_image(img)?;
    region.validate(img.width(), img.height())?;
    let win = region.window();
    if z.output_size() != (win.w, win.h) {
        return Err(Error::Shape(format!(
            "seed {}x{} produces {:?}, window is {}x{}",
            z.s_x,
            z.s_y,
            z.output_size(),
            win.w,
            win.h
        )));
    }
    let out = b.generator.forward_seed(z)?;
    InpaintResult::from_window(img, region, &out, InpaintMethod::Zopt, Some(z.digest()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_onehot;
    use crate::models::{ArchConfig, Method};
    use crate::train::{NullObserver, TrainingConfig};
    use rand::{Rng, SeedableRng};

    fn bundle_and_image() -> (ModelBundle, Micrograph) {
        let n = 128;
        let labels: Vec<u8> = (0..n * n).map(|i| (((i % n) / 6 + (i / n) / 4) % 3) as u8).collect();
        let img = encode_onehot(&labels, n, n, 3).unwrap();
        let arch = ArchConfig { latent_depth: 4, gen_channels: [6, 4, 4], critic_channels: vec![2, 2, 2, 2], init_std: 0.3 };
        let b = ModelBundle::init(
            Method::Wgan,
            img.kind(),
            arch,
            TrainingConfig::default(),
            None,
            img.source_hash().into(),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        (b, img)
    }

    fn seed_from(values: Vec<f32>) -> SeedTensor {
        let n = values.len();
        SeedTensor::new(1, n, 1, values).unwrap()
    }

    #[test]
    fn kl_closed_form_values() {
        // population moments (0, 1) and (1, 1)
        assert!(kl_to_standard_normal(&seed_from(vec![-1.0, 1.0])).unwrap().abs() < 1e-12);
        assert!((kl_to_standard_normal(&seed_from(vec![0.0, 2.0])).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(kl_to_standard_normal(&seed_from(vec![3.0, 3.0])), Err(Error::DegenerateSeed)));
        assert!(kl_to_standard_normal(&seed_from(vec![3.0])).is_err());
    }

    #[test]
    fn kl_of_large_normal_seed_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let small = (0..100)
            .filter(|_| kl_to_standard_normal(&SeedTensor::sample(100, 14, 14, &mut rng)).unwrap() < 0.01)
            .count();
        assert_eq!(small, 100);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 3.0 - 0.5).collect();
        let f = |v: &[f64]| {
            let n = v.len() as f64;
            let mu = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
            kl_closed_form(mu, s)
        };
        let as32: Vec<f32> = vals.iter().map(|&v| v as f32).collect();
        let vals: Vec<f64> = as32.iter().map(|&v| v as f64).collect();
        let (mu, s) = moments(&as32);
        let analytic: Vec<f64> = kl_grad(&as32, mu, s).collect();
        for i in 0..vals.len() {
            let h = 1e-5;
            let mut p = vals.clone();
            p[i] += h;
            let mut m = vals.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-7, "entry {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn renormalize_restores_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = SeedTensor::sample(10, 12, 12, &mut rng);
        let r = renormalize_seed(&z).unwrap();
        let (m0, s0) = z.moments();
        let (m, s) = r.moments();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        // an already-standardised seed barely moves
        let rr = renormalize_seed(&r).unwrap();
        assert!(rr.values.iter().zip(&r.values).all(|(a, b)| (a - b).abs() < 1e-6));

        let shifted = SeedTensor { values: z.values.iter().map(|v| v + 5.0).collect(), ..z.clone() };
        let (m, _) = renormalize_seed(&shifted).unwrap().moments();
        assert!(m.abs() < 1e-6, "{m0} {s0}");

        // bimodal: moments are standard, shape is not
        let bi = seed_from((0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
        let (m, s) = renormalize_seed(&bi).unwrap().moments();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn optimisation_keeps_generator_frozen_and_best_monotone() {
        let (b, img) = bundle_and_image();
        let region = Region::rect(40, 40, 32, 32).unwrap();
        let before = b.generator_digest();
        let cfg = ZOptConfig { iterations: 30, record_every: 5, seed_lr: 0.05, ..Default::default() };
        let (z, trace) = optimize_seed(&b, &img, &region, &cfg, &mut ChaCha8Rng::seed_from_u64(3), &mut NullObserver).unwrap();
        assert_eq!(b.generator_digest(), before);
        assert_eq!(trace.checkpoints.len(), 7);
        assert!(trace.checkpoints.windows(2).all(|w| w[1].best_mse <= w[0].best_mse));
        assert!(trace.checkpoints.iter().all(|c| c.mse >= 0.0 && c.kl >= 0.0));
        assert!(trace.best_mse <= trace.initial_mse);
        assert_eq!((z.s_x, z.s_y), (10, 10));
        let r = evaluate_zopt(&b, &z, &img, &region).unwrap();
        assert!(r.paste_audit(&img));
        assert_eq!(r, evaluate_zopt(&b, &z, &img, &region).unwrap());
    }

    #[test]
    fn zero_kl_weight_is_unconstrained() {
        let (b, img) = bundle_and_image();
        let region = Region::rect(40, 40, 32, 32).unwrap();
        let run = |cfg: ZOptConfig| {
            optimize_seed(&b, &img, &region, &cfg, &mut ChaCha8Rng::seed_from_u64(9), &mut NullObserver).unwrap()
        };
        let base = ZOptConfig { iterations: 10, record_every: 1, ..Default::default() };
        let a = run(ZOptConfig { kl_weight: 0.0, ..base.clone() });
        let u = run(ZOptConfig { mode: SeedMode::Unconstrained, ..base });
        assert_eq!(a, u);
    }

    #[test]
    fn renormalize_mode_keeps_standard_moments() {
        let (b, img) = bundle_and_image();
        let region = Region::polygon(vec![[40, 40], [70, 44], [50, 66]]).unwrap();
        let cfg = ZOptConfig { iterations: 10, mode: SeedMode::Renormalize, ..Default::default() };
        let (z, trace) = optimize_seed(&b, &img, &region, &cfg, &mut ChaCha8Rng::seed_from_u64(1), &mut NullObserver).unwrap();
        if trace.best_iteration > 0 {
            let (m, s) = z.moments();
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
        assert!(evaluate_zopt(&b, &z, &img, &region).unwrap().paste_audit(&img));
    }

    #[test]
    fn wrong_seed_size_rejected() {
        let (b, img) = bundle_and_image();
        let region = Region::rect(40, 40, 32, 32).unwrap();
        let z = SeedTensor::sample(4, 12, 12, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(evaluate_zopt(&b, &z, &img, &region), Err(Error::Shape(_))));
    }
}
