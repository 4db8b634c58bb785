//! Synthetic segmented textures with prescribed volume fractions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{encode_onehot, Micrograph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    /// Target fraction per phase; must sum to 1.
    pub fractions: Vec<f64>,
    /// Smoothing length of the underlying random fields, in pixels.
    pub blob_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { size: 256, fractions: vec![0.3, 0.3, 0.4], blob_sigma: 4.0 }
    }
}

/// Periodic separable Gaussian blur of a `n x n` field.
fn blur(field: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let wrap = |i: i64| i.rem_euclid(n as i64) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = (-r..=r).map(|k| kernel[(k + r) as usize] * field[y * n + wrap(x as i64 + k)]).sum::<f64>() / norm;
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = (-r..=r).map(|k| kernel[(k + r) as usize] * tmp[wrap(y as i64 + k) * n + x]).sum::<f64>() / norm;
        }
    }
    out
}

/// Blob texture: phase `k` takes the lowest-valued still-unassigned pixels of
/// its own smoothed random field, so fractions are met exactly (up to
/// rounding) and every phase forms rounded blobs.
pub fn synth_texture<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Micrograph> {
    let n = cfg.size;
    let k = cfg.fractions.len();
    if !(2..=255).contains(&k) {
        return Err(Error::Config("synthetic texture needs between 2 and 255 phases".into()));
    }
    if cfg.fractions.iter().any(|f| !(*f >= 0.0)) || (cfg.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Config("phase fractions must be non-negative and sum to 1".into()));
    }
    if n < 8 || !(cfg.blob_sigma > 0.0) {
        return Err(Error::Config("size must be at least 8 and blob_sigma positive".into()));
    }
    let total = n * n;
    let mut labels = vec![u8::MAX; total];
    let mut assigned = 0usize;
    let mut cum = 0.0;
    for (phase, f) in cfg.fractions.iter().enumerate().take(k - 1) {
        cum += f;
        let target = ((cum * total as f64).round() as usize).min(total) - assigned;
        let noise: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
        let field = blur(&noise, n, cfg.blob_sigma);
        let mut free: Vec<usize> = (0..total).filter(|&i| labels[i] == u8::MAX).collect();
        free.sort_by(|&a, &b| field[a].total_cmp(&field[b]));
        for &i in free.iter().take(target) {
            labels[i] = phase as u8;
        }
        assigned += target;
    }
    labels.iter_mut().filter(|l| **l == u8::MAX).for_each(|l| *l = (k - 1) as u8);
    encode_onehot(&labels, n, n, k)
}
