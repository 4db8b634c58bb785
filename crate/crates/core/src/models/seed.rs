use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Smallest seed extent the generator accepts; it maps to a 64 px output.
pub const MIN_SEED: usize = 10;

/// Output extent of the generator along one axis for seed extent `s`.
pub const fn output_extent(s: usize) -> usize {
    8 * s - 16
}

/// Seed extents for an occluded rectangle of `d_x` by `d_y` pixels.
///
/// The generator window for the returned seed is `d + 32` along each axis,
/// which covers the region plus a 16 px annulus on every side.
pub fn seed_size_for(d_x: usize, d_y: usize) -> Result<(usize, usize)> {
    for d in [d_x, d_y] {
        if d == 0 || d % 8 != 0 {
            return Err(Error::InvalidRegion(format!(
                "region extent {d} is not a positive multiple of 8"
            )));
        }
    }
    Ok((d_x / 8 + 6, d_y / 8 + 6))
}

/// Seed extent whose output is exactly `window` pixels along one axis.
pub fn seed_extent_for_window(window: usize) -> Result<usize> {
    if (window + 16) % 8 != 0 || window < output_extent(MIN_SEED) {
        return Err(Error::InvalidRegion(format!(
            "window extent {window} is not reachable by the generator (8s - 16, s >= {MIN_SEED})"
        )));
    }
    Ok((window + 16) / 8)
}

/// Side of the central seed block that may be resampled for stochastic
/// variation: `2 (s - 10)`.
pub fn changeable_center_size(s: usize) -> Result<usize> {
    if s < MIN_SEED {
        return Err(Error::Shape(format!("seed extent {s} below minimum {MIN_SEED}")));
    }
    Ok(2 * (s - MIN_SEED))
}

/// Latent input of shape `depth x s_y x s_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTensor {
    pub depth: usize,
    pub s_x: usize,
    pub s_y: usize,
    pub values: Vec<f32>,
}

impl SeedTensor {
    pub fn new(depth: usize, s_x: usize, s_y: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != depth * s_x * s_y {
            return Err(Error::Shape(format!(
                "seed needs {} values, got {}",
                depth * s_x * s_y,
                values.len()
            )));
        }
        Ok(Self { depth, s_x, s_y, values })
    }

    /// I.i.d. standard normal seed.
    pub fn sample<R: Rng + ?Sized>(depth: usize, s_x: usize, s_y: usize, rng: &mut R) -> Self {
        let values = (0..depth * s_x * s_y).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Self { depth, s_x, s_y, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn output_size(&self) -> (usize, usize) {
        (output_extent(self.s_x), output_extent(self.s_y))
    }

    #[inline]
    pub fn index(&self, d: usize, y: usize, x: usize) -> usize {
        (d * self.s_y + y) * self.s_x + x
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let data = self.values.iter().map(|&v| F::lit(v as f64)).collect();
        Tensor::from_vec([1, self.depth, self.s_y, self.s_x], data).expect("seed shape is consistent")
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>) -> Result<Self> {
        let [n, depth, s_y, s_x] = t.shape();
        if n != 1 {
            return Err(Error::Shape(format!("seed tensor must have batch 1, got {n}")));
        }
        let values = t.data().iter().map(|v| v.as_f64() as f32).collect();
        Self::new(depth, s_x, s_y, values)
    }

    /// Resample the centred `block_x x block_y` square of every latent
    /// channel; entries outside it are left bit-identical.
    pub fn with_center_resampled<R: Rng + ?Sized>(&self, block_x: usize, block_y: usize, rng: &mut R) -> Result<Self> {
        if block_x > self.s_x || block_y > self.s_y {
            return Err(Error::Shape(format!(
                "block {block_x}x{block_y} exceeds seed {}x{}",
                self.s_x, self.s_y
            )));
        }
        let x0 = (self.s_x - block_x) / 2;
        let y0 = (self.s_y - block_y) / 2;
        let mut out = self.clone();
        for d in 0..self.depth {
            for y in y0..y0 + block_y {
                for x in x0..x0 + block_x {
                    let i = out.index(d, y, x);
                    out.values[i] = rng.sample(StandardNormal);
                }
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 of the little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.depth as u64).to_le_bytes());
        h.update((self.s_x as u64).to_le_bytes());
        h.update((self.s_y as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Population mean and standard deviation over all entries.
    pub fn moments(&self) -> (f64, f64) {
        moments(&self.values)
    }
}

pub(crate) fn moments(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outcome of [`randomize_center`].
#[derive(Clone, Debug, PartialEq)]
pub struct Randomized {
    pub seed: SeedTensor,
    /// Set when the seed is too small for any central block to change.
    pub unchanged: bool,
}

/// Replace the changeable central block (side `2 (s - 10)` per axis) with
/// fresh standard normal values.
pub fn randomize_center<R: Rng + ?Sized>(z: &SeedTensor, rng: &mut R) -> Result<Randomized> {
    let bx = changeable_center_size(z.s_x)?;
    let by = changeable_center_size(z.s_y)?;
    if bx == 0 || by == 0 {
        log::warn!("seed {}x{} has no changeable centre; returning it unchanged", z.s_x, z.s_y);
        return Ok(Randomized { seed: z.clone(), unchanged: true });
    }
    Ok(Randomized { seed: z.with_center_resampled(bx, by, rng)?, unchanged: false })
}
