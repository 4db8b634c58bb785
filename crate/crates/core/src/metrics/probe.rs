use std::fmt::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelBundle, SeedTensor, MIN_SEED};
use crate::nn::Tensor;

/// Column sums below this count as unaffected.
pub const PROBE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    /// Half-side of the resampled central seed square (side `2 * block`).
    pub block: usize,
    /// Output column relative to the centre line.
    pub offset: i64,
    /// `|output - baseline|` summed over channels and rows.
    pub summed_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeProfile {
    pub seed_size: usize,
    pub output_size: usize,
    pub rows: Vec<ProbeRow>,
    /// Width of the affected column span per block, 0 when nothing changed.
    pub widths: Vec<usize>,
}

impl ProbeProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,offset,summed_diff\n");
        for r in &self.rows {
            writeln!(s, "{},{},{:e}", r.block, r.offset, r.summed_diff).expect("write to string");
        }
        s
    }
}

/// Column-wise summed absolute difference of two `[1, c, h, w]` outputs.
pub fn column_profile(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let [_, c, h, w] = a.shape();
    (0..w)
        .map(|x| {
            (0..c)
                .flat_map(|ch| (0..h).map(move |y| (ch, y)))
                .map(|(ch, y)| (a.at(0, ch, y, x) as f64 - b.at(0, ch, y, x) as f64).abs())
                .sum()
        })
        .collect()
}

/// Span of entries above [`PROBE_THRESHOLD`], first to last inclusive.
pub fn affected_width(profile: &[f64]) -> usize {
    let first = profile.iter().position(|&v| v > PROBE_THRESHOLD);
    let last = profile.iter().rposition(|&v| v > PROBE_THRESHOLD);
    match (first, last) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    }
}

/// How far a change to the centre of an `s x s` seed propagates through the
/// generator. For each block `k` in `0..=max_block`, the central `2k x 2k`
/// square of a random baseline seed is resampled and the output difference
/// profiled along the x axis.
pub fn seed_propagation_probe(b: &ModelBundle, s: usize, max_block: usize, rng: &mut ChaCha8Rng) -> Result<ProbeProfile> {
    if s < MIN_SEED {
        return Err(Error::Shape(format!("seed extent {s} below minimum {MIN_SEED}")));
    }
    if 2 * max_block > s {
        return Err(Error::Shape(format!("block {0}x{0} exceeds seed {s}x{s}", 2 * max_block)));
    }
    let z = SeedTensor::sample(b.arch.latent_depth, s, s, rng);
    let base = b.generator.forward_seed(&z)?;
    let out = base.width();
    let mut rows = Vec::with_capacity((max_block + 1) * out);
    let mut widths = Vec::with_capacity(max_block + 1);
    for k in 0..=max_block {
        let changed = b.generator.forward_seed(&z.with_center_resampled(2 * k, 2 * k, rng)?)?;
        let profile = column_profile(&changed, &base);
        widths.push(affected_width(&profile));
        rows.extend(profile.into_iter().enumerate().map(|(x, d)| ProbeRow {
            block: k,
            offset: x as i64 - (out / 2) as i64,
            summed_diff: d,
        }));
    }
    Ok(ProbeProfile { seed_size: s, output_size: out, rows, widths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageKind;
    use crate::models::{ArchConfig, Method};
    use crate::train::TrainingConfig;
    use rand::SeedableRng;

    fn bundle() -> ModelBundle {
        let arch = ArchConfig { latent_depth: 4, gen_channels: [6, 4, 4], critic_channels: vec![2, 2, 2, 2], init_std: 0.2 };
        ModelBundle::init(
            Method::Wgan,
            ImageKind::Grayscale,
            arch,
            TrainingConfig::default(),
            None,
            String::new(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    }

    #[test]
    fn block_zero_is_flat_and_csv_complete() {
        let p = seed_propagation_probe(&bundle(), 12, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.output_size, 80);
        assert_eq!(p.rows.len(), 4 * 80);
        assert!(p.rows.iter().filter(|r| r.block == 0).all(|r| r.summed_diff == 0.0));
        assert_eq!(p.widths[0], 0);
        assert!(p.widths.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p.to_csv().lines().count(), 1 + 4 * 80);
    }

    #[test]
    fn oversized_block_rejected() {
        assert!(seed_propagation_probe(&bundle(), 12, 7, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn width_counts_span() {
        assert_eq!(affected_width(&[0.0, 1.0, 0.0, 2.0, 0.0]), 3);
        assert_eq!(affected_width(&[0.0; 4]), 0);
    }
}
