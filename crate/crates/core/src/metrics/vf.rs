use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode_argmax, Augmentation, ImageKind, Micrograph, PatchSet, Region};
use crate::metrics::ks_two_sample;
use crate::models::{seed_size_for, ModelBundle, SeedTensor};
use crate::nn::Real;
use crate::train::evaluate_gopt;

/// Per-phase fractions of a label image.
pub fn label_fractions(labels: &[u8], n_phases: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_phases];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    counts.iter().map(|&c| c as f64 / labels.len() as f64).collect()
}

/// Phase volume fractions of a segmented micrograph.
pub fn volume_fractions(m: &Micrograph) -> Result<Vec<f64>> {
    match m.kind() {
        ImageKind::NPhase { n_phases } => Ok(label_fractions(&m.labels()?, n_phases)),
        k => Err(Error::InvalidImage(format!("volume fractions need a segmented image, got {}", k.name()))),
    }
}

/// Volume fractions of one sample of a channel-major probability tensor,
/// after per-pixel argmax.
pub fn volume_fractions_of<F: Real>(probs: &[F], n_phases: usize) -> Vec<f64> {
    let plane = probs.len() / n_phases;
    let as32: Vec<f32> = probs.iter().map(|v| v.as_f64() as f32).collect();
    label_fractions(&decode_argmax(&as32, n_phases, plane), n_phases)
}

/// Volume fractions inside `region` (occluded pixels only).
pub fn region_fractions(m: &Micrograph, region: &Region) -> Result<Vec<f64>> {
    let ImageKind::NPhase { n_phases } = m.kind() else {
        return Err(Error::InvalidImage("volume fractions need a segmented image".into()));
    };
    let labels = m.labels()?;
    let win = region.window();
    let inside: Vec<u8> = (win.y..win.y + win.h)
        .flat_map(|y| (win.x..win.x + win.w).map(move |x| (x, y)))
        .filter(|&(x, y)| region.is_occluded(x, y))
        .map(|(x, y)| labels[y * m.width() + x])
        .collect();
    Ok(label_fractions(&inside, n_phases))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VfReport {
    /// `[sample][phase]` fractions of ground-truth patches.
    pub ground_truth: Vec<Vec<f64>>,
    /// Generations from unoptimised random seeds.
    pub random_seed: Vec<Vec<f64>>,
    /// Fixed (resampled-centre) or optimised seed generations, when available.
    pub fixed_seed: Option<Vec<Vec<f64>>>,
    /// Per-phase KS p-values, random-seed vs ground truth.
    pub random_p_values: Vec<f64>,
    /// Per-phase KS p-values, fixed-seed vs ground truth.
    pub fixed_p_values: Option<Vec<f64>>,
}

fn column(samples: &[Vec<f64>], phase: usize) -> Vec<f64> {
    samples.iter().map(|s| s[phase]).collect()
}

fn per_phase_p(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = a.first().ok_or(Error::EmptySample)?.len();
    (0..n).map(|p| Ok(ks_two_sample(&column(a, p), &column(b, p))?.p_value)).collect()
}

impl VfReport {
    pub fn new(ground_truth: Vec<Vec<f64>>, random_seed: Vec<Vec<f64>>, fixed_seed: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let random_p_values = per_phase_p(&random_seed, &ground_truth)?;
        let fixed_p_values = fixed_seed.as_ref().map(|f| per_phase_p(f, &ground_truth)).transpose()?;
        Ok(Self { ground_truth, random_seed, fixed_seed, random_p_values, fixed_p_values })
    }

    /// Mean fraction of `phase` in a sample set.
    pub fn mean(samples: &[Vec<f64>], phase: usize) -> f64 {
        samples.iter().map(|s| s[phase]).sum::<f64>() / samples.len() as f64
    }
}

/// Fractions of `count` random `size x size` patches outside the region.
pub fn ground_truth_fractions(
    img: &Micrograph,
    region: Option<&Region>,
    size: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let ImageKind::NPhase { n_phases } = img.kind() else {
        return Err(Error::InvalidImage("volume fractions need a segmented image".into()));
    };
    let ps = PatchSet::new(img, region, size, Augmentation::None)?;
    let batch = ps.sample::<f32, _>(count, rng)?;
    Ok((0..count).map(|n| volume_fractions_of(batch.sample(n), n_phases)).collect())
}

/// Fractions of the central `d_x x d_y` crop of generations from `count`
/// unoptimised seeds sized for that extent.
pub fn random_seed_fractions(b: &ModelBundle, d_x: usize, d_y: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let ImageKind::NPhase { n_phases } = b.kind else {
        return Err(Error::InvalidImage("volume fractions need a segmented image".into()));
    };
    let (s_x, s_y) = seed_size_for(d_x, d_y)?;
    (0..count)
        .map(|_| {
            let z = SeedTensor::sample(b.arch.latent_depth, s_x, s_y, rng);
            let out = b.generator.forward_seed(&z)?;
            let (h, w) = (out.height(), out.width());
            let crop = out.crop((h - d_y) / 2, (w - d_x) / 2, d_y, d_x)?;
            Ok(volume_fractions_of(crop.data(), n_phases))
        })
        .collect()
}

/// Fractions of the inpainted region over `count` centre resamples of a
/// G-opt bundle's fixed seed.
pub fn fixed_seed_fractions(b: &ModelBundle, img: &Micrograph, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let region = b.region.as_ref().ok_or_else(|| Error::Bundle("bundle has no region".into()))?;
    (0..count).map(|_| region_fractions(&evaluate_gopt(b, img, true, rng)?.image, region)).collect()
}

/// Normalised histogram of pixel values over `[0, 1]` with equal-width bins.
/// Colour images are converted to gray first.
pub fn pixel_histogram(samples: &[Micrograph], bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for m in samples {
        if m.kind().is_nphase() {
            return Err(Error::InvalidImage("pixel histograms need grayscale or colour images".into()));
        }
        for v in m.display_gray() {
            let b = ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptySample);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_onehot;
    use rand::{Rng, SeedableRng};

    #[test]
    fn counting() {
        let m = encode_onehot(&[0, 1, 2, 2], 2, 2, 3).unwrap();
        assert_eq!(volume_fractions(&m).unwrap(), vec![0.25, 0.25, 0.5]);
        let m = encode_onehot(&[0; 16], 4, 4, 2).unwrap();
        assert_eq!(volume_fractions(&m).unwrap(), vec![1.0, 0.0]);
        let g = Micrograph::new(2, 2, ImageKind::Grayscale, vec![0.0; 4], vec![]).unwrap();
        assert!(volume_fractions(&g).is_err());
    }

    #[test]
    fn fractions_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<u8> = (0..96 * 96).map(|_| rng.random_range(0..4)).collect();
        let img = encode_onehot(&labels, 96, 96, 4).unwrap();
        for s in ground_truth_fractions(&img, None, 32, 20, &mut rng).unwrap() {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn histogram_shapes() {
        let c = Micrograph::new(8, 8, ImageKind::Grayscale, vec![0.5; 64], vec![]).unwrap();
        let h = pixel_histogram(&[c], 64).unwrap();
        assert_eq!(h.iter().filter(|&&v| v > 0.0).count(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let noise = Micrograph::new(n, n, ImageKind::Grayscale, (0..n * n).map(|_| rng.random()).collect(), vec![]).unwrap();
        let h = pixel_histogram(&[noise], 64).unwrap();
        let (lo, hi) = h.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo < 1.5);

        let red = Micrograph::new(1, 1, ImageKind::Colour, vec![1.0, 0.0, 0.0], vec![]).unwrap();
        let h = pixel_histogram(&[red], 10000).unwrap();
        assert_eq!(h.iter().position(|&v| v > 0.0), Some(2989));

        let seg = encode_onehot(&[0, 1], 2, 1, 2).unwrap();
        assert!(pixel_histogram(&[seg], 8).is_err());
    }
}
