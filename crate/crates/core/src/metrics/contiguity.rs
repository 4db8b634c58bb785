use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageKind, Micrograph, Region};
use crate::inpaint::InpaintResult;
use crate::metrics::ks_two_sample;

/// Upper bound on the number of reference pairs fed to the KS test.
pub const MAX_REFERENCE_PAIRS: usize = 1_000_000;
/// Seed of the reference subsample, so reports are reproducible.
pub const REFERENCE_SEED: u64 = 0x5eed_c0de;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContiguityReport {
    /// Squared differences of 4-neighbour pairs straddling the region boundary.
    pub border_sq_diffs: Vec<f64>,
    /// Squared differences of 4-neighbour pairs in the original image.
    pub reference_sq_diffs: Vec<f64>,
    /// Reference pairs before subsampling.
    pub reference_total: usize,
    pub ks_statistic: f64,
    pub p_value: f64,
}

/// Per-pixel values used for neighbour differences: phase indices mapped to
/// equally spaced gray levels, otherwise the raw channels.
fn pixel_values(m: &Micrograph) -> (usize, Vec<f32>) {
    match m.kind() {
        ImageKind::NPhase { n_phases } => {
            let labels = m.labels().expect("segmented image has labels");
            let scale = 1.0 / (n_phases - 1) as f32;
            (1, labels.iter().map(|&l| l as f32 * scale).collect())
        }
        _ => (m.channels(), m.data().to_vec()),
    }
}

struct Values {
    c: usize,
    plane: usize,
    v: Vec<f32>,
}

impl Values {
    fn of(m: &Micrograph) -> Self {
        let (c, v) = pixel_values(m);
        Self { c, plane: m.plane(), v }
    }

    /// Channel mean of squared differences between pixel `i` here and `j` in `other`.
    fn sq_diff(&self, i: usize, other: &Values, j: usize) -> f64 {
        let s: f64 = (0..self.c)
            .map(|ch| (self.v[ch * self.plane + i] as f64 - other.v[ch * self.plane + j] as f64).powi(2))
            .sum();
        s / self.c as f64
    }
}

/// Squared differences across the region border of `result`: the inside
/// pixel comes from the inpaint, the outside pixel from `original`.
pub fn border_sq_diffs(result: &Micrograph, original: &Micrograph, region: &Region) -> Vec<f64> {
    let (w, h) = (original.width(), original.height());
    let inside = Values::of(result);
    let outside = Values::of(original);
    let win = region.window();
    let mut out = Vec::new();
    for y in win.y.saturating_sub(1)..(win.y + win.h + 1).min(h) {
        for x in win.x.saturating_sub(1)..(win.x + win.w + 1).min(w) {
            if !region.is_occluded(x, y) {
                continue;
            }
            let neighbours = [
                (x > 0).then(|| (x - 1, y)),
                (x + 1 < w).then(|| (x + 1, y)),
                (y > 0).then(|| (x, y - 1)),
                (y + 1 < h).then(|| (x, y + 1)),
            ];
            for (nx, ny) in neighbours.into_iter().flatten() {
                if !region.is_occluded(nx, ny) {
                    out.push(inside.sq_diff(y * w + x, &outside, ny * w + nx));
                }
            }
        }
    }
    out
}

/// Squared differences of every horizontal and vertical neighbour pair,
/// uniformly subsampled to at most `max` pairs. Returns the sample and the
/// total pair count.
pub fn reference_sq_diffs(original: &Micrograph, max: usize) -> (Vec<f64>, usize) {
    let (w, h) = (original.width(), original.height());
    let vals = Values::of(original);
    let horizontal = (w - 1) * h;
    let total = horizontal + w * (h - 1);
    let pair = |k: usize| {
        let (i, j) = if k < horizontal {
            let (y, x) = (k / (w - 1), k % (w - 1));
            (y * w + x, y * w + x + 1)
        } else {
            let k = k - horizontal;
            (k, k + w)
        };
        vals.sq_diff(i, &vals, j)
    };
    if total <= max {
        return ((0..total).map(pair).collect(), total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
    let mut idx = rand::seq::index::sample(&mut rng, total, max).into_vec();
    idx.sort_unstable();
    (idx.into_iter().map(pair).collect(), total)
}

/// KS comparison of squared neighbour differences across the inpaint border
/// with those of the whole original image.
pub fn border_contiguity(result: &InpaintResult, original: &Micrograph) -> Result<ContiguityReport> {
    let img = &result.image;
    if (img.width(), img.height(), img.kind()) != (original.width(), original.height(), original.kind()) {
        return Err(Error::Shape("inpaint and original differ in size or kind".into()));
    }
    result.region.validate(original.width(), original.height())?;
    let border = border_sq_diffs(img, original, &result.region);
    if border.is_empty() {
        return Err(Error::InvalidRegion("no neighbour pairs straddle the region border".into()));
    }
    let (reference, reference_total) = reference_sq_diffs(original, MAX_REFERENCE_PAIRS);
    let ks = ks_two_sample(&border, &reference)?;
    Ok(ContiguityReport {
        border_sq_diffs: border,
        reference_sq_diffs: reference,
        reference_total,
        ks_statistic: ks.statistic,
        p_value: ks.p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_onehot;
    use crate::inpaint::InpaintMethod;
    use crate::metrics::{baseline_fill, BaselineKind};

    fn gt(img: &Micrograph, region: &Region) -> InpaintResult {
        InpaintResult {
            image: img.clone(),
            region: region.clone(),
            method: InpaintMethod::GroundTruth,
            seed_digest: None,
            warning: None,
        }
    }

    #[test]
    fn checkerboard_border_matches_reference() {
        let n = 96;
        let labels: Vec<u8> = (0..n * n).map(|i| ((i % n + i / n) % 2) as u8).collect();
        let img = encode_onehot(&labels, n, n, 2).unwrap();
        let region = Region::rect(32, 32, 32, 32).unwrap();
        let r = border_contiguity(&gt(&img, &region), &img).unwrap();
        assert_eq!(r.border_sq_diffs.len(), 4 * 32);
        assert!(r.border_sq_diffs.iter().all(|&d| d == 1.0));
        assert_eq!(r.ks_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.reference_total, 2 * 95 * 96);
    }

    #[test]
    fn gt_beats_zeros() {
        let n = 128;
        let labels: Vec<u8> = (0..n * n).map(|i| (((i % n) / 5 + (i / n) / 3) % 3) as u8).collect();
        let img = encode_onehot(&labels, n, n, 3).unwrap();
        let region = Region::rect(40, 40, 48, 48).unwrap();
        let gt_p = border_contiguity(&gt(&img, &region), &img).unwrap().p_value;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = baseline_fill(&img, &region, BaselineKind::Zeros, None, &mut rng).unwrap();
        let z_p = border_contiguity(&zeros, &img).unwrap().p_value;
        assert!(gt_p > z_p, "{gt_p} vs {z_p}");
    }

    #[test]
    fn subsampling_is_bounded_and_deterministic() {
        let img = Micrograph::new(64, 64, ImageKind::Grayscale, (0..4096).map(|i| (i % 7) as f32 / 7.0).collect(), vec![]).unwrap();
        let (a, total) = reference_sq_diffs(&img, 1000);
        let (b, _) = reference_sq_diffs(&img, 1000);
        assert_eq!(a.len(), 1000);
        assert_eq!(total, 2 * 63 * 64);
        assert_eq!(a, b);
    }

    #[test]
    fn colour_uses_channel_mean() {
        let mut data = vec![0.0; 3 * 4];
        data[1] = 1.0; // red channel of pixel (1, 0)
        let img = Micrograph::new(2, 2, ImageKind::Colour, data, vec![]).unwrap();
        let (d, _) = reference_sq_diffs(&img, 10);
        assert_eq!(d.iter().filter(|&&v| v > 0.0).count(), 2);
        assert!(d.iter().all(|&v| v == 0.0 || (v - 1.0 / 3.0).abs() < 1e-12));
    }
}
