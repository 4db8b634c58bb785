use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Micrograph, Rect, Region};
use crate::nn::{Real, Tensor};

pub const DEFAULT_PATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Random element of the dihedral group: flips and quarter turns.
    #[default]
    FlipsAndRot90,
}

/// Training patches drawn from the unoccluded part of one micrograph.
#[derive(Clone, Debug)]
pub struct PatchSet<'a> {
    pub patch_size: usize,
    pub source: &'a Micrograph,
    /// Patches never intersect this rectangle (the region's window).
    pub exclusion: Option<Rect>,
    pub augmentation: Augmentation,
}

impl<'a> PatchSet<'a> {
    pub fn new(source: &'a Micrograph, region: Option<&Region>, patch_size: usize, augmentation: Augmentation) -> Result<Self> {
        if patch_size == 0 || patch_size > source.width().min(source.height()) {
            return Err(Error::NoValidPatch(format!(
                "patch size {patch_size} does not fit a {}x{} image",
                source.width(),
                source.height()
            )));
        }
        let ps = Self { patch_size, source, exclusion: region.map(Region::window), augmentation };
        if ps.valid_positions() == 0 {
            return Err(Error::NoValidPatch(format!(
                "no {patch_size}x{patch_size} patch avoids the occluded window"
            )));
        }
        Ok(ps)
    }

    fn position_ranges(&self) -> (usize, usize) {
        (self.source.width() - self.patch_size + 1, self.source.height() - self.patch_size + 1)
    }

    fn is_valid(&self, x: usize, y: usize) -> bool {
        let patch = Rect { x, y, w: self.patch_size, h: self.patch_size };
        self.exclusion.is_none_or(|ex| !patch.intersects(&ex))
    }

    /// Number of top-left positions whose patch avoids the exclusion window.
    pub fn valid_positions(&self) -> usize {
        let (nx, ny) = self.position_ranges();
        let Some(ex) = self.exclusion else { return nx * ny };
        let p = self.patch_size;
        let overlapping = |start: usize, len: usize, n: usize| {
            // positions t in [0, n) with [t, t + p) meeting [start, start + len)
            let lo = (start + 1).saturating_sub(p);
            let hi = (start + len).min(n);
            hi.saturating_sub(lo)
        };
        nx * ny - overlapping(ex.x, ex.w, nx) * overlapping(ex.y, ex.h, ny)
    }

    /// Uniform over valid positions by rejection.
    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let (nx, ny) = self.position_ranges();
        loop {
            let x = rng.random_range(0..nx);
            let y = rng.random_range(0..ny);
            if self.is_valid(x, y) {
                return (x, y);
            }
        }
    }

    /// A batch of `count` patches as a `[count, c, p, p]` tensor.
    pub fn sample<F: Real, R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Tensor<F>> {
        let p = self.patch_size;
        let c = self.source.channels();
        let mut out = Tensor::zeros([count, c, p, p]);
        for n in 0..count {
            let (x, y) = self.sample_position(rng);
            let t = match self.augmentation {
                Augmentation::None => 0,
                Augmentation::FlipsAndRot90 => rng.random_range(0..8),
            };
            let dst = out.sample_mut(n);
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        let (sx, sy) = dihedral(t, px, py, p);
                        dst[(ch * p + py) * p + px] = F::lit(self.source.get(ch, y + sy, x + sx) as f64);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Source coordinate for output `(x, y)` under dihedral transform `t` of a
/// `p x p` square.
fn dihedral(t: usize, x: usize, y: usize, p: usize) -> (usize, usize) {
    let m = p - 1;
    let (x, y) = if t & 4 != 0 { (m - x, y) } else { (x, y) };
    match t & 3 {
        0 => (x, y),
        1 => (y, m - x),
        2 => (m - x, m - y),
        _ => (m - y, x),
    }
}

/// Draw `count` patches as a `[count, c, p, p]` tensor.
pub fn sample_patches<F: Real, R: Rng + ?Sized>(ps: &PatchSet<'_>, count: usize, rng: &mut R) -> Result<Tensor<F>> {
    ps.sample(count, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_onehot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels_image(w: usize, h: usize) -> Micrograph {
        let labels: Vec<u8> = (0..w * h).map(|i| ((i / 7 + i % 5) % 3) as u8).collect();
        encode_onehot(&labels, w, h, 3).unwrap()
    }

    #[test]
    fn valid_position_count_without_region() {
        let img = labels_image(256, 256);
        let ps = PatchSet::new(&img, None, 64, Augmentation::None).unwrap();
        assert_eq!(ps.valid_positions(), 193 * 193);
    }

    #[test]
    fn valid_position_count_matches_enumeration() {
        let img = labels_image(160, 140);
        let region = Region::rect(56, 40, 32, 40).unwrap();
        let ps = PatchSet::new(&img, Some(&region), 32, Augmentation::None).unwrap();
        let (nx, ny) = ps.position_ranges();
        let brute = (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).filter(|&(x, y)| ps.is_valid(x, y)).count();
        assert_eq!(ps.valid_positions(), brute);
    }

    #[test]
    fn region_covering_image_is_rejected() {
        let img = labels_image(96, 96);
        let region = Region::rect(16, 16, 64, 64).unwrap();
        assert!(matches!(PatchSet::new(&img, Some(&region), 64, Augmentation::None), Err(Error::NoValidPatch(_))));
    }

    #[test]
    fn patches_never_touch_window() {
        let img = labels_image(256, 256);
        let region = Region::rect(96, 96, 64, 64).unwrap();
        let ps = PatchSet::new(&img, Some(&region), 64, Augmentation::None).unwrap();
        let win = region.window();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let (x, y) = ps.sample_position(&mut rng);
            let patch = Rect { x, y, w: 64, h: 64 };
            for py in patch.y..patch.y + patch.h {
                for px in patch.x..patch.x + patch.w {
                    assert!(!win.contains(px, py));
                }
            }
        }
    }

    #[test]
    fn augmentation_preserves_phase_counts() {
        let img = labels_image(64, 64);
        for t in 0..8 {
            let mut counts = [0usize; 3];
            let labels = img.labels().unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let (sx, sy) = dihedral(t, x, y, 64);
                    counts[labels[sy * 64 + sx] as usize] += 1;
                }
            }
            let mut expected = [0usize; 3];
            labels.iter().for_each(|&l| expected[l as usize] += 1);
            assert_eq!(counts, expected, "transform {t}");
        }
    }

    #[test]
    fn dihedral_is_bijective() {
        for t in 0..8 {
            let mut seen = vec![false; 25];
            for y in 0..5 {
                for x in 0..5 {
                    let (sx, sy) = dihedral(t, x, y, 5);
                    assert!(!seen[sy * 5 + sx]);
                    seen[sy * 5 + sx] = true;
                }
            }
        }
    }
}
