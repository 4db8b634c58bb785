//! Inpaint results and the paste step shared by every fill method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Micrograph, Region};
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpaintMethod {
    Gopt,
    Zopt,
    Zeros,
    UniformNoise,
    RandomSeed,
    /// The unmodified original, used as a reference.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintResult {
    pub image: Micrograph,
    pub region: Region,
    pub method: InpaintMethod,
    pub seed_digest: Option<String>,
    /// Non-fatal note, e.g. a resample request on a seed with no changeable centre.
    pub warning: Option<String>,
}

impl InpaintResult {
    /// Paste the occluded pixels of a window-sized generator output into `source`.
    pub fn from_window<F: Real>(
        source: &Micrograph,
        region: &Region,
        window_output: &Tensor<F>,
        method: InpaintMethod,
        seed_digest: Option<String>,
    ) -> Result<Self> {
        region.validate(source.width(), source.height())?;
        let win = region.window();
        let [n, c, h, w] = window_output.shape();
        if n != 1 || c != source.channels() || h != win.h || w != win.w {
            return Err(Error::Shape(format!(
                "output {:?} does not match window {}x{} with {} channels",
                window_output.shape(),
                win.w,
                win.h,
                source.channels()
            )));
        }
        let image = source.paste(window_output, win.x, win.y, |x, y| region.is_occluded(x, y))?;
        Ok(Self { image, region: region.clone(), method, seed_digest, warning: None })
    }

    /// True when every pixel outside the region is bit-identical to `source`.
    pub fn paste_audit(&self, source: &Micrograph) -> bool {
        paste_audit(&self.image, source, &self.region)
    }
}

/// True when `result` and `source` differ only at occluded pixels of `region`.
pub fn paste_audit(result: &Micrograph, source: &Micrograph, region: &Region) -> bool {
    result.width() == source.width()
        && result.height() == source.height()
        && result.kind() == source.kind()
        && result.diff_pixels(source).into_iter().all(|(x, y)| region.is_occluded(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{encode_onehot, ImageKind};

    #[test]
    fn only_occluded_pixels_change() {
        let labels: Vec<u8> = (0..128 * 128).map(|i| (i % 3) as u8).collect();
        let img = encode_onehot(&labels, 128, 128, 3).unwrap();
        let region = Region::polygon(vec![[40, 40], [80, 44], [50, 80]]).unwrap();
        let win = region.window();
        let mut out = Tensor::<f32>::zeros([1, 3, win.h, win.w]);
        for y in 0..win.h {
            for x in 0..win.w {
                *out.at_mut(0, 2, y, x) = 1.0;
            }
        }
        let r = InpaintResult::from_window(&img, &region, &out, InpaintMethod::Zeros, None).unwrap();
        assert!(r.paste_audit(&img));
        let changed = r.image.diff_pixels(&img).len();
        assert!(changed > 0 && changed <= region.occluded_count());
    }

    #[test]
    fn window_shape_checked() {
        let img = Micrograph::new(128, 128, ImageKind::Grayscale, vec![0.5; 128 * 128], vec![]).unwrap();
        let region = Region::rect(32, 32, 64, 64).unwrap();
        let out = Tensor::<f32>::zeros([1, 1, 64, 64]);
        assert!(InpaintResult::from_window(&img, &region, &out, InpaintMethod::Zeros, None).is_err());
    }
}
