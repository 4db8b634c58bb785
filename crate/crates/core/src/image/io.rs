use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GenericImageView, ImageFormat};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{rgb_to_gray, ImageKind, Micrograph};

/// Images with at most this many distinct gray levels are treated as segmented.
pub const MAX_PHASES: usize = 10;

/// Requested interpretation of a loaded raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindHint {
    NPhase,
    Grayscale,
    Colour,
}

impl std::str::FromStr for KindHint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nphase" | "n-phase" | "segmented" => Ok(KindHint::NPhase),
            "grayscale" | "gray" | "grey" => Ok(KindHint::Grayscale),
            "colour" | "color" | "rgb" => Ok(KindHint::Colour),
            other => Err(Error::Config(format!("unknown image type {other:?}"))),
        }
    }
}

pub fn load_micrograph(path: impl AsRef<Path>, hint: Option<KindHint>) -> Result<Micrograph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_micrograph(&bytes, hint)
}

/// Decode PNG/TIFF/JPEG bytes, detecting the image kind unless hinted.
pub fn decode_micrograph(bytes: &[u8], hint: Option<KindHint>) -> Result<Micrograph> {
    if bytes.is_empty() {
        return Err(Error::Decode("empty input".into()));
    }
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("zero-area image".into()));
    }
    let (raw, max, channels) = raw_pixels(&img);
    let hash = hex::encode(Sha256::digest(bytes));
    let plane = w * h;

    let is_gray = channels == 1
        || (0..plane).all(|i| raw[3 * i] == raw[3 * i + 1] && raw[3 * i] == raw[3 * i + 2]);
    let gray: Option<Vec<u16>> = is_gray.then(|| {
        if channels == 1 {
            raw.clone()
        } else {
            (0..plane).map(|i| raw[3 * i]).collect()
        }
    });

    let kind = match (hint, &gray) {
        (Some(KindHint::NPhase), None) => {
            return Err(Error::InvalidImage("segmented images must be single-channel".into()))
        }
        (Some(KindHint::NPhase), Some(g)) => {
            let n = distinct(g).len();
            if n > MAX_PHASES {
                return Err(Error::InvalidImage(format!(
                    "{n} distinct values; a segmented image has at most {MAX_PHASES}"
                )));
            }
            KindHint::NPhase
        }
        (Some(k), _) => k,
        (None, Some(g)) if distinct(g).len() <= MAX_PHASES => KindHint::NPhase,
        (None, Some(_)) => KindHint::Grayscale,
        (None, None) => KindHint::Colour,
    };

    let scale = max as f32;
    let m = match kind {
        KindHint::NPhase => {
            let g = gray.expect("checked above");
            let values: Vec<u16> = distinct(&g).into_iter().collect();
            if values.len() < 2 {
                return Err(Error::InvalidImage(format!(
                    "segmented image needs at least 2 phases, found {}",
                    values.len()
                )));
            }
            let n = values.len();
            let mut data = vec![0.0f32; n * plane];
            for (i, v) in g.iter().enumerate() {
                let phase = values.binary_search(v).expect("value collected above");
                data[phase * plane + i] = 1.0;
            }
            Micrograph::new(w, h, ImageKind::NPhase { n_phases: n }, data, values)?
        }
        KindHint::Grayscale => {
            let data = match &gray {
                Some(g) => g.iter().map(|&v| v as f32 / scale).collect(),
                None => (0..plane)
                    .map(|i| {
                        let c = [0, 1, 2].map(|k| raw[3 * i + k] as f32 / scale);
                        rgb_to_gray(c).clamp(0.0, 1.0)
                    })
                    .collect(),
            };
            Micrograph::new(w, h, ImageKind::Grayscale, data, vec![])?
        }
        KindHint::Colour => {
            let mut data = vec![0.0f32; 3 * plane];
            for i in 0..plane {
                for k in 0..3 {
                    let v = if channels == 1 { raw[i] } else { raw[3 * i + k] };
                    data[k * plane + i] = v as f32 / scale;
                }
            }
            Micrograph::new(w, h, ImageKind::Colour, data, vec![])?
        }
    };
    Ok(m.with_source_hash(hash))
}

/// Interleaved integer samples (1 or 3 per pixel, alpha dropped) and the
/// full-scale value.
fn raw_pixels(img: &DynamicImage) -> (Vec<u16>, u16, usize) {
    use DynamicImage::*;
    match img {
        ImageLuma8(_) | ImageLumaA8(_) => (img.to_luma8().into_raw().into_iter().map(u16::from).collect(), 255, 1),
        ImageLuma16(_) | ImageLumaA16(_) => (img.to_luma16().into_raw(), u16::MAX, 1),
        ImageRgb16(_) | ImageRgba16(_) => (img.to_rgb16().into_raw(), u16::MAX, 3),
        _ => (img.to_rgb8().into_raw().into_iter().map(u16::from).collect(), 255, 3),
    }
}

fn distinct(values: &[u16]) -> BTreeSet<u16> {
    values.iter().copied().collect()
}

/// Encode as PNG. Segmented images are written with their recorded phase
/// values (16-bit when any value exceeds 255).
pub fn encode_png(m: &Micrograph) -> Result<Vec<u8>> {
    let (w, h) = (m.width() as u32, m.height() as u32);
    let plane = m.plane();
    let img = match m.kind() {
        ImageKind::NPhase { .. } => {
            let labels = m.labels()?;
            let values = m.phase_values();
            if values.iter().all(|&v| v <= 255) {
                let px = labels.iter().map(|&l| values[l as usize] as u8).collect();
                DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, px).expect("buffer size"))
            } else {
                let px = labels.iter().map(|&l| values[l as usize]).collect();
                DynamicImage::ImageLuma16(image::ImageBuffer::from_raw(w, h, px).expect("buffer size"))
            }
        }
        ImageKind::Grayscale => {
            let px = m.data().iter().map(|&v| to_u8(v)).collect();
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, px).expect("buffer size"))
        }
        ImageKind::Colour => {
            let d = m.data();
            let px = (0..plane).flat_map(|i| [0, 1, 2].map(|k| to_u8(d[k * plane + i]))).collect();
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, px).expect("buffer size"))
        }
    };
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::Other(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn save_png(m: &Micrograph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(m)?).map_err(|e| Error::io(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
