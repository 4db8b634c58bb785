use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::OutputActivation;
use crate::nn::{Real, Tensor};

/// Grayscale weights applied to RGB before histogramming.
pub const GRAY_WEIGHTS: [f32; 3] = [0.2989, 0.5870, 0.1140];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ImageKind {
    NPhase { n_phases: usize },
    Grayscale,
    Colour,
}

impl ImageKind {
    pub fn channels(&self) -> usize {
        match *self {
            ImageKind::NPhase { n_phases } => n_phases,
            ImageKind::Grayscale => 1,
            ImageKind::Colour => 3,
        }
    }

    pub fn activation(&self) -> OutputActivation {
        match self {
            ImageKind::NPhase { .. } => OutputActivation::Softmax,
            _ => OutputActivation::Sigmoid,
        }
    }

    pub fn is_nphase(&self) -> bool {
        matches!(self, ImageKind::NPhase { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImageKind::NPhase { .. } => "nphase",
            ImageKind::Grayscale => "grayscale",
            ImageKind::Colour => "colour",
        }
    }
}

/// A single micrograph with channel values in `[0, 1]`, stored channel-major
/// (`data[(c * height + y) * width + x]`). Segmented images are one-hot over
/// their phases.
#[derive(Clone, Debug, PartialEq)]
pub struct Micrograph {
    width: usize,
    height: usize,
    kind: ImageKind,
    data: Vec<f32>,
    phase_values: Vec<u16>,
    source_hash: String,
}

impl Micrograph {
    /// Build from channel-major data, checking every invariant.
    pub fn new(width: usize, height: usize, kind: ImageKind, data: Vec<f32>, phase_values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-area image".into()));
        }
        let c = kind.channels();
        if data.len() != c * width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} image with {c} channels",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage("channel values must lie in [0, 1]".into()));
        }
        if let ImageKind::NPhase { n_phases } = kind {
            if n_phases < 2 {
                return Err(Error::InvalidImage(format!("segmented image needs at least 2 phases, found {n_phases}")));
            }
            if phase_values.len() != n_phases || phase_values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidImage("phase values must be strictly increasing, one per phase".into()));
            }
            let plane = width * height;
            for px in 0..plane {
                let mut ones = 0;
                for ch in 0..n_phases {
                    match data[ch * plane + px] {
                        v if v == 1.0 => ones += 1,
                        v if v == 0.0 => {}
                        _ => return Err(Error::InvalidImage("segmented pixels must be one-hot".into())),
                    }
                }
                if ones != 1 {
                    return Err(Error::InvalidImage("segmented pixels must be one-hot".into()));
                }
            }
        } else if !phase_values.is_empty() {
            return Err(Error::InvalidImage("phase values only apply to segmented images".into()));
        }
        let source_hash = content_hash(width, height, &kind, &data);
        Ok(Self { width, height, kind, data, phase_values, source_hash })
    }

    pub(crate) fn with_source_hash(mut self, hash: String) -> Self {
        self.source_hash = hash;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> ImageKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn phase_values(&self) -> &[u16] {
        &self.phase_values
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn plane(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Per-pixel channel vector.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels()).map(|c| self.get(c, y, x)).collect()
    }

    /// Phase index per pixel (argmax of channels).
    pub fn labels(&self) -> Result<Vec<u8>> {
        match self.kind {
            ImageKind::NPhase { n_phases } => Ok(decode_argmax(&self.data, n_phases, self.plane())),
            _ => Err(Error::InvalidImage("labels only exist for segmented images".into())),
        }
    }

    /// Scalar value per pixel used for contiguity: phase `i` maps to
    /// `i / (n - 1)`, grayscale is itself and colour is not reduced here.
    pub fn display_gray(&self) -> Vec<f32> {
        match self.kind {
            ImageKind::NPhase { n_phases } => decode_argmax(&self.data, n_phases, self.plane())
                .into_iter()
                .map(|l| l as f32 / (n_phases - 1) as f32)
                .collect(),
            ImageKind::Grayscale => self.data.clone(),
            ImageKind::Colour => {
                let p = self.plane();
                (0..p)
                    .map(|i| rgb_to_gray([self.data[i], self.data[p + i], self.data[2 * p + i]]))
                    .collect()
            }
        }
    }

    /// Copy a `w x h` window starting at `(x0, y0)` into a `[1, c, h, w]` tensor.
    pub fn window_tensor<F: Real>(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor<F>> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels();
        let mut out = Vec::with_capacity(c * w * h);
        for ch in 0..c {
            for y in y0..y0 + h {
                let row = (ch * self.height + y) * self.width;
                out.extend(self.data[row + x0..row + x0 + w].iter().map(|&v| F::lit(v as f64)));
            }
        }
        Tensor::from_vec([1, c, h, w], out)
    }

    /// Return a copy with the pixels where `mask(x, y)` holds taken from
    /// `patch` (a `[1, c, h, w]` tensor placed at `(x0, y0)`). Segmented
    /// patches are reduced to one-hot by argmax.
    pub fn paste<F: Real>(
        &self,
        patch: &Tensor<F>,
        x0: usize,
        y0: usize,
        mut mask: impl FnMut(usize, usize) -> bool,
    ) -> Result<Micrograph> {
        let [n, c, h, w] = patch.shape();
        if n != 1 || c != self.channels() {
            return Err(Error::Shape(format!(
                "patch {:?} does not match image with {} channels",
                patch.shape(),
                self.channels()
            )));
        }
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape("patch exceeds image".into()));
        }
        let mut data = self.data.clone();
        let plane = self.plane();
        for y in 0..h {
            for x in 0..w {
                let (ix, iy) = (x0 + x, y0 + y);
                if !mask(ix, iy) {
                    continue;
                }
                let dst = iy * self.width + ix;
                match self.kind {
                    ImageKind::NPhase { .. } => {
                        let mut best = 0;
                        for ch in 1..c {
                            if patch.at(0, ch, y, x) > patch.at(0, best, y, x) {
                                best = ch;
                            }
                        }
                        for ch in 0..c {
                            data[ch * plane + dst] = if ch == best { 1.0 } else { 0.0 };
                        }
                    }
                    _ => {
                        for ch in 0..c {
                            data[ch * plane + dst] = (patch.at(0, ch, y, x).as_f64() as f32).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        let out = Micrograph {
            width: self.width,
            height: self.height,
            kind: self.kind,
            source_hash: content_hash(self.width, self.height, &self.kind, &data),
            data,
            phase_values: self.phase_values.clone(),
        };
        Ok(out)
    }

    /// Image of a `[1, c, h, w]` generator output, reduced to one-hot by
    /// argmax for segmented kinds.
    pub fn from_output<F: Real>(output: &Tensor<F>, kind: ImageKind, phase_values: Vec<u16>) -> Result<Micrograph> {
        let [_, _, h, w] = output.shape();
        let c = kind.channels();
        let mut blank = vec![0.0; c * w * h];
        if kind.is_nphase() {
            blank[..w * h].fill(1.0);
        }
        Micrograph::new(w, h, kind, blank, phase_values)?.paste(output, 0, 0, |_, _| true)
    }

    /// Pixels (x, y) whose channel vectors differ from `other`.
    pub fn diff_pixels(&self, other: &Micrograph) -> Vec<(usize, usize)> {
        assert_eq!((self.width, self.height, self.channels()), (other.width, other.height, other.channels()));
        let plane = self.plane();
        (0..plane)
            .filter(|&i| (0..self.channels()).any(|c| self.data[c * plane + i].to_bits() != other.data[c * plane + i].to_bits()))
            .map(|i| (i % self.width, i / self.width))
            .collect()
    }
}

fn content_hash(width: usize, height: usize, kind: &ImageKind, data: &[f32]) -> String {
    let mut h = Sha256::new();
    h.update((width as u64).to_le_bytes());
    h.update((height as u64).to_le_bytes());
    h.update(kind.name().as_bytes());
    h.update((kind.channels() as u64).to_le_bytes());
    for v in data {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One-hot encode a label image into channel-major data.
pub fn encode_onehot(labels: &[u8], width: usize, height: usize, n: usize) -> Result<Micrograph> {
    if labels.len() != width * height {
        return Err(Error::Shape(format!("{} labels for {width}x{height}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= n) {
        return Err(Error::InvalidImage(format!("label {bad} out of range for {n} phases")));
    }
    let plane = width * height;
    let mut data = vec![0.0f32; n * plane];
    for (i, &l) in labels.iter().enumerate() {
        data[l as usize * plane + i] = 1.0;
    }
    let phase_values = equally_spaced_values(n);
    Micrograph::new(width, height, ImageKind::NPhase { n_phases: n }, data, phase_values)
}

/// Gray levels used when a segmented image has no recorded source values.
pub fn equally_spaced_values(n: usize) -> Vec<u16> {
    if n < 2 {
        return vec![0; n];
    }
    (0..n).map(|i| ((i * 255) as f64 / (n - 1) as f64).round() as u16).collect()
}

/// Per-pixel argmax over `n` channel planes; ties go to the lowest index.
pub fn decode_argmax(channels: &[f32], n: usize, plane: usize) -> Vec<u8> {
    assert_eq!(channels.len(), n * plane, "channel count mismatch");
    (0..plane)
        .map(|px| {
            let mut best = 0;
            for c in 1..n {
                if channels[c * plane + px] > channels[best * plane + px] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

pub fn rgb_to_gray(c: [f32; 3]) -> f32 {
    c.iter().zip(GRAY_WEIGHTS).map(|(v, w)| v * w).sum()
}
