use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Kernel geometry shared by convolutions and transpose convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn conv_out(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn transpose_out(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfold one `c x h x w` sample into `[c*k*k, oh*ow]` columns.
pub(crate) fn im2col<F: Real>(
    src: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeom,
    (oh, ow): (usize, usize),
    cols: &mut [F],
) {
    let k = g.kernel;
    let p = oh * ow;
    debug_assert_eq!(cols.len(), c * k * k * p);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { F::zero() } else { line[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a `c x h x w` sample.
pub(crate) fn col2im<F: Real>(
    cols: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeom,
    (oh, ow): (usize, usize),
    dst: &mut [F],
) {
    let k = g.kernel;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn init_normal<F: Real, R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..len).map(|_| F::lit(dist.sample(rng))).collect()
}

/// Parameter gradients of a convolution-like layer.
#[derive(Clone, Debug)]
pub struct LayerGrads<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> LayerGrads<F> {
    pub fn zeros(weights: usize, biases: usize) -> Self {
        Self { weight: vec![F::zero(); weights], bias: vec![F::zero(); biases] }
    }
}

/// 2D convolution, weight layout `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<F> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, geom: ConvGeom, std: f64, rng: &mut R) -> Self {
        let k = geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: init_normal(out_ch * in_ch * k * k, std, rng),
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn cast<G: Real>(&self) -> Conv2d<G> {
        Conv2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            geom: self.geom,
            weight: self.weight.iter().map(|v| G::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.geom.kernel * self.geom.kernel
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.geom.conv_out(h), self.geom.conv_out(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Shape(format!("{h}x{w} input too small for kernel {}", self.geom.kernel))),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut y = self.forward_linear(x)?;
        let plane = y.plane();
        for n in 0..y.batch() {
            for (o, chunk) in y.sample_mut(n).chunks_mut(plane).enumerate() {
                let b = self.bias[o];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(y)
    }

    /// Convolution without the bias term.
    pub fn forward_linear(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let [n, c, h, w] = x.shape();
        if c != self.in_ch {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_ch)));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let kk = self.patch_len();
        let p = oh * ow;
        let mut y = Tensor::zeros([n, self.out_ch, oh, ow]);
        let mut cols = vec![F::zero(); kk * p];
        for i in 0..n {
            im2col(x.sample(i), (c, h, w), self.geom, (oh, ow), &mut cols);
            F::gemm(
                self.out_ch, kk, p,
                F::one(), &self.weight, (kk as isize, 1),
                &cols, (p as isize, 1),
                F::zero(), y.sample_mut(i), (p as isize, 1),
            );
        }
        Ok(y)
    }

    /// Accumulate parameter gradients for output gradient `gy` at input `x`,
    /// returning the input gradient when requested.
    pub fn backward(
        &self,
        x: &Tensor<F>,
        gy: &Tensor<F>,
        grads: &mut LayerGrads<F>,
        want_input: bool,
    ) -> Option<Tensor<F>> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (gy.height(), gy.width());
        let kk = self.patch_len();
        let p = oh * ow;
        let mut cols = vec![F::zero(); kk * p];
        let mut gx = want_input.then(|| Tensor::zeros([n, c, h, w]));
        for i in 0..n {
            let g = gy.sample(i);
            im2col(x.sample(i), (c, h, w), self.geom, (oh, ow), &mut cols);
            F::gemm(
                self.out_ch, p, kk,
                F::one(), g, (p as isize, 1),
                &cols, (1, p as isize),
                F::one(), &mut grads.weight, (kk as isize, 1),
            );
            for (o, chunk) in g.chunks(p).enumerate() {
                grads.bias[o] += chunk.iter().copied().sum::<F>();
            }
            if let Some(gx) = gx.as_mut() {
                F::gemm(
                    kk, self.out_ch, p,
                    F::one(), &self.weight, (1, kk as isize),
                    g, (p as isize, 1),
                    F::zero(), &mut cols, (p as isize, 1),
                );
                col2im(&cols, (c, h, w), self.geom, (oh, ow), gx.sample_mut(i));
            }
        }
        gx
    }

    /// Accumulate only the weight gradient `gy (x) im2col(x)`.
    pub fn weight_grad(&self, x: &Tensor<F>, gy: &Tensor<F>, gw: &mut [F]) {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (gy.height(), gy.width());
        let kk = self.patch_len();
        let p = oh * ow;
        let mut cols = vec![F::zero(); kk * p];
        for i in 0..n {
            im2col(x.sample(i), (c, h, w), self.geom, (oh, ow), &mut cols);
            F::gemm(
                self.out_ch, p, kk,
                F::one(), gy.sample(i), (p as isize, 1),
                &cols, (1, p as isize),
                F::one(), gw, (kk as isize, 1),
            );
        }
    }

    /// Input gradient only.
    pub fn backward_input(&self, input_hw: (usize, usize), gy: &Tensor<F>) -> Tensor<F> {
        let (h, w) = input_hw;
        let n = gy.batch();
        let (oh, ow) = (gy.height(), gy.width());
        let kk = self.patch_len();
        let p = oh * ow;
        let mut cols = vec![F::zero(); kk * p];
        let mut gx = Tensor::zeros([n, self.in_ch, h, w]);
        for i in 0..n {
            F::gemm(
                kk, self.out_ch, p,
                F::one(), &self.weight, (1, kk as isize),
                gy.sample(i), (p as isize, 1),
                F::zero(), &mut cols, (p as isize, 1),
            );
            col2im(&cols, (self.in_ch, h, w), self.geom, (oh, ow), gx.sample_mut(i));
        }
        gx
    }
}

/// 2D transpose convolution, weight layout `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<F> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, geom: ConvGeom, std: f64, rng: &mut R) -> Self {
        let k = geom.kernel;
        Self {
            in_ch,
            out_ch,
            geom,
            weight: init_normal(in_ch * out_ch * k * k, std, rng),
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn cast<G: Real>(&self) -> ConvTranspose2d<G> {
        ConvTranspose2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            geom: self.geom,
            weight: self.weight.iter().map(|v| G::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }

    fn patch_len(&self) -> usize {
        self.out_ch * self.geom.kernel * self.geom.kernel
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.geom.transpose_out(h), self.geom.transpose_out(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::Shape(format!("{h}x{w} input too small for transpose convolution"))),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let [n, c, h, w] = x.shape();
        if c != self.in_ch {
            return Err(Error::Shape(format!("transpose conv expects {} channels, got {c}", self.in_ch)));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let kk = self.patch_len();
        let p = h * w;
        let mut y = Tensor::zeros([n, self.out_ch, oh, ow]);
        let mut cols = vec![F::zero(); kk * p];
        for i in 0..n {
            F::gemm(
                kk, self.in_ch, p,
                F::one(), &self.weight, (1, kk as isize),
                x.sample(i), (p as isize, 1),
                F::zero(), &mut cols, (p as isize, 1),
            );
            let out = y.sample_mut(i);
            col2im(&cols, (self.out_ch, oh, ow), self.geom, (h, w), out);
            for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                let b = self.bias[o];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &Tensor<F>,
        gy: &Tensor<F>,
        grads: &mut LayerGrads<F>,
        want_input: bool,
    ) -> Option<Tensor<F>> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (gy.height(), gy.width());
        let kk = self.patch_len();
        let p = h * w;
        let mut cols = vec![F::zero(); kk * p];
        let mut gx = want_input.then(|| Tensor::zeros([n, c, h, w]));
        for i in 0..n {
            let g = gy.sample(i);
            im2col(g, (self.out_ch, oh, ow), self.geom, (h, w), &mut cols);
            F::gemm(
                self.in_ch, p, kk,
                F::one(), x.sample(i), (p as isize, 1),
                &cols, (1, p as isize),
                F::one(), &mut grads.weight, (kk as isize, 1),
            );
            for (o, chunk) in g.chunks(oh * ow).enumerate() {
                grads.bias[o] += chunk.iter().copied().sum::<F>();
            }
            if let Some(gx) = gx.as_mut() {
                F::gemm(
                    self.in_ch, kk, p,
                    F::one(), &self.weight, (kk as isize, 1),
                    &cols, (p as isize, 1),
                    F::zero(), gx.sample_mut(i), (p as isize, 1),
                );
            }
        }
        gx
    }
}

/// Bilinear resize to a fixed output size, half-pixel centres, edge clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearResize {
    rows: Vec<(usize, usize, f64, f64)>,
    cols: Vec<(usize, usize, f64, f64)>,
    in_hw: (usize, usize),
}

fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

impl BilinearResize {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        Self { rows: axis_taps(in_hw.0, out_hw.0), cols: axis_taps(in_hw.1, out_hw.1), in_hw }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn forward<F: Real>(&self, x: &Tensor<F>) -> Tensor<F> {
        let [n, c, h, w] = x.shape();
        assert_eq!((h, w), self.in_hw, "resize built for a different input size");
        let (oh, ow) = self.out_hw();
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let taps: Vec<_> = self.cols.iter().map(|&(a, b, wa, wb)| (a, b, F::lit(wa), F::lit(wb))).collect();
        for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
            for (oy, &(r0, r1, wr0, wr1)) in self.rows.iter().enumerate() {
                let (wr0, wr1) = (F::lit(wr0), F::lit(wr1));
                let line0 = &src[r0 * w..(r0 + 1) * w];
                let line1 = &src[r1 * w..(r1 + 1) * w];
                for (ox, &(c0, c1, wc0, wc1)) in taps.iter().enumerate() {
                    dst[oy * ow + ox] = wr0 * (wc0 * line0[c0] + wc1 * line0[c1])
                        + wr1 * (wc0 * line1[c0] + wc1 * line1[c1]);
                }
            }
        }
        y
    }

    pub fn backward<F: Real>(&self, gy: &Tensor<F>) -> Tensor<F> {
        let [n, c, oh, ow] = gy.shape();
        let (h, w) = self.in_hw;
        let mut gx = Tensor::zeros([n, c, h, w]);
        let taps: Vec<_> = self.cols.iter().map(|&(a, b, wa, wb)| (a, b, F::lit(wa), F::lit(wb))).collect();
        for (g, dst) in gy.data().chunks(oh * ow).zip(gx.data_mut().chunks_mut(h * w)) {
            for (oy, &(r0, r1, wr0, wr1)) in self.rows.iter().enumerate() {
                let (wr0, wr1) = (F::lit(wr0), F::lit(wr1));
                for (ox, &(c0, c1, wc0, wc1)) in taps.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    dst[r0 * w + c0] += wr0 * wc0 * v;
                    dst[r0 * w + c1] += wr0 * wc1 * v;
                    dst[r1 * w + c0] += wr1 * wc0 * v;
                    dst[r1 * w + c1] += wr1 * wc1 * v;
                }
            }
        }
        gx
    }
}

pub fn relu_inplace<F: Real>(t: &mut Tensor<F>) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(F::zero()));
}

/// Zero gradient entries where the rectified output is not positive.
pub fn relu_backward_inplace<F: Real>(out: &Tensor<F>, g: &mut Tensor<F>) {
    for (gv, o) in g.data_mut().iter_mut().zip(out.data()) {
        if *o <= F::zero() {
            *gv = F::zero();
        }
    }
}

pub fn leaky_relu<F: Real>(pre: &Tensor<F>, slope: F) -> Tensor<F> {
    let mut t = pre.clone();
    t.data_mut().iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = *v * slope;
        }
    });
    t
}

/// Multiply `g` by the leaky-ReLU derivative evaluated at pre-activation `pre`.
pub fn leaky_relu_backward_inplace<F: Real>(pre: &Tensor<F>, g: &mut Tensor<F>, slope: F) {
    for (gv, p) in g.data_mut().iter_mut().zip(pre.data()) {
        if *p < F::zero() {
            *gv = *gv * slope;
        }
    }
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels<F: Real>(t: &mut Tensor<F>) {
    let [n, c, h, w] = t.shape();
    let plane = h * w;
    for i in 0..n {
        let s = t.sample_mut(i);
        for px in 0..plane {
            let mut max = F::neg_infinity();
            for ch in 0..c {
                max = max.max(s[ch * plane + px]);
            }
            let mut sum = F::zero();
            for ch in 0..c {
                let e = (s[ch * plane + px] - max).exp();
                s[ch * plane + px] = e;
                sum += e;
            }
            for ch in 0..c {
                s[ch * plane + px] = s[ch * plane + px] / sum;
            }
        }
    }
}

/// Gradient w.r.t. logits given softmax output `y` and output gradient `g` (in place).
pub fn softmax_backward_inplace<F: Real>(y: &Tensor<F>, g: &mut Tensor<F>) {
    let [n, c, h, w] = y.shape();
    let plane = h * w;
    for i in 0..n {
        let ys = y.sample(i);
        let gs = g.sample_mut(i);
        for px in 0..plane {
            let dot: F = (0..c).map(|ch| ys[ch * plane + px] * gs[ch * plane + px]).sum();
            for ch in 0..c {
                let k = ch * plane + px;
                gs[k] = ys[k] * (gs[k] - dot);
            }
        }
    }
}

pub fn sigmoid_inplace<F: Real>(t: &mut Tensor<F>) {
    t.data_mut().iter_mut().for_each(|v| *v = F::one() / (F::one() + (-*v).exp()));
}

pub fn sigmoid_backward_inplace<F: Real>(y: &Tensor<F>, g: &mut Tensor<F>) {
    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv = *gv * *yv * (F::one() - *yv);
    }
}
