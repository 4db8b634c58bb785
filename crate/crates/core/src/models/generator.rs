use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::seed::{output_extent, SeedTensor, MIN_SEED};
use crate::models::ArchConfig;
use crate::nn::{
    relu_backward_inplace, relu_inplace, sigmoid_backward_inplace, sigmoid_inplace, softmax_backward_inplace,
    softmax_channels, BilinearResize, Conv2d, ConvGeom, ConvTranspose2d, LayerGrads, Real, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Per-pixel softmax over phase channels.
    Softmax,
    /// Elementwise sigmoid for grayscale and colour.
    Sigmoid,
}

const UP_GEOM: ConvGeom = ConvGeom::new(4, 2, 2);
const SAME_GEOM: ConvGeom = ConvGeom::new(3, 1, 1);

/// Upsample target for an `n` pixel feature map. Together with the two
/// transpose convolutions this gives an output of `8 s - 16` for seed `s`.
pub const fn upsample_target(n: usize) -> usize {
    2 * n - 4
}

/// Two transpose convolutions, a convolution with bilinear upsampling and a
/// final convolution to the image channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<F> {
    pub latent_depth: usize,
    pub out_channels: usize,
    pub activation: OutputActivation,
    pub up1: ConvTranspose2d<F>,
    pub up2: ConvTranspose2d<F>,
    pub mid: Conv2d<F>,
    pub head: Conv2d<F>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GenTrace<F> {
    seed: Tensor<F>,
    h1: Tensor<F>,
    h2: Tensor<F>,
    h3: Tensor<F>,
    up: Tensor<F>,
    resize: BilinearResize,
    pub output: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct GeneratorGrads<F> {
    pub layers: [LayerGrads<F>; 4],
}

impl<F: Real> GeneratorNet<F> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, out_channels: usize, activation: OutputActivation, rng: &mut R) -> Self {
        let [c1, c2, c3] = arch.gen_channels;
        let std = arch.init_std;
        Self {
            latent_depth: arch.latent_depth,
            out_channels,
            activation,
            up1: ConvTranspose2d::new(arch.latent_depth, c1, UP_GEOM, std, rng),
            up2: ConvTranspose2d::new(c1, c2, UP_GEOM, std, rng),
            mid: Conv2d::new(c2, c3, SAME_GEOM, std, rng),
            head: Conv2d::new(c3, out_channels, SAME_GEOM, std, rng),
        }
    }

    pub fn output_size(s_x: usize, s_y: usize) -> (usize, usize) {
        (output_extent(s_x), output_extent(s_y))
    }

    fn check_seed(&self, z: &Tensor<F>) -> Result<()> {
        let [_, d, sy, sx] = z.shape();
        if d != self.latent_depth {
            return Err(Error::Shape(format!("seed depth {d}, generator expects {}", self.latent_depth)));
        }
        if sx < MIN_SEED || sy < MIN_SEED {
            return Err(Error::Shape(format!("seed {sx}x{sy} below minimum {MIN_SEED}x{MIN_SEED}")));
        }
        Ok(())
    }

    pub fn forward(&self, z: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward_trace(z)?.output)
    }

    pub fn forward_seed(&self, z: &SeedTensor) -> Result<Tensor<F>> {
        self.forward(&z.to_tensor())
    }

    pub fn forward_trace(&self, z: &Tensor<F>) -> Result<GenTrace<F>> {
        self.check_seed(z)?;
        let mut h1 = self.up1.forward(z)?;
        relu_inplace(&mut h1);
        let mut h2 = self.up2.forward(&h1)?;
        relu_inplace(&mut h2);
        let mut h3 = self.mid.forward(&h2)?;
        relu_inplace(&mut h3);
        let (h, w) = (h3.height(), h3.width());
        let resize = BilinearResize::new((h, w), (upsample_target(h), upsample_target(w)));
        let up = resize.forward(&h3);
        let mut output = self.head.forward(&up)?;
        match self.activation {
            OutputActivation::Softmax => softmax_channels(&mut output),
            OutputActivation::Sigmoid => sigmoid_inplace(&mut output),
        }
        Ok(GenTrace { seed: z.clone(), h1, h2, h3, up, resize, output })
    }

    pub fn zero_grads(&self) -> GeneratorGrads<F> {
        GeneratorGrads {
            layers: [
                LayerGrads::zeros(self.up1.weight.len(), self.up1.bias.len()),
                LayerGrads::zeros(self.up2.weight.len(), self.up2.bias.len()),
                LayerGrads::zeros(self.mid.weight.len(), self.mid.bias.len()),
                LayerGrads::zeros(self.head.weight.len(), self.head.bias.len()),
            ],
        }
    }

    /// Backpropagate `g_out` (gradient w.r.t. the activated output).
    ///
    /// Parameter gradients accumulate into `grads` when given; the seed
    /// gradient is returned when `want_seed` is set.
    pub fn backward(
        &self,
        trace: &GenTrace<F>,
        g_out: &Tensor<F>,
        grads: Option<&mut GeneratorGrads<F>>,
        want_seed: bool,
    ) -> Option<Tensor<F>> {
        assert_eq!(g_out.shape(), trace.output.shape(), "output gradient shape");
        let mut scratch;
        let grads = match grads {
            Some(g) => g,
            None => {
                scratch = self.zero_grads();
                &mut scratch
            }
        };
        let [g_up1, g_up2, g_mid, g_head] = &mut grads.layers;
        let mut g = g_out.clone();
        match self.activation {
            OutputActivation::Softmax => softmax_backward_inplace(&trace.output, &mut g),
            OutputActivation::Sigmoid => sigmoid_backward_inplace(&trace.output, &mut g),
        }
        let g = self.head.backward(&trace.up, &g, g_head, true).expect("input grad");
        let mut g = trace.resize.backward(&g);
        relu_backward_inplace(&trace.h3, &mut g);
        let mut g = self.mid.backward(&trace.h2, &g, g_mid, true).expect("input grad");
        relu_backward_inplace(&trace.h2, &mut g);
        let mut g = self.up2.backward(&trace.h1, &g, g_up2, true).expect("input grad");
        relu_backward_inplace(&trace.h1, &mut g);
        self.up1.backward(&trace.seed, &g, g_up1, want_seed)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            &mut self.up1.weight, &mut self.up1.bias,
            &mut self.up2.weight, &mut self.up2.bias,
            &mut self.mid.weight, &mut self.mid.bias,
            &mut self.head.weight, &mut self.head.bias,
        ]
    }

    pub fn params(&self) -> Vec<&[F]> {
        vec![
            &self.up1.weight, &self.up1.bias,
            &self.up2.weight, &self.up2.bias,
            &self.mid.weight, &self.mid.bias,
            &self.head.weight, &self.head.bias,
        ]
    }

    pub fn param_names() -> [&'static str; 8] {
        [
            "gen.up1.weight", "gen.up1.bias",
            "gen.up2.weight", "gen.up2.bias",
            "gen.mid.weight", "gen.mid.bias",
            "gen.head.weight", "gen.head.bias",
        ]
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn cast<G: Real>(&self) -> GeneratorNet<G> {
        GeneratorNet {
            latent_depth: self.latent_depth,
            out_channels: self.out_channels,
            activation: self.activation,
            up1: self.up1.cast(),
            up2: self.up2.cast(),
            mid: self.mid.cast(),
            head: self.head.cast(),
        }
    }
}

impl<F: Real> GeneratorGrads<F> {
    pub fn as_slices(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn scale(&mut self, k: F) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = *v * k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> ArchConfig {
        ArchConfig { latent_depth: 3, gen_channels: [4, 3, 2], critic_channels: vec![2], init_std: 0.3 }
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let tol = 1e-6 * (1.0 + analytic.abs().max(numeric.abs()));
        assert!((analytic - numeric).abs() <= tol, "{what}: analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn output_is_eight_s_minus_sixteen() {
        let g = GeneratorNet::<f32>::new(&arch(), 1, OutputActivation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (sx, sy) in [(10, 10), (11, 14), (16, 12)] {
            let out = g.forward_seed(&SeedTensor::sample(3, sx, sy, &mut rng)).unwrap();
            assert_eq!((out.width(), out.height()), (8 * sx - 16, 8 * sy - 16));
            assert_eq!(GeneratorNet::<f32>::output_size(sx, sy), (8 * sx - 16, 8 * sy - 16));
        }
        assert!(g.forward_seed(&SeedTensor::sample(3, 9, 10, &mut rng)).is_err());
        assert!(g.forward_seed(&SeedTensor::sample(4, 10, 10, &mut rng)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (act, ch) in [(OutputActivation::Softmax, 3), (OutputActivation::Sigmoid, 1)] {
            let mut g = GeneratorNet::<f64>::new(&arch(), ch, act, &mut rng);
            for p in g.params_mut() {
                p.iter_mut().for_each(|v| *v += 0.05 * (rng.random::<f64>() - 0.5));
            }
            let z = random([1, 3, 10, 11], &mut rng);
            let trace = g.forward_trace(&z).unwrap();
            let r = random(trace.output.shape(), &mut rng);
            let mut grads = g.zero_grads();
            let gz = g.backward(&trace, &r, Some(&mut grads), true).unwrap();
            let h = 1e-6;
            let loss = |g: &GeneratorNet<f64>, z: &Tensor<f64>| dot(&g.forward(z).unwrap(), &r);

            let mut zp = z.clone();
            for i in (0..z.data().len()).step_by(7) {
                zp.data_mut()[i] = z.data()[i] + h;
                let up = loss(&g, &zp);
                zp.data_mut()[i] = z.data()[i] - h;
                let down = loss(&g, &zp);
                zp.data_mut()[i] = z.data()[i];
                assert_close(gz.data()[i], (up - down) / (2.0 * h), &format!("seed {i}"));
            }
            let analytic: Vec<Vec<f64>> = grads.as_slices().iter().map(|s| s.to_vec()).collect();
            for (k, name) in GeneratorNet::<f64>::param_names().iter().enumerate() {
                let len = analytic[k].len();
                for i in (0..len).step_by((len / 12).max(1)) {
                    let old = g.params()[k][i];
                    g.params_mut()[k][i] = old + h;
                    let up = loss(&g, &z);
                    g.params_mut()[k][i] = old - h;
                    let down = loss(&g, &z);
                    g.params_mut()[k][i] = old;
                    assert_close(analytic[k][i], (up - down) / (2.0 * h), &format!("{name}[{i}]"));
                }
            }
        }
    }
}
