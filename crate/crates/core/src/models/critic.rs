use rand::Rng;

use crate::error::{Error, Result};
use crate::models::ArchConfig;
use crate::nn::{leaky_relu, leaky_relu_backward_inplace, Conv2d, ConvGeom, LayerGrads, Real, Tensor};

const DOWN_GEOM: ConvGeom = ConvGeom::new(4, 2, 1);

/// Stack of strided convolutions with leaky ReLU between them. The score of
/// a sample is the spatial mean of the final single-channel map.
///
/// No normalisation layers: the gradient penalty needs per-sample input
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet<F> {
    pub in_channels: usize,
    pub input_size: usize,
    pub slope: f64,
    pub convs: Vec<Conv2d<F>>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Clone, Debug)]
pub struct CriticTrace<F> {
    inputs: Vec<Tensor<F>>,
    pre: Vec<Tensor<F>>,
    pub scores: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct CriticGrads<F> {
    pub layers: Vec<LayerGrads<F>>,
}

impl<F: Real> CriticGrads<F> {
    pub fn as_slices(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }
}

impl<F: Real> CriticNet<F> {
    /// Default critic: `in -> widths... -> 1`, kernel 4, stride 2, padding 1.
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, in_channels: usize, rng: &mut R) -> Self {
        Self::with_layers(in_channels, &arch.critic_channels, DOWN_GEOM, 64, arch.init_std, rng)
    }

    pub fn with_layers<R: Rng + ?Sized>(
        in_channels: usize,
        widths: &[usize],
        geom: ConvGeom,
        input_size: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(widths.len() + 1);
        let mut prev = in_channels;
        for &w in widths.iter().chain(std::iter::once(&1)) {
            convs.push(Conv2d::new(prev, w, geom, std, rng));
            prev = w;
        }
        Self { in_channels, input_size, slope: 0.2, convs }
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != self.in_channels || h != self.input_size || w != self.input_size {
            return Err(Error::Shape(format!(
                "critic expects {}x{s}x{s} input, got {c}x{h}x{w}",
                self.in_channels,
                s = self.input_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<F>> {
        Ok(self.forward_trace(x)?.scores)
    }

    pub fn forward_trace(&self, x: &Tensor<F>) -> Result<CriticTrace<F>> {
        self.check_input(x)?;
        let slope = F::lit(self.slope);
        let last = self.convs.len() - 1;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut a = x.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(&a)?;
            let next = if l < last { leaky_relu(&z, slope) } else { z.clone() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        let plane = F::lit(a.plane() as f64);
        let scores = (0..a.batch()).map(|n| a.sample(n).iter().copied().sum::<F>() / plane).collect();
        Ok(CriticTrace { inputs, pre, scores })
    }

    pub fn zero_grads(&self) -> CriticGrads<F> {
        CriticGrads {
            layers: self.convs.iter().map(|c| LayerGrads::zeros(c.weight.len(), c.bias.len())).collect(),
        }
    }

    /// Backpropagate per-sample score gradients. Returns the input gradient
    /// (when `want_input`) and the gradient w.r.t. every layer's
    /// pre-activation.
    pub fn backward(
        &self,
        trace: &CriticTrace<F>,
        g_scores: &[F],
        mut grads: Option<&mut CriticGrads<F>>,
        want_input: bool,
    ) -> (Option<Tensor<F>>, Vec<Tensor<F>>) {
        let slope = F::lit(self.slope);
        let last = self.convs.len() - 1;
        let out_shape = trace.pre[last].shape();
        assert_eq!(g_scores.len(), out_shape[0]);
        let plane = F::lit((out_shape[2] * out_shape[3]) as f64);
        let mut g = Tensor::zeros(out_shape);
        for (n, gs) in g_scores.iter().enumerate() {
            g.sample_mut(n).fill(*gs / plane);
        }
        let mut deltas = vec![Tensor::zeros([0, 0, 0, 0]); self.convs.len()];
        let mut gx = None;
        for l in (0..self.convs.len()).rev() {
            let conv = &self.convs[l];
            let x = &trace.inputs[l];
            let need_input = l > 0 || want_input;
            let g_in = match grads.as_deref_mut() {
                Some(gr) => conv.backward(x, &g, &mut gr.layers[l], need_input),
                None => need_input.then(|| conv.backward_input((x.height(), x.width()), &g)),
            };
            deltas[l] = std::mem::replace(&mut g, Tensor::zeros([0, 0, 0, 0]));
            match g_in {
                Some(mut gi) if l > 0 => {
                    leaky_relu_backward_inplace(&trace.pre[l - 1], &mut gi, slope);
                    g = gi;
                }
                other => gx = other,
            }
        }
        (gx, deltas)
    }

    /// Input gradient of each sample's score.
    pub fn input_gradient(&self, x: &Tensor<F>) -> Result<(Vec<F>, Tensor<F>)> {
        let trace = self.forward_trace(x)?;
        let ones = vec![F::one(); x.batch()];
        let (gx, _) = self.backward(&trace, &ones, None, true);
        Ok((trace.scores, gx.expect("input gradient requested")))
    }

    /// Gradient penalty `weight * mean_n (|grad_x D(x_n)| - 1)^2` at the given
    /// interpolates, accumulating its parameter gradient into `grads`.
    ///
    /// The penalty is a function of the input gradient, so its parameter
    /// gradient is a second derivative. With piecewise-linear activations the
    /// masks are locally constant, and for `v = dP/dg` the quantity
    /// `<v, grad_x D>` equals the directional derivative of `D` along `v`.
    /// Its weight gradient at layer `l` is the outer product of the tangent
    /// propagated forward to layer `l` with the score gradient at layer `l`.
    /// Biases receive no contribution.
    pub fn gradient_penalty(&self, x_hat: &Tensor<F>, weight: f64, grads: Option<&mut CriticGrads<F>>) -> Result<F> {
        let trace = self.forward_trace(x_hat)?;
        let n = x_hat.batch();
        let ones = vec![F::one(); n];
        let (gx, deltas) = self.backward(&trace, &ones, None, true);
        let gx = gx.expect("input gradient requested");
        let w = F::lit(weight);
        let nf = F::lit(n as f64);
        let mut penalty = F::zero();
        let mut tangent = Tensor::zeros(gx.shape());
        for i in 0..n {
            let g = gx.sample(i);
            let norm = g.iter().map(|v| *v * *v).sum::<F>().sqrt();
            penalty += (norm - F::one()).powi(2);
            if norm > F::zero() {
                let k = F::lit(2.0) * w * (norm - F::one()) / (norm * nf);
                for (t, gv) in tangent.sample_mut(i).iter_mut().zip(g) {
                    *t = k * *gv;
                }
            }
        }
        let penalty = w * penalty / nf;
        if let Some(grads) = grads {
            let slope = F::lit(self.slope);
            let last = self.convs.len() - 1;
            for (l, conv) in self.convs.iter().enumerate() {
                conv.weight_grad(&tangent, &deltas[l], &mut grads.layers[l].weight);
                if l < last {
                    let mut next = conv.forward_linear(&tangent)?;
                    leaky_relu_backward_inplace(&trace.pre[l], &mut next, slope);
                    tangent = next;
                }
            }
        }
        Ok(penalty)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.convs
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[F]> {
        self.convs.iter().flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()]).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    /// Clamp every weight and bias to `[-c, c]`.
    pub fn clip(&mut self, c: f64) {
        let c = F::lit(c);
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = v.max(-c).min(c));
        }
    }

    pub fn cast<G: Real>(&self) -> CriticNet<G> {
        CriticNet {
            in_channels: self.in_channels,
            input_size: self.input_size,
            slope: self.slope,
            convs: self.convs.iter().map(Conv2d::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(rng: &mut ChaCha8Rng) -> CriticNet<f64> {
        let mut d = CriticNet::<f64>::with_layers(2, &[3, 4], DOWN_GEOM, 16, 0.4, rng);
        for c in &mut d.convs {
            c.bias.iter_mut().for_each(|b| *b = 0.1 * (rng.random::<f64>() - 0.5));
        }
        d
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
        let t = tol * (1.0 + analytic.abs().max(numeric.abs()));
        assert!((analytic - numeric).abs() <= t, "{what}: analytic {analytic} numeric {numeric}");
    }

    /// Central difference of `f` over every `stride`-th parameter.
    fn check_params(d: &CriticNet<f64>, analytic: &[Vec<f64>], tol: f64, f: &dyn Fn(&CriticNet<f64>) -> f64) {
        let h = 1e-6;
        let mut d = d.clone();
        for (k, a) in analytic.iter().enumerate() {
            for i in (0..a.len()).step_by((a.len() / 10).max(1)) {
                let old = d.params()[k][i];
                d.params_mut()[k][i] = old + h;
                let up = f(&d);
                d.params_mut()[k][i] = old - h;
                let down = f(&d);
                d.params_mut()[k][i] = old;
                assert_close(a[i], (up - down) / (2.0 * h), tol, &format!("param {k}[{i}]"));
            }
        }
    }

    #[test]
    fn default_critic_maps_64_to_one_score() {
        let arch = ArchConfig { latent_depth: 4, gen_channels: [2, 2, 2], critic_channels: vec![2, 2, 2, 2], init_std: 0.02 };
        let d = CriticNet::<f32>::new(&arch, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(d.convs.len(), 5);
        let trace = d.forward_trace(&Tensor::zeros([2, 3, 64, 64])).unwrap();
        assert_eq!(trace.pre[4].shape(), [2, 1, 2, 2]);
        assert_eq!(trace.scores.len(), 2);
        assert!(d.forward(&Tensor::zeros([1, 3, 32, 32])).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = small(&mut rng);
        let x = random([2, 2, 16, 16], &mut rng);
        let (_, gx) = d.input_gradient(&x).unwrap();
        let h = 1e-6;
        let mut xp = x.clone();
        for i in (0..x.data().len()).step_by(11) {
            let n = i / x.sample_len();
            xp.data_mut()[i] = x.data()[i] + h;
            let up = d.forward(&xp).unwrap()[n];
            xp.data_mut()[i] = x.data()[i] - h;
            let down = d.forward(&xp).unwrap()[n];
            xp.data_mut()[i] = x.data()[i];
            assert_close(gx.data()[i], (up - down) / (2.0 * h), 1e-6, &format!("input {i}"));
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = small(&mut rng);
        let x = random([3, 2, 16, 16], &mut rng);
        let weights = [0.5, -1.0, 2.0];
        let trace = d.forward_trace(&x).unwrap();
        let mut grads = d.zero_grads();
        d.backward(&trace, &weights, Some(&mut grads), false);
        let analytic: Vec<Vec<f64>> = grads.as_slices().iter().map(|s| s.to_vec()).collect();
        check_params(&d, &analytic, 1e-6, &|d| {
            d.forward(&x).unwrap().iter().zip(&weights).map(|(s, w)| s * w).sum()
        });
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = small(&mut rng);
        let x = random([2, 2, 16, 16], &mut rng);
        let mut grads = d.zero_grads();
        let p = d.gradient_penalty(&x, 10.0, Some(&mut grads)).unwrap();
        assert!(p > 0.0);
        // the penalty depends on weights only
        assert!(grads.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        let analytic: Vec<Vec<f64>> = grads.as_slices().iter().map(|s| s.to_vec()).collect();
        check_params(&d, &analytic, 1e-5, &|d| d.gradient_penalty(&x, 10.0, None).unwrap());
    }

    #[test]
    fn clip_bounds_every_parameter() {
        let mut d = small(&mut ChaCha8Rng::seed_from_u64(4));
        d.clip(0.01);
        assert!(d.params().iter().all(|p| p.iter().all(|v| v.abs() <= 0.01)));
    }
}
