//! Minimal tensor and layer kernels for the generator and critic.

mod adam;
mod layers;
mod real;
mod tensor;

pub use adam::Adam;
pub use layers::{
    leaky_relu, leaky_relu_backward_inplace, relu_backward_inplace, relu_inplace, sigmoid_backward_inplace,
    sigmoid_inplace, softmax_backward_inplace, softmax_channels, BilinearResize, Conv2d, ConvGeom,
    ConvTranspose2d, LayerGrads,
};
pub use real::Real;
pub use tensor::Tensor;
