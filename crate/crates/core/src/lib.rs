//! Inpainting of occluded regions in single micrographs with adversarially
//! trained generators.

pub mod cli;
pub mod error;
pub mod image;
pub mod inpaint;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod service;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
