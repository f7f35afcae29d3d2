//! Image denoising with a learned lossy compression code.
//!
//! A convolutional autoencoder with a quantized bottleneck and a factorized
//! entropy prior is trained on patches of noisy images under a
//! rate-distortion objective. Because the bottleneck can only afford to
//! describe structure, reconstructing every overlapping patch of a noisy
//! image and averaging the reconstructions removes much of the noise.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense tensors, strided (transposed) convolution, reverse-mode gradients.
//! - [`codec`]: analysis/synthesis transforms with GDN activations.
//! - [`entropy`]: quantization surrogate, factorized prior, rate in bits per pixel.
//! - [`train`]: patch datasets, rate-distortion loss, Adam, checkpoints.
//! - [`denoise`]: noise synthesis, overlap-averaged denoising, PSNR and reports.
//! - [`sweep`]: one codec per λ, rate and PSNR per operating point.
//! - [`wavelet`]: Haar + BayesShrink reference denoiser.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod denoise;
pub mod entropy;
pub mod error;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result, TensorError};
pub use codec::{CodecArch, NeuralCodec};
pub use entropy::{FactorizedPrior, QuantizerMode};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
