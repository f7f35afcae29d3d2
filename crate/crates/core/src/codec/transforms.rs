//! Strided convolution stacks of the analysis and synthesis transforms.

use super::gdn::{GdnLayer, GdnMode};
use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{conv2d, conv_transpose2d, Real, Tensor, TensorResult};

/// Downsampling stride of every layer.
pub const STRIDE: usize = 2;
/// Zero padding of every layer; with `k = 3` each layer halves the extent exactly.
pub const PAD: usize = 1;
/// Output padding of the transposed layers; each doubles the extent exactly.
pub const OUTPUT_PAD: usize = 1;

/// Glorot-uniform weights, zero bias.
fn glorot<T: Real>(shape: &[usize; 4], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.uniform_in(-bound, bound))).collect();
    Tensor::parameter(shape, data).unwrap()
}

#[derive(Clone, Debug)]
pub struct ConvLayer<T: Real = f64> {
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot(&[cout, cin, k, k], cin * k * k, cout * k * k, rng),
            bias: Tensor::parameter(&[cout], vec![T::zero(); cout]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        conv2d(x, &self.weight, Some(&self.bias), STRIDE, PAD)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTransposeLayer<T: Real = f64> {
    /// `[in, out, k, k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvTransposeLayer<T> {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot(&[cin, cout, k, k], cout * k * k, cin * k * k, rng),
            bias: Tensor::parameter(&[cout], vec![T::zero(); cout]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        conv_transpose2d(x, &self.weight, Some(&self.bias), STRIDE, PAD, OUTPUT_PAD)
    }
}

/// `g_a`: conv -> GDN -> ... -> conv, each conv halving the spatial extent.
#[derive(Clone, Debug)]
pub struct AnalysisTransform<T: Real = f64> {
    pub convs: Vec<ConvLayer<T>>,
    pub gdns: Vec<GdnLayer<T>>,
    pub patch_size: usize,
}

/// `g_s`: transposed conv -> IGDN -> ... -> transposed conv, no output activation.
#[derive(Clone, Debug)]
pub struct SynthesisTransform<T: Real = f64> {
    pub convs: Vec<ConvTransposeLayer<T>>,
    pub igdns: Vec<GdnLayer<T>>,
    pub latent_extent: usize,
}

impl<T: Real> AnalysisTransform<T> {
    /// Channel plan `1 -> hidden -> ... -> hidden -> latent` over `layers` convolutions.
    pub fn new(layers: usize, hidden: usize, latent: usize, k: usize, patch_size: usize, rng: &mut Rng) -> Self {
        let mut convs = Vec::with_capacity(layers);
        let mut gdns = Vec::with_capacity(layers - 1);
        for i in 0..layers {
            let cin = if i == 0 { 1 } else { hidden };
            let cout = if i + 1 == layers { latent } else { hidden };
            convs.push(ConvLayer::new(cin, cout, k, rng));
            if i + 1 < layers {
                gdns.push(GdnLayer::new(cout, GdnMode::Forward));
            }
        }
        Self { convs, gdns, patch_size }
    }

    /// `[B, 1, P, P]` patches to `[B, latent, P/2^L, P/2^L]` codes.
    pub fn forward(&self, y: &Tensor<T>) -> TensorResult<Tensor<T>> {
        match *y.shape() {
            [_, 1, h, w] if h == self.patch_size && w == self.patch_size => {}
            _ => {
                return Err(TensorError::geometry(
                    "analyze",
                    format!("expected [B, 1, {p}, {p}] patches, got {:?}", y.shape(), p = self.patch_size),
                ))
            }
        }
        let mut h = self.convs[0].forward(y)?;
        for (conv, gdn) in self.convs[1..].iter().zip(&self.gdns) {
            h = conv.forward(&gdn.forward(&h)?)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("analysis.conv{i}.weight"), &c.weight));
            out.push((format!("analysis.conv{i}.bias"), &c.bias));
            if let Some(g) = self.gdns.get(i) {
                out.push((format!("analysis.gdn{i}.beta"), &g.beta));
                out.push((format!("analysis.gdn{i}.gamma"), &g.gamma));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let mut gdns = self.gdns.iter_mut();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("analysis.conv{i}.weight"), &mut c.weight));
            out.push((format!("analysis.conv{i}.bias"), &mut c.bias));
            if let Some(g) = gdns.next() {
                out.push((format!("analysis.gdn{i}.beta"), &mut g.beta));
                out.push((format!("analysis.gdn{i}.gamma"), &mut g.gamma));
            }
        }
        out
    }
}

impl<T: Real> SynthesisTransform<T> {
    /// Mirror of [`AnalysisTransform::new`]: `latent -> hidden -> ... -> hidden -> 1`.
    pub fn new(layers: usize, hidden: usize, latent: usize, k: usize, latent_extent: usize, rng: &mut Rng) -> Self {
        let mut convs = Vec::with_capacity(layers);
        let mut igdns = Vec::with_capacity(layers - 1);
        for i in 0..layers {
            let cin = if i == 0 { latent } else { hidden };
            let cout = if i + 1 == layers { 1 } else { hidden };
            convs.push(ConvTransposeLayer::new(cin, cout, k, rng));
            if i + 1 < layers {
                igdns.push(GdnLayer::new(cout, GdnMode::Inverse));
            }
        }
        Self { convs, igdns, latent_extent }
    }

    /// `[B, latent, e, e]` codes to `[B, 1, e*2^L, e*2^L]` patches.
    pub fn forward(&self, c_hat: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let latent = self.convs[0].weight.shape()[0];
        let e = self.latent_extent;
        match *c_hat.shape() {
            [_, c, h, w] if c == latent && h == e && w == e => {}
            _ => {
                return Err(TensorError::geometry(
                    "synthesize",
                    format!("expected [B, {latent}, {e}, {e}] codes, got {:?}", c_hat.shape()),
                ))
            }
        }
        let mut h = self.convs[0].forward(c_hat)?;
        for (conv, igdn) in self.convs[1..].iter().zip(&self.igdns) {
            h = conv.forward(&igdn.forward(&h)?)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("synthesis.conv{i}.weight"), &c.weight));
            out.push((format!("synthesis.conv{i}.bias"), &c.bias));
            if let Some(g) = self.igdns.get(i) {
                out.push((format!("synthesis.igdn{i}.beta"), &g.beta));
                out.push((format!("synthesis.igdn{i}.gamma"), &g.gamma));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let mut igdns = self.igdns.iter_mut();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("synthesis.conv{i}.weight"), &mut c.weight));
            out.push((format!("synthesis.conv{i}.bias"), &mut c.bias));
            if let Some(g) = igdns.next() {
                out.push((format!("synthesis.igdn{i}.beta"), &mut g.beta));
                out.push((format!("synthesis.igdn{i}.gamma"), &mut g.gamma));
            }
        }
        out
    }
}
