//! The learned compression code: analysis transform, synthesis transform
//! and factorized prior, bundled as a [`NeuralCodec`].

mod gdn;
mod transforms;

pub use gdn::{gdn_forward, GdnLayer, GdnMode, BETA_FLOOR, NORM_GUARD};
pub use transforms::{
    AnalysisTransform, ConvLayer, ConvTransposeLayer, SynthesisTransform, OUTPUT_PAD, PAD, STRIDE,
};

use crate::entropy::{quantize, FactorizedPrior, QuantizerMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor, TensorResult};

/// Architecture hyperparameters of a [`NeuralCodec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecArch {
    pub patch_size: usize,
    pub hidden_channels: usize,
    pub latent_channels: usize,
    /// Convolutions per transform.
    pub layers: usize,
    pub kernel: usize,
    /// Hidden widths of each per-channel prior network.
    pub prior_hidden: Vec<usize>,
}

impl Default for CodecArch {
    /// Three stride-2 `3x3` layers, 256 hidden channels, 16 latent channels, 16x16 patches.
    fn default() -> Self {
        Self { patch_size: 16, hidden_channels: 256, latent_channels: 16, layers: 3, kernel: 3, prior_hidden: vec![3, 3, 3] }
    }
}

impl CodecArch {
    /// Reduced-width variant of the default stack (same depth, patch size and latent).
    pub fn narrow(hidden_channels: usize) -> Self {
        Self { hidden_channels, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let reduce = 1usize.checked_shl(self.layers as u32).unwrap_or(0);
        if self.layers == 0 || reduce == 0 || self.patch_size % reduce != 0 || self.patch_size < reduce {
            return Err(Error::Architecture(format!(
                "patch size {} is not a positive multiple of 2^{}",
                self.patch_size, self.layers
            )));
        }
        if self.kernel != 3 {
            return Err(Error::Architecture(format!("kernel {} unsupported; stride-2 layers need k = 3", self.kernel)));
        }
        if self.hidden_channels == 0 || self.latent_channels == 0 {
            return Err(Error::Architecture("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_extent(&self) -> usize {
        self.patch_size >> self.layers
    }

    pub fn pixels_per_patch(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Latent elements per patch.
    pub fn latent_dim(&self) -> usize {
        self.latent_channels * self.latent_extent() * self.latent_extent()
    }
}

/// Trained (or trainable) compression code.
///
/// Pixel intensities enter and leave on the `[0, intensity_scale]` scale;
/// the transforms themselves see `y / intensity_scale`.
#[derive(Clone, Debug)]
pub struct NeuralCodec<T: Real = f64> {
    pub arch: CodecArch,
    pub intensity_scale: f64,
    pub analysis: AnalysisTransform<T>,
    pub synthesis: SynthesisTransform<T>,
    pub prior: FactorizedPrior<T>,
}

/// Eval-mode reconstruction of a patch batch.
#[derive(Clone, Debug)]
pub struct Reconstruction<T: Real> {
    /// `[B, 1, P, P]` on the intensity scale.
    pub patches: Tensor<T>,
    /// Code length of each patch in bits.
    pub bits: Vec<f64>,
}

impl<T: Real> NeuralCodec<T> {
    pub fn new(arch: CodecArch, intensity_scale: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(intensity_scale > 0.0) {
            return Err(Error::Config(format!("intensity scale {intensity_scale} must be positive")));
        }
        let root = Rng::new(seed);
        let analysis = AnalysisTransform::new(
            arch.layers,
            arch.hidden_channels,
            arch.latent_channels,
            arch.kernel,
            arch.patch_size,
            &mut root.fork(1),
        );
        let synthesis = SynthesisTransform::new(
            arch.layers,
            arch.hidden_channels,
            arch.latent_channels,
            arch.kernel,
            arch.latent_extent(),
            &mut root.fork(2),
        );
        let prior = FactorizedPrior::new(arch.latent_channels, &arch.prior_hidden, &mut root.fork(3));
        Ok(Self { arch, intensity_scale, analysis, synthesis, prior })
    }

    /// `C = g_a(y)` for `[B, 1, P, P]` patches.
    pub fn analyze(&self, y: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.analysis.forward(&y.mul_scalar(T::lit(1.0 / self.intensity_scale))?)
    }

    /// `g_s(c_hat)` back on the intensity scale.
    pub fn synthesize(&self, c_hat: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.synthesis.forward(c_hat)?.mul_scalar(T::lit(self.intensity_scale))
    }

    /// Round-trip patches through the quantized code (inference only).
    pub fn reconstruct(&self, y: &Tensor<T>) -> TensorResult<Reconstruction<T>> {
        let y = y.detach();
        let c = self.analyze(&y)?.detach();
        let c_hat = quantize(&c, QuantizerMode::Eval, &mut Rng::new(0))?;
        let patches = self.synthesize(&c_hat)?;
        let likelihood = self.prior.pmf(&c_hat)?;
        let per_patch = self.arch.latent_dim();
        let bits = likelihood
            .data()
            .chunks(per_patch)
            .map(|chunk| chunk.iter().map(|p| -p.as_f64().log2()).sum())
            .collect();
        Ok(Reconstruction { patches: patches.detach(), bits })
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.analysis.params();
        v.extend(self.synthesis.params());
        v.extend(self.prior.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = self.analysis.params_mut();
        v.extend(self.synthesis.params_mut());
        v.extend(self.prior.params_mut());
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Enforce the GDN parameter floors.
    pub fn project(&mut self) {
        self.analysis.gdns.iter_mut().chain(self.synthesis.igdns.iter_mut()).for_each(GdnLayer::project);
    }

    /// Effective `beta >= 1e-6` and `gamma >= 0` in every (I)GDN layer.
    pub fn satisfies_floors(&self) -> bool {
        self.analysis.gdns.iter().chain(&self.synthesis.igdns).all(GdnLayer::satisfies_floors)
    }

    /// Copy of the codec whose parameters do not track gradients.
    pub fn detached(&self) -> Self {
        let mut c = self.clone();
        for (_, t) in c.params_mut() {
            *t = t.detach();
        }
        c
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> NeuralCodec<U> {
        let mut out = NeuralCodec::<U>::new(self.arch.clone(), self.intensity_scale, 0).expect("validated arch");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini() -> CodecArch {
        CodecArch { patch_size: 8, hidden_channels: 4, latent_channels: 2, layers: 3, kernel: 3, prior_hidden: vec![3, 3, 3] }
    }

    fn zero_biases(codec: &mut NeuralCodec<f64>) {
        for (name, t) in codec.params_mut() {
            if name.ends_with(".bias") && !name.starts_with("prior") {
                *t = Tensor::parameter(t.shape(), vec![0.0; t.numel()]).unwrap();
            }
        }
    }

    #[test]
    fn default_shapes() {
        let codec = NeuralCodec::<f32>::new(CodecArch::default(), 255.0, 1).unwrap();
        let y = Tensor::<f32>::zeros(&[7, 1, 16, 16]);
        let c = codec.analyze(&y).unwrap();
        assert_eq!(c.shape(), &[7, 16, 2, 2]);
        assert_eq!(codec.arch.latent_dim(), 64);
        let back = codec.synthesize(&c).unwrap();
        assert_eq!(back.shape(), &[7, 1, 16, 16]);
        let shapes: Vec<Vec<usize>> = codec.analysis.convs.iter().map(|c| c.weight.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![256, 1, 3, 3], vec![256, 256, 3, 3], vec![16, 256, 3, 3]]);
        let shapes: Vec<Vec<usize>> = codec.synthesis.convs.iter().map(|c| c.weight.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![16, 256, 3, 3], vec![256, 256, 3, 3], vec![256, 1, 3, 3]]);
    }

    #[test]
    fn zero_in_zero_out_with_zero_biases() {
        let mut codec = NeuralCodec::<f64>::new(mini(), 255.0, 3).unwrap();
        zero_biases(&mut codec);
        let c = codec.analyze(&Tensor::zeros(&[1, 1, 8, 8])).unwrap();
        assert!(c.data().iter().all(|v| *v == 0.0));
        let y = codec.synthesize(&Tensor::zeros(&[1, 2, 1, 1])).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_extent_is_geometry_error() {
        let codec = NeuralCodec::<f64>::new(mini(), 255.0, 3).unwrap();
        assert!(matches!(codec.analyze(&Tensor::zeros(&[1, 1, 16, 16])), Err(crate::TensorError::Geometry { .. })));
        assert!(matches!(codec.synthesize(&Tensor::zeros(&[1, 2, 2, 2])), Err(crate::TensorError::Geometry { .. })));
    }

    #[test]
    fn arch_validation() {
        assert!(CodecArch::default().validate().is_ok());
        assert!(CodecArch { patch_size: 12, ..CodecArch::default() }.validate().is_err());
        assert!(CodecArch { kernel: 5, ..CodecArch::default() }.validate().is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = NeuralCodec::<f64>::new(mini(), 255.0, 9).unwrap();
        let b = NeuralCodec::<f64>::new(mini(), 255.0, 9).unwrap();
        let c = NeuralCodec::<f64>::new(mini(), 255.0, 10).unwrap();
        let flat = |n: &NeuralCodec<f64>| n.params().iter().flat_map(|(_, t)| t.to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        assert!(a.satisfies_floors());
        assert!(a.params().iter().all(|(_, t)| t.requires_grad()));
        assert!(a.detached().params().iter().all(|(_, t)| !t.requires_grad()));
    }

    #[test]
    fn glorot_bounds() {
        let codec = NeuralCodec::<f64>::new(CodecArch::narrow(8), 255.0, 2).unwrap();
        let w = &codec.analysis.convs[1].weight;
        let bound = (6.0f64 / (8.0 * 9.0 + 8.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(codec.analysis.convs[1].bias.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruct_reports_bits_per_patch() {
        let codec = NeuralCodec::<f64>::new(mini(), 255.0, 4).unwrap();
        let y = Tensor::from_vec(&[3, 1, 8, 8], (0..192).map(|i| (i % 255) as f64).collect()).unwrap();
        let r = codec.reconstruct(&y).unwrap();
        assert_eq!(r.patches.shape(), &[3, 1, 8, 8]);
        assert_eq!(r.bits.len(), 3);
        assert!(r.bits.iter().all(|b| b.is_finite() && *b > 0.0));
        assert!(!r.patches.requires_grad());
    }
}
