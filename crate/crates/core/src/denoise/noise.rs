//! Additive white Gaussian noise and PSNR.

use ndarray::Array2;

use crate::error::{Result, TensorError};
use crate::rng::Rng;

/// Reported when the two images are identical.
pub const PSNR_CAP: f64 = 99.0;
pub const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation on the `[0, 255]` scale.
    pub sigma: f64,
    pub seed: u64,
}

/// `x + σ·g` with `g` iid standard normal, row-major draw order, no clipping.
pub fn add_awgn(clean: &Array2<f64>, spec: NoiseSpec) -> Array2<f64> {
    assert!(spec.sigma >= 0.0, "sigma must be non-negative");
    let mut rng = Rng::new(spec.seed);
    let mut out = clean.as_standard_layout().to_owned();
    out.iter_mut().for_each(|v| *v += spec.sigma * rng.gaussian());
    out
}

/// Mean squared difference.
pub fn mse(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    if reference.dim() != test.dim() {
        return Err(TensorError::dim("psnr", format!("{:?} vs {:?}", reference.dim(), test.dim())).into());
    }
    if reference.is_empty() {
        return Err(TensorError::Empty("psnr").into());
    }
    let sum: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log10(255² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    let m = mse(reference, test)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (PEAK * PEAK / m).log10()).min(PSNR_CAP) })
}
