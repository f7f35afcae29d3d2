//! Overlap-averaged patch denoising, noise synthesis, PSNR and image files.

mod io;
mod noise;

pub use io::{decode_dcf32, encode_dcf32, load_corpus, read_image, to_u8, write_image, DCF32_MAGIC, IMAGE_EXTENSIONS};
pub use noise::{add_awgn, mse, psnr, NoiseSpec, PEAK, PSNR_CAP};

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::codec::NeuralCodec;
use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

/// Anything that maps a batch of square patches to reconstructions.
pub trait PatchReconstructor: Sync {
    fn patch_size(&self) -> usize;

    /// `patches` holds `count` row-major patches back to back; returns the
    /// reconstructions in the same layout and the code length of each patch in bits.
    fn reconstruct_patches(&self, patches: &[f64], count: usize) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl<T: Real> PatchReconstructor for NeuralCodec<T> {
    fn patch_size(&self) -> usize {
        self.arch.patch_size
    }

    fn reconstruct_patches(&self, patches: &[f64], count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.arch.patch_size;
        let y = Tensor::from_vec(&[count, 1, p, p], patches.iter().map(|v| T::lit(*v)).collect())?;
        let r = self.reconstruct(&y)?;
        Ok((r.patches.data().iter().map(|v| v.as_f64()).collect(), r.bits))
    }
}

/// Returns every patch unchanged at zero rate.
#[derive(Clone, Copy, Debug)]
pub struct IdentityReconstructor {
    pub patch_size: usize,
}

impl PatchReconstructor for IdentityReconstructor {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn reconstruct_patches(&self, patches: &[f64], count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((patches.to_vec(), vec![0.0; count]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseOptions {
    /// Distance between neighbouring windows; the last row and column of windows is always included.
    pub stride: usize,
    /// Rows of windows reconstructed per parallel work unit.
    pub rows_per_task: usize,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self { stride: 1, rows_per_task: 1 }
    }
}

/// Result of [`denoise_with`] before clamping.
#[derive(Clone, Debug)]
pub struct Denoised {
    /// Averaged reconstructions, not yet clamped.
    pub averaged: Array2<f64>,
    /// Windows covering each pixel.
    pub counts: Array2<u32>,
    /// Mean code length in bits per pixel over all windows.
    pub rate_bpp: f64,
    pub patches: usize,
}

impl Denoised {
    /// The averaged image clamped to `[0, 255]`.
    pub fn clamped(&self) -> Array2<f64> {
        self.averaged.mapv(|v| v.clamp(0.0, PEAK))
    }
}

/// Window offsets along an axis: `0, s, 2s, ...` plus the last admissible offset.
pub fn window_offsets(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    if extent < size {
        return Vec::new();
    }
    let last = extent - size;
    let mut v: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Reconstruct every window and average the reconstructions covering each pixel.
///
/// What is accumulated is the residual `reconstruction - input`, and the
/// average residual is added back to the input. This is the same average,
/// but a reconstruction that reproduces its window leaves the pixel untouched
/// bit for bit, whatever the number of covering windows.
pub fn denoise_with<R: PatchReconstructor + ?Sized>(
    noisy: &Array2<f64>,
    model: &R,
    opts: DenoiseOptions,
) -> Result<Denoised> {
    let p = model.patch_size();
    let (h, w) = noisy.dim();
    if h < p || w < p {
        return Err(TensorError::geometry("denoise", format!("image {h}x{w} is smaller than a {p}x{p} patch")).into());
    }
    let noisy = noisy.as_standard_layout();
    let rows = window_offsets(h, p, opts.stride);
    let cols = window_offsets(w, p, opts.stride);
    let tasks: Vec<&[usize]> = rows.chunks(opts.rows_per_task.max(1)).collect();
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = tasks
        .par_iter()
        .map(|task| {
            let mut buf = Vec::with_capacity(task.len() * cols.len() * p * p);
            for &r in task.iter() {
                for &c in &cols {
                    for i in r..r + p {
                        buf.extend(noisy.row(i).iter().skip(c).take(p));
                    }
                }
            }
            model.reconstruct_patches(&buf, task.len() * cols.len())
        })
        .collect();

    let mut sum = Array2::<f64>::zeros((h, w));
    let mut counts = Array2::<u32>::zeros((h, w));
    let mut bits = 0.0;
    for (task, result) in tasks.iter().zip(results) {
        let (recon, task_bits) = result?;
        bits += task_bits.iter().sum::<f64>();
        let mut k = 0;
        for &r in task.iter() {
            for &c in &cols {
                let patch = &recon[k * p * p..(k + 1) * p * p];
                for i in 0..p {
                    let src = noisy.row(r + i);
                    let mut srow = sum.row_mut(r + i);
                    let mut crow = counts.row_mut(r + i);
                    for j in 0..p {
                        srow[c + j] += patch[i * p + j] - src[c + j];
                        crow[c + j] += 1;
                    }
                }
                k += 1;
            }
        }
    }
    // Pixels no window reaches (stride larger than the patch) keep their input value.
    let averaged = ndarray::Zip::from(&noisy)
        .and(&sum)
        .and(&counts)
        .map_collect(|x, s, &n| if n == 0 { *x } else { x + s / n as f64 });
    let patches = rows.len() * cols.len();
    Ok(Denoised { averaged, counts, rate_bpp: bits / (patches * p * p) as f64, patches })
}

/// Stride-1 overlap-averaged denoising, clamped to `[0, 255]`.
pub fn denoise<R: PatchReconstructor + ?Sized>(noisy: &Array2<f64>, model: &R) -> Result<Array2<f64>> {
    Ok(denoise_with(noisy, model, DenoiseOptions::default())?.clamped())
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseReport {
    pub image: String,
    pub sigma: f64,
    pub method: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub rate_bpp: f64,
    pub patches: usize,
    pub seconds: f64,
}

/// Denoise `noisy` and score it and the input against `clean`.
pub fn evaluate<R: PatchReconstructor + ?Sized>(
    clean: &Array2<f64>,
    noisy: &Array2<f64>,
    model: &R,
    opts: DenoiseOptions,
    image: &str,
    sigma: f64,
) -> Result<(DenoiseReport, Array2<f64>)> {
    let start = Instant::now();
    let out = denoise_with(noisy, model, opts)?;
    let denoised = out.clamped();
    let report = DenoiseReport {
        image: image.to_string(),
        sigma,
        method: "decompress".into(),
        psnr_noisy: psnr(clean, noisy)?,
        psnr_denoised: psnr(clean, &denoised)?,
        rate_bpp: out.rate_bpp,
        patches: out.patches,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, denoised))
}

pub const REPORT_COLUMNS: [&str; 7] = ["image", "sigma", "method", "psnr_noisy", "psnr_denoised", "rate_bpp", "seconds"];

/// Write reports as CSV with a header row.
pub fn write_reports<W: std::io::Write>(out: W, reports: &[DenoiseReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.image.clone(),
            r.sigma.to_string(),
            r.method.clone(),
            format!("{:.4}", r.psnr_noisy),
            format!("{:.4}", r.psnr_denoised),
            format!("{:.6}", r.rate_bpp),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
