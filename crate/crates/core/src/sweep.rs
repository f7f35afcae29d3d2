//! Rate-distortion sweeps: one codec per λ on the same noisy corpus.

use ndarray::Array2;

use crate::codec::NeuralCodec;
use crate::denoise::{add_awgn, denoise_with, psnr, DenoiseOptions, NoiseSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::train::{train_with_progress, LogRecord, TrainConfig};

/// Outcome for one λ.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    /// Distortion and rate averaged over the last log interval.
    pub distortion: f64,
    pub rate: f64,
    /// Mean over corpus images, against the clean images.
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    /// Mean eval-mode rate of the denoising pass, bits per pixel.
    pub eval_rate_bpp: f64,
}

/// One trained operating point.
pub struct SweepRun {
    pub point: SweepPoint,
    pub codec: NeuralCodec<f32>,
    /// Denoised corpus images, clamped, in corpus order.
    pub denoised: Vec<Array2<f64>>,
}

/// Noise field of corpus image `index`: seeded from `spec.seed` and the index.
pub fn corpus_noise(clean: &[Array2<f64>], spec: NoiseSpec) -> Vec<Array2<f64>> {
    let root = Rng::new(spec.seed);
    clean
        .iter()
        .enumerate()
        .map(|(i, img)| add_awgn(img, NoiseSpec { sigma: spec.sigma, seed: root.fork(i as u64).next_u64() }))
        .collect()
}

/// Train one codec per λ from `base` (same seed and budget) on the noisy
/// corpus, then denoise the corpus with each.
pub fn rd_sweep(
    clean: &[Array2<f64>],
    noisy: &[Array2<f64>],
    base: &TrainConfig,
    lambdas: &[f64],
    opts: DenoiseOptions,
    mut on_log: impl FnMut(f64, &LogRecord),
) -> Result<Vec<SweepRun>> {
    if lambdas.is_empty() {
        return Err(Error::Config("no lambda values given".into()));
    }
    if base.steps < base.log_interval {
        return Err(Error::Config(format!(
            "steps {} shorter than log interval {}; no final loss would be recorded",
            base.steps, base.log_interval
        )));
    }
    if clean.len() != noisy.len() {
        return Err(Error::Config("clean and noisy corpora differ in length".into()));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = TrainConfig { lambda, ..base.clone() };
        let trained = train_with_progress::<f32>(noisy.to_vec(), &cfg, |r| on_log(lambda, r))?;
        let last = trained.log.last().expect("at least one interval").loss;
        let (mut pn, mut pd, mut rate) = (0.0, 0.0, 0.0);
        let mut denoised = Vec::with_capacity(clean.len());
        for (c, n) in clean.iter().zip(noisy) {
            let d = denoise_with(n, &trained.codec, opts)?;
            let img = d.clamped();
            pn += psnr(c, n)?;
            pd += psnr(c, &img)?;
            rate += d.rate_bpp;
            denoised.push(img);
        }
        let k = clean.len() as f64;
        let point = SweepPoint {
            lambda,
            distortion: last.distortion,
            rate: last.rate,
            psnr_noisy: pn / k,
            psnr_denoised: pd / k,
            eval_rate_bpp: rate / k,
        };
        out.push(SweepRun { point, codec: trained.codec, denoised });
    }
    Ok(out)
}

pub const SWEEP_COLUMNS: [&str; 6] = ["lambda", "D", "R", "psnr_noisy", "psnr_denoised", "eval_rate_bpp"];

pub fn write_sweep<W: std::io::Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for p in points {
        w.write_record([
            p.lambda.to_string(),
            p.distortion.to_string(),
            p.rate.to_string(),
            format!("{:.4}", p.psnr_noisy),
            format!("{:.4}", p.psnr_denoised),
            format!("{:.6}", p.eval_rate_bpp),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
