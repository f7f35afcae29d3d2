//! Rate-distortion training of a [`NeuralCodec`] on noisy image patches.

mod adam;
mod checkpoint;
mod patches;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC};
pub use patches::{placements, BatchSampler, PatchDataset, PatchIndex};

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;

use crate::codec::{CodecArch, NeuralCodec};
use crate::entropy::{quantize, QuantizerMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Default λ for the noise levels with a known operating point.
pub fn default_lambda(sigma: f64) -> Option<f64> {
    match sigma {
        15.0 => Some(300.0),
        25.0 => Some(1000.0),
        50.0 => Some(3000.0),
        _ => None,
    }
}

/// One evaluation of the rate-distortion objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean squared error per pixel on the intensity scale.
    pub distortion: f64,
    /// Bits per pixel.
    pub rate: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(distortion: f64, rate: f64, lambda: f64) -> Self {
        Self { distortion, rate, lambda, total: distortion + lambda * rate }
    }
}

/// Differentiable objective plus its scalar parts.
pub struct RdLoss<T: Real> {
    pub objective: Tensor<T>,
    pub breakdown: LossBreakdown,
}

/// `D + λR` on a `[B, 1, P, P]` batch.
pub fn rd_loss<T: Real>(
    y: &Tensor<T>,
    codec: &NeuralCodec<T>,
    lambda: f64,
    mode: QuantizerMode,
    rng: &mut Rng,
) -> Result<RdLoss<T>> {
    let c = codec.analyze(y)?;
    let c_tilde = quantize(&c, mode, rng)?;
    let y_hat = codec.synthesize(&c_tilde)?;
    let d = y_hat.sub(y)?.square()?.mean()?;
    let r = codec.prior.rate_bits_per_pixel(&c_tilde, codec.arch.pixels_per_patch())?;
    let breakdown = LossBreakdown::new(d.item().as_f64(), r.item().as_f64(), lambda);
    let objective = d.add(&r.mul_scalar(T::lit(lambda))?)?;
    Ok(RdLoss { objective, breakdown })
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: CodecArch,
    pub lambda: f64,
    /// Noise level of the corpus; recorded in checkpoints only.
    pub sigma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub patch_stride: usize,
    pub max_patches: Option<usize>,
    pub intensity_scale: f64,
    /// Steps per log record.
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: CodecArch::default(),
            lambda: 1000.0,
            sigma: 25.0,
            learning_rate: 2e-4,
            batch_size: 64,
            steps: 50_000,
            seed: 0,
            patch_stride: 1,
            max_patches: None,
            intensity_scale: 255.0,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.arch.patch_size != 16 {
            return Err(Error::Config(format!("patch size must be 16, got {}", self.arch.patch_size)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda {} must be positive", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.log_interval == 0 || self.patch_stride == 0 {
            return Err(Error::Config("batch size, log interval and patch stride must be positive".into()));
        }
        if self.max_patches == Some(0) {
            return Err(Error::Config("max_patches must be positive".into()));
        }
        Ok(())
    }
}

/// Interval means of the loss parts, closing at `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    pub wall_ms: u64,
}

/// Write a training log as CSV.
pub fn write_log<W: Write>(out: W, log: &[LogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "D", "R", "total", "wall_ms"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            r.loss.distortion.to_string(),
            r.loss.rate.to_string(),
            r.loss.total.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Trained codec and its history.
pub struct TrainOutcome<T: Real> {
    pub codec: NeuralCodec<T>,
    pub log: Vec<LogRecord>,
    /// Attempts dropped for non-finite gradients.
    pub skipped_steps: u64,
    pub patches: usize,
}

/// Consecutive non-finite attempts tolerated before giving up.
const MAX_CONSECUTIVE_SKIPS: u64 = 100;

/// Train on a frozen corpus of noisy planes.
pub fn train<T: Real>(images: Vec<Array2<f64>>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_progress(images, cfg, |_| {})
}

/// [`train`], reporting every log record as it is produced.
pub fn train_with_progress<T: Real>(
    images: Vec<Array2<f64>>,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut dataset = PatchDataset::new(images, cfg.arch.patch_size, cfg.patch_stride)?;
    if let Some(cap) = cfg.max_patches {
        dataset.subsample(cap, &mut root.fork(10));
    }
    let mut codec = NeuralCodec::<T>::new(cfg.arch.clone(), cfg.intensity_scale, root.fork(11).next_u64())?;
    let mut sampler = BatchSampler::new(dataset.len(), root.fork(12));
    let mut noise = root.fork(13);
    let mut adam = AdamState::new(codec.params().into_iter().map(|(_, t)| t));

    let start = Instant::now();
    let mut log = Vec::new();
    let mut sums = (0.0, 0.0, 0usize);
    let (mut skipped, mut consecutive) = (0u64, 0u64);
    while adam.step < cfg.steps {
        let batch = dataset.batch::<T>(&sampler.next_batch(cfg.batch_size));
        let loss = rd_loss(&batch, &codec, cfg.lambda, QuantizerMode::Train, &mut noise)?;
        loss.objective.backward()?;
        match adam_step(&mut codec.params_mut(), &mut adam, cfg.learning_rate) {
            Ok(()) => consecutive = 0,
            Err(Error::NonFiniteGradient { param }) => {
                skipped += 1;
                consecutive += 1;
                log::warn!("skipping step {}: non-finite gradient in {param}", adam.step + 1);
                if consecutive >= MAX_CONSECUTIVE_SKIPS {
                    return Err(Error::NonFiniteGradient { param });
                }
                codec.params().iter().for_each(|(_, t)| t.zero_grad());
                continue;
            }
            Err(e) => return Err(e),
        }
        codec.project();
        sums.0 += loss.breakdown.distortion;
        sums.1 += loss.breakdown.rate;
        sums.2 += 1;
        if adam.step % cfg.log_interval == 0 {
            let n = sums.2 as f64;
            let record = LogRecord {
                step: adam.step,
                loss: LossBreakdown::new(sums.0 / n, sums.1 / n, cfg.lambda),
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_log(&record);
            log.push(record);
            sums = (0.0, 0.0, 0);
        }
    }
    Ok(TrainOutcome { codec, log, skipped_steps: skipped, patches: dataset.len() })
}
