//! Subcommand arguments and their implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use decompress_core::codec::CodecArch;
use decompress_core::denoise::{
    add_awgn, evaluate, load_corpus, psnr, read_image, write_image, write_reports, DenoiseOptions, DenoiseReport,
    NoiseSpec,
};
use decompress_core::sweep::{corpus_noise, rd_sweep, write_sweep};
use decompress_core::train::{
    default_lambda, load_checkpoint, save_checkpoint, train_with_progress, write_log, CheckpointHeader, TrainConfig,
};
use decompress_core::wavelet::{bayes_shrink_denoise, DEFAULT_LEVELS};
use decompress_core::NeuralCodec;
use log::info;

use crate::{write_echo, Cmd};

pub fn run(cmd: Cmd, echo: &str) -> Result<()> {
    match cmd {
        Cmd::SynthNoise(a) => a.run(echo),
        Cmd::Train(a) => a.run(echo),
        Cmd::Denoise(a) => a.run(echo),
        Cmd::Eval(a) => a.run(echo),
        Cmd::Baseline(a) => a.run(echo),
        Cmd::RdSweep(a) => a.run(echo),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| decompress_core::Error::Io { path: path.into(), source: e })?;
    Ok(BufWriter::new(f))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn resolve_lambda(lambda: Option<f64>, sigma: f64) -> Result<f64> {
    match lambda.or_else(|| default_lambda(sigma)) {
        Some(l) => Ok(l),
        None => bail!(decompress_core::Error::Config(format!(
            "no default lambda for sigma {sigma}; pass --lambda (defaults exist for 15, 25 and 50)"
        ))),
    }
}

#[derive(Args, Debug)]
pub struct SynthNoise {
    /// Clean 8-bit image (PGM or PNG).
    #[arg(long)]
    pub clean: PathBuf,
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Real-valued noisy image; `.dcf32` keeps values unclipped.
    #[arg(long)]
    pub out: PathBuf,
    /// 8-bit clipped preview; defaults to `--out` with a `.png` extension.
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// Read further options from a `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SynthNoise {
    fn run(self, echo: &str) -> Result<()> {
        if !(self.sigma >= 0.0) {
            bail!(decompress_core::Error::Config(format!("sigma {} must be non-negative", self.sigma)));
        }
        let clean = read_image(&self.clean)?;
        let noisy = add_awgn(&clean, NoiseSpec { sigma: self.sigma, seed: self.seed });
        write_image(&self.out, &noisy)?;
        let preview = self.preview.unwrap_or_else(|| self.out.with_extension("png"));
        write_image(&preview, &noisy)?;
        write_echo(&self.out, echo)?;
        let clipped = noisy.mapv(|v| v.round().clamp(0.0, 255.0));
        println!(
            "noisy={} preview={} psnr_noisy={:.4} psnr_preview={:.4}",
            self.out.display(),
            preview.display(),
            psnr(&clean, &noisy)?,
            psnr(&clean, &clipped)?
        );
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Channels of the hidden convolution layers.
    #[arg(long, default_value_t = 256)]
    pub hidden_channels: usize,
    /// Channels of the latent code.
    #[arg(long, default_value_t = 16)]
    pub latent_channels: usize,
}

impl ModelArgs {
    fn arch(&self) -> CodecArch {
        CodecArch { hidden_channels: self.hidden_channels, latent_channels: self.latent_channels, ..CodecArch::default() }
    }
}

#[derive(Args, Debug)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub learning_rate: f64,
    /// Keep a seeded uniform sample of at most this many patches.
    #[arg(long)]
    pub max_patches: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub patch_stride: usize,
    /// Steps per training-log row.
    #[arg(long, default_value_t = 100)]
    pub log_interval: u64,
}

#[derive(Args, Debug)]
pub struct Train {
    /// Noisy image, or a directory of noisy images.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Noise level of the corpus; selects the default lambda.
    #[arg(long)]
    pub sigma: f64,
    /// Rate weight; defaults to 300, 1000, 3000 for sigma 15, 25, 50.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 50_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Treat the corpus as clean and add noise of level `--sigma` drawn with this seed.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training-log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Train {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            arch: self.model.arch(),
            lambda: resolve_lambda(self.lambda, self.sigma)?,
            sigma: self.sigma,
            learning_rate: self.optim.learning_rate,
            batch_size: self.optim.batch_size,
            steps: self.steps,
            seed: self.seed,
            patch_stride: self.optim.patch_stride,
            max_patches: self.optim.max_patches,
            intensity_scale: 255.0,
            log_interval: self.optim.log_interval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn run(self, echo: &str) -> Result<()> {
        let cfg = self.config()?;
        let corpus = load_corpus(&self.corpus)?;
        let names: Vec<String> = corpus.iter().map(|(n, _)| n.clone()).collect();
        let mut images: Vec<_> = corpus.into_iter().map(|(_, img)| img).collect();
        if let Some(seed) = self.noise_seed {
            images = corpus_noise(&images, NoiseSpec { sigma: self.sigma, seed });
        }
        for (name, img) in names.iter().zip(&images) {
            let (h, w) = img.dim();
            let p = cfg.arch.patch_size;
            if h < p || w < p {
                bail!(decompress_core::Error::Config(format!("image {name} is {h}x{w}, smaller than a {p}x{p} patch")));
            }
        }
        info!("training on {} image(s), lambda {}, {} steps", images.len(), cfg.lambda, cfg.steps);
        let outcome = train_with_progress::<f32>(images, &cfg, |r| {
            info!("step {} D {:.3} R {:.4} total {:.3}", r.step, r.loss.distortion, r.loss.rate, r.loss.total);
        })?;
        save_checkpoint(&outcome.codec, &CheckpointHeader::from_config(&cfg, cfg.steps), &self.out)?;
        let log_path = self.log.clone().unwrap_or_else(|| {
            let mut name = self.out.file_name().unwrap_or_default().to_os_string();
            name.push(".log.csv");
            self.out.with_file_name(name)
        });
        write_log(create(&log_path)?, &outcome.log)?;
        write_echo(&self.out, echo)?;
        println!(
            "checkpoint={} log={} patches={} skipped_steps={}",
            self.out.display(),
            log_path.display(),
            outcome.patches,
            outcome.skipped_steps
        );
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Denoise {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub noisy: PathBuf,
    /// Denoised image; 8-bit unless the extension is `.dcf32`.
    #[arg(long)]
    pub out: PathBuf,
    /// Window stride; 1 reconstructs every overlapping patch.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn load_codec(path: &Path) -> Result<(NeuralCodec<f32>, CheckpointHeader)> {
    let (codec, header) = load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((codec.detached(), header))
}

fn options(stride: usize) -> Result<DenoiseOptions> {
    if stride == 0 {
        bail!(decompress_core::Error::Config("stride must be positive".into()));
    }
    Ok(DenoiseOptions { stride, ..DenoiseOptions::default() })
}

impl Denoise {
    fn run(self, echo: &str) -> Result<()> {
        let (codec, _) = load_codec(&self.ckpt)?;
        let noisy = read_image(&self.noisy)?;
        let start = Instant::now();
        let out = decompress_core::denoise::denoise_with(&noisy, &codec, options(self.stride)?)?;
        write_image(&self.out, &out.clamped())?;
        write_echo(&self.out, echo)?;
        println!(
            "denoised={} patches={} rate_bpp={:.6} seconds={:.3}",
            self.out.display(),
            out.patches,
            out.rate_bpp,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Eval {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub noisy: PathBuf,
    /// Report CSV to write.
    #[arg(long)]
    pub report: PathBuf,
    /// Noise level for the report and the baseline; defaults to the checkpoint's.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Also write the denoised image here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add a wavelet-baseline row on the same input.
    #[arg(long)]
    pub with_baseline: bool,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Eval {
    fn run(self, echo: &str) -> Result<()> {
        let (codec, header) = load_codec(&self.ckpt)?;
        let clean = read_image(&self.clean)?;
        let noisy = read_image(&self.noisy)?;
        let sigma = self.sigma.unwrap_or(header.sigma);
        let name = stem(&self.clean);
        let (report, denoised) = evaluate(&clean, &noisy, &codec, options(self.stride)?, &name, sigma)?;
        let mut rows = vec![report];
        if self.with_baseline {
            rows.push(baseline_report(&clean, &noisy, sigma, DEFAULT_LEVELS, &name)?.0);
        }
        if let Some(out) = &self.out {
            write_image(out, &denoised)?;
        }
        write_reports(create(&self.report)?, &rows)?;
        write_echo(&self.report, echo)?;
        for r in &rows {
            println!("method={} psnr_noisy={:.4} psnr_denoised={:.4} rate_bpp={:.6}", r.method, r.psnr_noisy, r.psnr_denoised, r.rate_bpp);
        }
        Ok(())
    }
}

fn baseline_report(
    clean: &ndarray::Array2<f64>,
    noisy: &ndarray::Array2<f64>,
    sigma: f64,
    levels: usize,
    name: &str,
) -> Result<(DenoiseReport, ndarray::Array2<f64>)> {
    let start = Instant::now();
    let out = bayes_shrink_denoise(noisy, sigma, levels)?;
    let report = DenoiseReport {
        image: name.to_string(),
        sigma,
        method: "wavelet".into(),
        psnr_noisy: psnr(clean, noisy)?,
        psnr_denoised: psnr(clean, &out)?,
        rate_bpp: 0.0,
        patches: 0,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, out))
}

#[derive(Args, Debug)]
pub struct Baseline {
    #[arg(long)]
    pub noisy: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Haar decomposition depth.
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    pub levels: usize,
    /// Clean image; enables the report.
    #[arg(long, requires = "report")]
    pub clean: Option<PathBuf>,
    #[arg(long, requires = "clean")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Baseline {
    fn run(self, echo: &str) -> Result<()> {
        let noisy = read_image(&self.noisy)?;
        if let (Some(clean_path), Some(report)) = (&self.clean, &self.report) {
            let clean = read_image(clean_path)?;
            let (row, out) = baseline_report(&clean, &noisy, self.sigma, self.levels, &stem(clean_path))?;
            write_image(&self.out, &out)?;
            write_reports(create(report)?, std::slice::from_ref(&row))?;
            println!("method=wavelet psnr_noisy={:.4} psnr_denoised={:.4}", row.psnr_noisy, row.psnr_denoised);
        } else {
            write_image(&self.out, &bayes_shrink_denoise(&noisy, self.sigma, self.levels)?)?;
            println!("denoised={}", self.out.display());
        }
        write_echo(&self.out, echo)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct RdSweep {
    /// Clean image or directory; noise is synthesized with `--sigma` and `--noise-seed`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    /// Comma-separated rate weights.
    #[arg(long, value_delimiter = ',', default_values_t = [300.0, 1000.0, 3000.0])]
    pub lambdas: Vec<f64>,
    /// Sweep table CSV to write.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 5_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Window stride of the denoising pass.
    #[arg(long, default_value_t = 1)]
    pub eval_stride: usize,
    /// Write one checkpoint and the denoised images per lambda here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RdSweep {
    fn run(self, echo: &str) -> Result<()> {
        let base = TrainConfig {
            arch: self.model.arch(),
            lambda: 1.0,
            sigma: self.sigma,
            learning_rate: self.optim.learning_rate,
            batch_size: self.optim.batch_size,
            steps: self.steps,
            seed: self.seed,
            patch_stride: self.optim.patch_stride,
            max_patches: self.optim.max_patches,
            intensity_scale: 255.0,
            log_interval: self.optim.log_interval,
        };
        base.validate()?;
        let corpus = load_corpus(&self.corpus)?;
        let names: Vec<String> = corpus.iter().map(|(n, _)| n.clone()).collect();
        let clean: Vec<_> = corpus.into_iter().map(|(_, img)| img).collect();
        let noisy = corpus_noise(&clean, NoiseSpec { sigma: self.sigma, seed: self.noise_seed });
        let runs = rd_sweep(&clean, &noisy, &base, &self.lambdas, options(self.eval_stride)?, |lambda, r| {
            info!("lambda {lambda} step {} D {:.3} R {:.4}", r.step, r.loss.distortion, r.loss.rate);
        })?;
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| decompress_core::Error::Io { path: dir.clone(), source: e })?;
            for run in &runs {
                let tag = format!("lambda{}", run.point.lambda);
                let cfg = TrainConfig { lambda: run.point.lambda, ..base.clone() };
                save_checkpoint(&run.codec, &CheckpointHeader::from_config(&cfg, cfg.steps), &dir.join(format!("{tag}.dcmp")))?;
                for (name, img) in names.iter().zip(&run.denoised) {
                    write_image(&dir.join(format!("{name}_{tag}.png")), img)?;
                }
            }
        }
        let points: Vec<_> = runs.into_iter().map(|r| r.point).collect();
        write_sweep(create(&self.report)?, &points)?;
        write_echo(&self.report, echo)?;
        for p in &points {
            println!("lambda={} D={:.4} R={:.6} psnr_denoised={:.4}", p.lambda, p.distortion, p.rate, p.psnr_denoised);
        }
        Ok(())
    }
}
