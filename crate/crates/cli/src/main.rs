//! `decompress`: train, run and evaluate compression-based denoisers.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "decompress", version, about = "Denoise images by lossy neural compression")]
pub struct Cli {
    /// Worker threads for patch inference.
    #[arg(long, global = true, env = "DECOMPRESS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Add white Gaussian noise to a clean image.
    #[command(args_override_self = true)]
    SynthNoise(commands::SynthNoise),
    /// Train a codec on a noisy image or a directory of them.
    #[command(args_override_self = true)]
    Train(commands::Train),
    /// Denoise an image with a trained codec.
    #[command(args_override_self = true)]
    Denoise(commands::Denoise),
    /// Denoise and score against the clean image.
    #[command(args_override_self = true)]
    Eval(commands::Eval),
    /// Haar/BayesShrink wavelet denoiser.
    #[command(args_override_self = true)]
    Baseline(commands::Baseline),
    /// Train one codec per lambda and tabulate rate, distortion and PSNR.
    #[command(args_override_self = true)]
    RdSweep(commands::RdSweep),
}

const SUBCOMMANDS: [&str; 6] = ["synth-noise", "train", "denoise", "eval", "baseline", "rd-sweep"];

/// Single-line `error: kind=<tag> message=<text>` on stderr.
fn fail(kind: &str, message: &str) -> ExitCode {
    let flat: Vec<&str> = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    eprintln!("error: kind={kind} message={}", flat.join(" "));
    ExitCode::FAILURE
}

fn parse(args: Vec<OsString>) -> Result<(Cli, ArgMatches), clap::Error> {
    let matches = Cli::command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, matches))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let args = match config::expand_config_args(std::env::args_os().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => return fail("config", &format!("{e:#}")),
    };
    let (cli, matches) = match parse(args) {
        Ok(p) => p,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("config", &e.to_string());
        }
    }
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = Cli::command().find_subcommand(name).expect("known subcommand").clone();
    let echo = config::render_resolved(&sub_cmd, sub);
    match commands::run(cli.command, &echo) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<decompress_core::Error>().map_or("cli", decompress_core::Error::kind);
            fail(kind, &format!("{e:#}"))
        }
    }
}

/// Shared by subcommands that write a file and echo their config next to it.
pub(crate) fn write_echo(output: &std::path::Path, echo: &str) -> anyhow::Result<PathBuf> {
    let path = config::echo_path(output);
    std::fs::write(&path, echo).map_err(|e| decompress_core::Error::Io { path: path.clone(), source: e })?;
    Ok(path)
}
