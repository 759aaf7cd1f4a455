//! Command-line front end for the head generator.
//!
//! Every subcommand builds a [`RunConfig`] from the mode defaults, an
//! optional config file, `--set key=value` overrides and the dedicated flags
//! (in that order), writes it to `config.txt` in the output directory, and
//! appends its progress to `metrics.log` there.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 usage error, 3 configuration,
//! shape or data error, 4 numeric or render failure.

mod commands;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use headgen::harness::{Mode, RunConfig};
use headgen::{Error, Result};

pub use commands::execute;

#[derive(Debug, Parser)]
#[command(name = "headgen", version, about = "Synthetic data, fitting, training and sampling for Gaussian heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic multi-view dataset with exact ground truth.
    GenData(Common),
    /// Fit the hair template to multi-view silhouettes of a random hairstyle.
    FitHair(Common),
    /// Build a PCA blend-shape model from procedural hairstyles.
    BuildPca(Common),
    /// Fit face and hair Gaussian textures to a synthetic scene.
    FitGaussians(Common),
    /// Train the toy generator against a synthetic dataset.
    TrainToy(Common),
    /// Render a generated head over a yaw sweep.
    Sample(Common),
    /// Put the hairstyle of one latent on the face of another.
    Edit(Common),
    /// Render one latent at several guidance factors.
    CfgSweep(Common),
    /// Render fitted textures, or a synthetic scene, over a yaw sweep.
    Render(Common),
    /// Compare every analytic gradient with finite differences.
    CheckGrads(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file in `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write float dumps instead of PNG images.
    #[arg(long)]
    emit_float: bool,
}

impl Command {
    fn split(self) -> (Mode, Common) {
        match self {
            Command::GenData(c) => (Mode::GenData, c),
            Command::FitHair(c) => (Mode::FitHair, c),
            Command::BuildPca(c) => (Mode::BuildPca, c),
            Command::FitGaussians(c) => (Mode::FitGaussians, c),
            Command::TrainToy(c) => (Mode::TrainToy, c),
            Command::Sample(c) => (Mode::Sample, c),
            Command::Edit(c) => (Mode::Edit, c),
            Command::CfgSweep(c) => (Mode::CfgSweep, c),
            Command::Render(c) => (Mode::Render, c),
            Command::CheckGrads(c) => (Mode::CheckGrads, c),
        }
    }
}

fn build_config(mode: Mode, args: &Common) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path, mode)?,
        None => RunConfig::new(mode),
    };
    if cfg.mode != mode {
        return Err(Error::Config(format!("config file is for `{}`, not `{}`", cfg.mode.name(), mode.name())));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        if k.trim() == "mode" {
            return Err(Error::Usage("the mode is chosen by the subcommand".into()));
        }
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    cfg.emit_float |= args.emit_float;
    cfg.validate()?;
    Ok(cfg)
}

/// Short category name used in `error[...]` lines.
pub fn category(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Shape(_) => "shape",
        Error::Data(_) => "data",
        Error::Numeric(_) => "numeric",
        Error::Usage(_) => "usage",
        Error::Render(_) => "render",
        Error::Io { .. } => "io",
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        Error::Config(_) | Error::Shape(_) | Error::Data(_) => 3,
        Error::Numeric(_) | Error::Render(_) => 4,
        Error::Io { .. } => 1,
    }
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Progress goes to `out`, errors to `err`.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{e}");
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    let _ = write!(err, "error[usage]: {}", e.render());
                    2
                }
            };
        }
    };
    let (mode, common) = cli.command.split();
    let result = build_config(mode, &common).and_then(|cfg| execute(&cfg, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", category(&e));
            exit_code(&e)
        }
    }
}
