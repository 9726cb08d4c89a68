//! `relens` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure (bad parameters, training
//! errors), 2 I/O or input error, 3 missing prerequisite checkpoint,
//! 4 ablation failure. Usage errors reported by the argument parser also
//! exit 2.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use commands::{MaskSource, Stage};
use config::{RunConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_ABLATION: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError::io(message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_MISSING,
            message: message.into(),
        }
    }

    pub fn ablation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ABLATION,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<relens_core::Error> for CliError {
    fn from(e: relens_core::Error) -> Self {
        use relens_core::Error as E;
        let code = match e {
            E::Io(_)
            | E::Image { .. }
            | E::Parse { .. }
            | E::Checkpoint { .. }
            | E::CheckpointVersion { .. } => EXIT_IO,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "relens",
    version,
    about = "Old-photo restoration by latent translation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one config key; repeatable and applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Detector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    Auto,
    File,
    None,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes clean/degraded/mask triples and their manifests.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trains stage 1 (both VAEs), stage 2 (latent mapping) or the detector.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `synth`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory; stage 2 also reads stage-1 checkpoints here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Restores one PNG.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        mask: MaskArg,
        /// Mask image for `--mask file`.
        #[arg(long, required_if_eq("mask", "file"))]
        mask_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM of restored images against a pair manifest.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
        /// Directory of PNGs (name order) or a file listing one path per line.
        #[arg(long)]
        restored: PathBuf,
        /// Summary file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent domain gap of the three VAE₁ variants.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(
    args: &ConfigArgs,
    extra: &[(String, String)],
    log: &mut dyn Write,
) -> Result<RunConfig, CliError> {
    let env = std::env::var(SEED_ENV).ok();
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    let cfg = RunConfig::resolve(args.config.as_deref(), env.as_deref(), &overrides)?;
    commands::log_config(&cfg, log)?;
    Ok(cfg)
}

fn path_or(flag: Option<PathBuf>, fallback: &Path, name: &str) -> Result<PathBuf, CliError> {
    match flag {
        Some(p) => Ok(p),
        None if !fallback.as_os_str().is_empty() => Ok(fallback.to_path_buf()),
        None => Err(CliError {
            code: EXIT_FAILURE,
            message: format!("--{name} is required (or set paths.{name})"),
        }),
    }
}

pub fn execute(cli: Cli, log: &mut dyn Write, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            cfg,
            out,
            count,
            seed,
        } => {
            let extra: Vec<(String, String)> = seed
                .map(|s| ("seed".to_string(), s.to_string()))
                .into_iter()
                .collect();
            let rc = resolve(&cfg, &extra, log)?;
            let out = path_or(out, &rc.out, "out")?;
            commands::synth(&rc, &out, count.unwrap_or(rc.count), log)
        }
        Command::Train {
            stage,
            cfg,
            data,
            out,
        } => {
            let rc = resolve(&cfg, &[], log)?;
            let data = path_or(data, &rc.data, "data")?;
            let out = path_or(out, &rc.out, "out")?;
            let stage = match stage {
                StageArg::One => Stage::One,
                StageArg::Two => Stage::Two,
                StageArg::Detector => Stage::Detector,
            };
            commands::train(&rc, stage, &data, &out)
        }
        Command::Restore {
            input,
            ckpt_dir,
            mask,
            mask_file,
            out,
        } => {
            let source = match mask {
                MaskArg::Auto => MaskSource::Auto,
                MaskArg::None => MaskSource::None,
                MaskArg::File => MaskSource::File(mask_file.expect("required by the parser")),
            };
            commands::restore_image(&input, &ckpt_dir, &source, &out, log)
        }
        Command::Eval {
            pairs,
            restored,
            out,
        } => {
            let summary = commands::eval(&pairs, &restored)?;
            match out {
                Some(p) => std::fs::write(&p, summary)
                    .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
                None => stdout.write_all(summary.as_bytes())?,
            }
            Ok(())
        }
        Command::Ablate { cfg, out } => {
            let rc = resolve(&cfg, &[], log)?;
            let out = path_or(out, &rc.out, "out")?;
            commands::ablate(&rc, &out, log)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut stderr = std::io::stderr();
    let mut stdout = std::io::stdout();
    match execute(cli, &mut stderr, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
