//! `advcat`: command-line front end for the camouflage pipeline.
//!
//! Data goes to files under the output directory, logs to stderr. Usage
//! errors exit with 2; pipeline errors exit with 1 and print a single line
//! `error: <kind>: <message>`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ProjectConfig;

/// Log filter variable (`error`, `warn`, `info`, `debug`, `trace`).
pub const LOG_ENV: &str = "ADVCAT_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "advcat",
    version,
    about = "Adversarial camouflage textures: synthesis, zipping, warping, rendering, calibration and attacks",
    after_help = "Set ADVCAT_LOG (error|warn|info|debug|trace) to control logging on stderr."
)]
pub struct Cli {
    /// Project config (TOML). Missing tables use their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master RNG seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Random camouflage texture: texture.png, texture_soft.png, params.toml.
    Synth,
    /// Zipping relaxation: topo.toml and zip_trace.csv.
    Zip,
    /// Checkerboard renders with no warp, a naive GeoProj shear and the
    /// TopoProj warp: warp_*.png and leak.csv.
    Warp,
    /// Contact sheet of the textured mannequin over the viewing ring.
    Render,
    /// Printer color model: degree selection and fit.
    Calibrate,
    /// Trains the surrogate detector on synthetic renders.
    TrainSurrogate,
    /// Optimizes an adversarial texture against the surrogate.
    Attack,
    /// Attack success rates over the viewing ring.
    Eval,
    /// Finite-difference checks of the texture and end-to-end gradients.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version print to stdout and exit 0; usage errors 2.
            e.exit();
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), single_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: &Cli) -> advcat::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(advcat::Error::Validation("threads must be >= 1".into()));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| advcat::Error::Io { path: out.clone(), source: e })?;
    log::info!("running {:?} into {}", cli.command, out.display());
    commands::dispatch(cli.command, &cfg, &out)
}
