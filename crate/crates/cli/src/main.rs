//! `aeloc`: generate synthetic recordings, train per-fold models, run a
//! system, score it and export plot data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeloc_core::eval::Variant;
use clap::{Parser, Subcommand};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "aeloc", version, about = "Acoustic event detection and localization with multiple arrays")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "AELOC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "AELOC_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "AELOC_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset of sessions.
    Generate {
        #[arg(long, env = "AELOC_OUT")]
        out: PathBuf,
    },
    /// Train leave-one-session-out models and priors.
    Train {
        #[arg(long, env = "AELOC_DATA")]
        data: PathBuf,
        /// Model directory.
        #[arg(long, env = "AELOC_OUT")]
        out: PathBuf,
    },
    /// Run one system on every session with its fold's models.
    Run {
        #[arg(long, env = "AELOC_DATA")]
        data: PathBuf,
        #[arg(long, env = "AELOC_MODELS")]
        models: PathBuf,
        #[arg(long, env = "AELOC_VARIANT")]
        variant: Option<String>,
        #[arg(long, env = "AELOC_SOURCES")]
        sources: Option<usize>,
        /// Hypothesis directory.
        #[arg(long, env = "AELOC_OUT")]
        out: PathBuf,
    },
    /// Score hypothesis files against the ground truth.
    Eval {
        #[arg(long, env = "AELOC_DATA")]
        data: PathBuf,
        #[arg(long, env = "AELOC_HYPS")]
        hyps: PathBuf,
        /// Comma-separated list; defaults to the configured variant.
        #[arg(long, env = "AELOC_VARIANT", value_delimiter = ',')]
        variant: Vec<String>,
        #[arg(long, env = "AELOC_SOURCES")]
        sources: Option<usize>,
        /// Report directory.
        #[arg(long, env = "AELOC_OUT")]
        out: PathBuf,
    },
    /// Write plot data: prior heatmaps and SRP maps as grid text files.
    Report {
        #[arg(long, env = "AELOC_DATA")]
        data: PathBuf,
        #[arg(long, env = "AELOC_MODELS")]
        models: PathBuf,
        #[arg(long, env = "AELOC_OUT")]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> aeloc_core::Result<()> {
    let (rc, base) = match &cli.config {
        Some(p) => (RunConfig::load(p)?, p.parent().unwrap_or(Path::new(".")).to_path_buf()),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    let seed = cli.seed.or(rc.seed).unwrap_or(1);
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| aeloc_core::Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { out } => {
            let scene = rc.scene(&base)?;
            commands::generate(&scene, &rc.dataset(seed)?, &out)
        }
        Command::Train { data, out } => {
            let scene = commands::load_dataset(&data)?.scene;
            commands::train(&data, &out, &rc.system(&scene, seed)?)
        }
        Command::Run {
            data,
            models,
            variant,
            sources,
            out,
        } => {
            let scene = aeloc_core::SceneConfig::load(&data.join("scene.toml"))?;
            let variant = rc.variant(variant.as_deref())?;
            commands::run(&data, &models, &out, variant, rc.sources(sources)?, &rc.system(&scene, seed)?)
        }
        Command::Eval {
            data,
            hyps,
            variant,
            sources,
            out,
        } => {
            let variants: Vec<Variant> = if variant.is_empty() {
                vec![rc.variant(None)?]
            } else {
                variant.iter().map(|v| rc.variant(Some(v))).collect::<aeloc_core::Result<_>>()?
            };
            let min_overlap = rc.model.min_overlap.unwrap_or(0.0);
            let reports = commands::eval(&data, &hyps, &out, &variants, rc.sources(sources)?, min_overlap)?;
            print!("{}", aeloc_core::eval::render_table(&reports));
            Ok(())
        }
        Command::Report { data, models, out } => {
            let scene = aeloc_core::SceneConfig::load(&data.join("scene.toml"))?;
            let n = commands::report(&data, &models, &out, &rc.system(&scene, seed)?)?;
            log::info!("wrote {n} grid files to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                aeloc_core::Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
