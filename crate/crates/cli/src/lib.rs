//! Command-line driver for `gradfield`: simulation, fitting, surfaces,
//! heatmaps and the validation suite.

pub mod commands;
pub mod config;
pub mod heatmap;
pub mod validate;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::Resolved;

#[derive(Debug, Parser)]
#[command(name = "gradfield", version, about = "Gradient analysis of spatial surfaces", after_long_help = config::KEYS_HELP)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to GRADFIELD_THREADS, then the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a bivariate field (full.csv, obs.csv) or a point pattern.
    Simulate,
    /// Fit the joint Gaussian-process model to obs.csv.
    FitGp,
    /// Fit the covariate and the log-Gaussian Cox process.
    FitLgcp,
    /// Joint posterior predictive gradient draws at the target grid.
    Gradients,
    /// Posterior summary surfaces of D_uY/D_uX for each direction.
    Sensitivity,
    /// Posterior summary surface of the angular discrepancy.
    Discrepancy,
    /// Minimum-contrast estimate of the latent decay.
    Mincontrast,
    /// Run the self-check suite; exits nonzero on failure.
    Validate {
        #[arg(long, hide = true)]
        inject_sign_error: bool,
    },
}

/// Thread count from the flag, then `GRADFIELD_THREADS`, then the config.
pub fn thread_count(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("GRADFIELD_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n = v.trim().parse().with_context(|| format!("GRADFIELD_THREADS = {v:?} is not a count"))?;
            Ok(Some(n))
        }
        _ => Ok(config),
    }
}

/// Runs one command; `Ok(false)` means validation failed.
pub fn run(cli: Cli) -> Result<bool> {
    let r = Resolved::load(cli.config.as_deref(), cli.seed, cli.out.clone())?;
    if let Some(n) = thread_count(cli.threads, r.cfg.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let written = match cli.command {
        Command::Simulate => commands::simulate(&r)?,
        Command::FitGp => commands::fit_gp(&r)?,
        Command::FitLgcp => commands::fit_lgcp_cmd(&r)?,
        Command::Gradients => commands::gradients(&r)?,
        Command::Sensitivity => commands::sensitivity(&r)?,
        Command::Discrepancy => commands::discrepancy(&r)?,
        Command::Mincontrast => commands::mincontrast(&r)?,
        Command::Validate { inject_sign_error } => {
            let (report, path) = commands::validate_cmd(&r, &validate::Options { inject_sign_error })?;
            println!("wrote {}", path.display());
            return Ok(report.passed);
        }
    };
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(true)
}
