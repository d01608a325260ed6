//! `drank` command-line front end: experiment configuration, training
//! comparisons and CSV artifacts.

pub mod commands;
pub mod config;
pub mod experiments;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, ValueEnum};

pub use commands::Status;
pub use config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Histograms of tilted Gaussian score samples.
    TiltDemo,
    /// Hinge loss and its smooth variants on a grid.
    LossCurves,
    /// Finite-difference check of every loss gradient.
    Gradcheck,
    /// Train one loss on a synthetic dataset.
    Train,
    /// Train every loss over several seeds and summarize.
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TiltDemo => "tilt-demo",
            Command::LossCurves => "loss-curves",
            Command::Gradcheck => "gradcheck",
            Command::Train => "train",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "drank", version, about = "Distributional ranking loss experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Config file with one `key = value` per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturb one analytic gradient entry (gradcheck).
    #[arg(long)]
    pub corrupt: bool,
    /// `key=value` overrides.
    pub overrides: Vec<String>,
}

impl Cli {
    /// Defaults, then the config file, then `key=value` items, then flags.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        for item in &self.overrides {
            cfg.assign(item)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            cfg.set("out", &out.to_string_lossy())?;
        }
        if self.corrupt {
            cfg.set("corrupt", "true")?;
        }
        Ok(cfg)
    }
}

pub fn execute(command: Command, cfg: &Config) -> Result<Status> {
    match command {
        Command::TiltDemo => commands::tilt_demo(cfg),
        Command::LossCurves => commands::loss_curves(cfg),
        Command::Gradcheck => commands::gradcheck(cfg),
        Command::Train => commands::train(cfg),
        Command::Compare => commands::compare_cmd(cfg),
    }
}
