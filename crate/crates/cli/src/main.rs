mod commands;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fryshort_autograd::Exec;
use fryshort_core::config::{Preset, RunConfig};
use fryshort_core::Result;

#[derive(Parser)]
#[command(name = "fryshort", version, about = "RGB-thermal frying-oil model on synthetic fingerprint data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that resolves a run config.
#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// TOML file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; the command owns it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted `key=value` overrides applied after the file.
    #[arg(long, num_args = 1..)]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "toy")]
    pub preset: String,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::resolve(Preset::parse(&self.preset)?, self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset to `<out>/dataset`.
    Generate(ConfigArgs),
    /// Train one model; writes checkpoints, curves and validation metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Existing dataset directory; regenerated from the config otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Named variant applied before overrides take effect.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and evaluate every variant of the grid for each seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated variants; defaults to the full grid.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Video-id linear probe on a checkpoint's deepest thermal features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render SVG charts from a run directory's metrics CSVs.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Worker threads from `FRYSHORT_NUM_WORKERS`; one worker means sequential
/// kernels, which is also the bitwise-reproducible mode.
fn exec_from_env() -> Result<Exec> {
    let Ok(raw) = std::env::var("FRYSHORT_NUM_WORKERS") else {
        return Ok(Exec::auto());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fryshort_core::FryError::Config(format!("FRYSHORT_NUM_WORKERS={raw:?} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    {
        // fails only if a pool already exists, which it cannot at startup
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(if n == 1 { Exec::Sequential } else { Exec::auto() })
}

fn run(cli: Cli) -> Result<()> {
    let exec = exec_from_env()?;
    match cli.command {
        Command::Generate(cfg) => commands::generate(&cfg),
        Command::Train { cfg, data, variant } => commands::train(&cfg, data.as_deref(), variant.as_deref(), exec),
        Command::Eval {
            checkpoint,
            out,
            data,
            split,
        } => commands::eval(&checkpoint, &out, data.as_deref(), &split, exec),
        Command::Ablate {
            cfg,
            data,
            variants,
            seeds,
        } => commands::ablate(&cfg, data.as_deref(), &variants, &seeds, exec),
        Command::Probe { checkpoint, out, data } => commands::probe(&checkpoint, &out, data.as_deref()),
        Command::Plot { run } => plot::plot_run(&run),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
