use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "l1sa", version, about = "Self/environment differentiation from fused vision and proprioception")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Omit wall-clock fields so outputs are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Run directory for checkpoints and reports.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Dataset directory (defaults to `<out>/data`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the four scene datasets.
    Gen {
        /// Group 1-4 or `all`.
        #[arg(long, default_value = "all")]
        group: String,
        #[arg(long)]
        samples_per_scene: Option<usize>,
    },
    /// Train the model for one group.
    Train {
        #[arg(long)]
        group: u8,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Confusion matrix on the group's held-out scene.
    Eval {
        #[arg(long)]
        group: u8,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Four-case confounding ablation on the held-out scene.
    Ablate {
        #[arg(long)]
        group: u8,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Gradient saliency maps for held-out samples.
    Saliency {
        #[arg(long)]
        group: u8,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Pairwise weight mutual information between 2-4 checkpoints.
    Mi {
        #[arg(num_args = 2..=4, required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// vision-projection, fc0, fc1 or fc2.
        #[arg(long)]
        layer: Option<String>,
    },
    /// Summarise every group and case found in a run directory.
    Report {
        run_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
