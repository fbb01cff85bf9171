use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kscu_core::cli::{self, BASE_CKPT, UNLEARNED_CKPT};
use kscu_core::config::ExperimentConfig;
use kscu_core::keystep::Task;
use kscu_core::Result;

#[derive(Parser)]
#[command(name = "kscu", version, about = "Key-step concept unlearning on a toy diffusion model")]
struct Cli {
    /// Experiment config (`section.key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base conditional denoiser.
    TrainBase,
    /// Erase the configured concepts from a base checkpoint.
    Unlearn {
        /// Base checkpoint; defaults to `<out>/base.ckpt`.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Unlearn accuracy, retain accuracy and (optionally) MMD for a checkpoint.
    Eval {
        /// Checkpoint to evaluate; defaults to `<out>/unlearned.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference model for the MMD row, usually the base checkpoint.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        mmd: bool,
    },
    /// Print a key-step table and write its histogram.
    KeystepTable {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        end: Option<usize>,
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        loop_n: Option<usize>,
    },
    /// Analytic vs Monte-Carlo SNR per frequency.
    Freq,
    /// Sweep the key-step start fraction at a matched per-entry budget.
    AblateSteps {
        #[arg(long)]
        base: Option<PathBuf>,
        /// Comma separated start fractions; defaults to `ablate.fractions`.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
}

fn load_config(args: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn or_out(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn run(args: Cli) -> Result<()> {
    let mut cfg = load_config(&args)?;
    let out = args.out.as_path();
    match &args.command {
        Command::TrainBase => {
            cli::cmd_train_base(&cfg, out)?;
        }
        Command::Unlearn { base } => {
            cli::cmd_unlearn(&cfg, out, &or_out(base, out, BASE_CKPT))?;
        }
        Command::Eval { checkpoint, reference, mmd } => {
            let ckpt = or_out(checkpoint, out, UNLEARNED_CKPT);
            cli::cmd_eval(&cfg, out, &ckpt, reference.as_deref(), *mmd)?;
        }
        Command::KeystepTable { task, start, end, len, loop_n } => {
            let u = &mut cfg.unlearn;
            if let Some(t) = task {
                u.task = *t;
            }
            u.start = start.or(u.start);
            u.end = end.or(u.end);
            u.len = len.or(u.len);
            u.loop_n = loop_n.unwrap_or(u.loop_n);
            let (listing, _) = cli::cmd_keystep_table(&cfg, cfg.table_params(), out)?;
            print!("{listing}");
        }
        Command::Freq => {
            cli::cmd_freq(&cfg, out)?;
        }
        Command::AblateSteps { base, fractions } => {
            let fr = fractions.clone().unwrap_or_else(|| cfg.ablate.fractions.clone());
            cli::cmd_ablate_steps(&cfg, out, &or_out(base, out, BASE_CKPT), &fr)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kscu: {e}");
            ExitCode::from(cli::exit_code(&e))
        }
    }
}
