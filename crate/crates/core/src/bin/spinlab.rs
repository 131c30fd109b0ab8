use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spinlab::harness::{
    emit_report, gen_task, gfn_train, grad_check, run_experiment_config, ExperimentConfig, GradCheckOptions, Mode,
};
use spinlab::selfplay::LossKind;
use spinlab::{Result, SpinError};

#[derive(Parser)]
#[command(
    name = "spinlab",
    version,
    about = "Exact desk-scale self-play preference fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    loss: Option<LossArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task and write its policies and SFT data.
    GenTask,
    /// Run self-play fine-tuning and write checkpoints, metrics and a run record.
    Run,
    /// Train a token-level sampler toward the data/base geometric mixture.
    GfnTrain,
    /// Compare analytic loss gradients with finite differences.
    GradCheck,
    /// Summarize a finished run directory.
    Report {
        /// Run directory; defaults to --out or the config's out_dir.
        run_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Spin,
    AlphaSpin,
    Consistent,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Dpo,
    Ipo,
    Slic,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(m) = c.mode {
        cfg.mode = match m {
            ModeArg::Spin => Mode::Spin,
            ModeArg::AlphaSpin => Mode::AlphaSpin,
            ModeArg::Consistent => Mode::Consistent,
        };
    }
    if let Some(l) = c.loss {
        cfg.spin.loss = match l {
            LossArg::Dpo => LossKind::Dpo,
            LossArg::Ipo => LossKind::Ipo,
            LossArg::Slic => LossKind::Slic,
        };
    }
    cfg.sync_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenTask => {
            let cfg = load_config(&cli.common)?;
            let task = gen_task(&cfg, &cfg.out_dir)?;
            println!(
                "task: {} prompts, {} answers, {} SFT pairs, KL(data||base) = {:.6}",
                task.num_prompts(),
                task.space.num_answers(),
                task.sft.len(),
                task.kl_data_to(&task.base)?
            );
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Run => {
            let cfg = load_config(&cli.common)?;
            let record = run_experiment_config(&cfg)?;
            for m in &record.metrics {
                println!(
                    "iteration {}: loss {:.6}  kl_data_model {:.6}  kl_model_base {:.6}",
                    m.iteration, m.mean_train_loss, m.kl_data_model, m.kl_model_base
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::GfnTrain => {
            let cfg = load_config(&cli.common)?;
            let (_, curve) = gfn_train(&cfg, &cfg.out_dir)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!(
                    "subtb loss {:.6} -> {:.6}, tv to target {:.6} -> {:.6}",
                    first.subtb_loss, last.subtb_loss, first.tv_to_target, last.tv_to_target
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::GradCheck => {
            let cfg = load_config(&cli.common)?;
            let report = grad_check(&GradCheckOptions {
                seed: cfg.seed,
                instances: cfg.grad_check_instances,
                ..Default::default()
            })?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Err(SpinError::Run("gradient check failed".into()));
            }
        }
        Command::Report { run_dir } => {
            let dir = match (run_dir, &cli.common.out) {
                (Some(d), _) => d.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) => load_config(&cli.common)?.out_dir,
            };
            print!("{}", emit_report(&dir)?.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
