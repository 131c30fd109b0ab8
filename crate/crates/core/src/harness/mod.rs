//! Config-driven experiment pipeline: task generation, runs, sampler training,
//! gradient checks and reports.

mod config;
mod gradcheck;
mod report;
mod run;

use std::fmt::Write as _;
use std::path::Path;

pub use config::{loss_name, parse_loss, ExperimentConfig, Mode};
pub use gradcheck::{grad_check, CheckedLoss, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use report::{build_report, emit_report, improvement_ratio, Report};
pub use run::{
    checkpoint_name, run_experiment, run_experiment_config, RunRecord, RunStatus, CONFIG_FILE, METRICS_FILE,
    RUN_FORMAT_VERSION, RUN_RECORD_FILE,
};

use crate::error::{Result, SpinError};
use crate::fsutil::atomic_write;
use crate::gflownet::{curve_csv, train_gflownet, GFlowNetSampler, GfnCurvePoint, GfnTarget};
use crate::policy::{Checkpoint, TokenPolicy};
use crate::task::{generate_task, SyntheticTask};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SpinError::io(dir, e))
}

/// Writes the task's policies, prompt weights and SFT pairs under `out`.
pub fn write_task(task: &SyntheticTask, out: &Path) -> Result<()> {
    create_dir(out)?;
    Checkpoint::from(&task.data).save(&out.join("data.ckpt"))?;
    Checkpoint::from(&task.base).save(&out.join("base.ckpt"))?;
    let mut prompts = String::from("prompt,weight\n");
    for (x, w) in task.prompt_weights.iter().enumerate() {
        writeln!(prompts, "{x},{w:.16e}").unwrap();
    }
    atomic_write(&out.join("prompts.csv"), prompts.as_bytes())?;
    let mut sft = String::from("prompt,winner\n");
    for (x, y) in task.sft.pairs() {
        writeln!(sft, "{x},{}", task.space.render(*y)).unwrap();
    }
    atomic_write(&out.join("sft.csv"), sft.as_bytes())
}

pub fn gen_task(cfg: &ExperimentConfig, out: &Path) -> Result<SyntheticTask> {
    cfg.validate()?;
    let task = generate_task(&cfg.task)?;
    write_task(&task, out)?;
    Ok(task)
}

/// Trains a token-level sampler toward `π_data^α · π_base^{1-α}` on the
/// configured task and writes `sampler.ckpt` and `curve.csv` under `out`.
pub fn gfn_train(cfg: &ExperimentConfig, out: &Path) -> Result<(GFlowNetSampler, Vec<GfnCurvePoint>)> {
    cfg.validate()?;
    let task = generate_task(&cfg.task)?;
    let target = GfnTarget::new(
        TokenPolicy::from_sequence_policy(&task.data)?,
        TokenPolicy::from_sequence_policy(&task.base)?,
        cfg.spin.alpha,
    )?;
    let (sampler, curve) = train_gflownet(&target, &cfg.gfn)?;
    create_dir(out)?;
    sampler.to_checkpoint().save(&out.join("sampler.ckpt"))?;
    atomic_write(&out.join("curve.csv"), curve_csv(&curve).as_bytes())?;
    Ok((sampler, curve))
}
