//! Experiment execution and run-directory persistence.
//!
//! ```text
//! <out_dir>/config.txt
//! <out_dir>/checkpoints/iter_000.ckpt ...
//! <out_dir>/gfn/iter_000.csv ...        (consistent mode with a trained sampler)
//! <out_dir>/metrics.csv
//! <out_dir>/run.json
//! ```
//!
//! Every file is written atomically. `run.json` is rewritten after each
//! iteration's checkpoint and metrics are on disk, so it never lists a
//! checkpoint that was not written.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{loss_name, ExperimentConfig, Mode};
use crate::error::{Result, SpinError};
use crate::fsutil::atomic_write;
use crate::gflownet::curve_csv;
use crate::policy::Checkpoint;
use crate::selfplay::{metrics_csv, run_alpha_spin_with, run_spin_with, IterationMetrics, IterationOutput};
use crate::task::generate_task;

pub const RUN_FORMAT_VERSION: u32 = 1;
pub const RUN_RECORD_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Contents of the config snapshot.
    pub config: String,
    pub mode: String,
    pub loss: String,
    /// `Σ_x q(x) KL(π_data ‖ π_base)`, the starting point of every run.
    pub kl_data_base: f64,
    pub metrics: Vec<IterationMetrics>,
    /// Paths relative to the run directory, one per finished iteration.
    pub checkpoints: Vec<String>,
    pub wall_seconds_total: f64,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| SpinError::io(&path, e))?;
        let record: RunRecord = serde_json::from_str(&text).map_err(|e| SpinError::parse(&path, e.to_string()))?;
        if record.format_version != RUN_FORMAT_VERSION {
            return Err(SpinError::parse(
                &path,
                format!("unsupported run format version {}", record.format_version),
            ));
        }
        if record.checkpoints.len() != record.metrics.len() {
            return Err(SpinError::parse(&path, "checkpoint and metrics counts differ"));
        }
        Ok(record)
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        atomic_write(&run_dir.join(RUN_RECORD_FILE), text.as_bytes())
    }

    /// Checks that every listed checkpoint exists and parses.
    pub fn verify_checkpoints(&self, run_dir: &Path) -> Result<()> {
        for rel in &self.checkpoints {
            Checkpoint::load(&run_dir.join(rel))?.into_tabular()?;
        }
        Ok(())
    }
}

pub fn checkpoint_name(t: usize) -> String {
    format!("checkpoints/iter_{t:03}.ckpt")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SpinError::io(dir, e))
}

/// Runs the experiment described by `cfg`, writing artifacts under `cfg.out_dir`.
pub fn run_experiment_config(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let dir: PathBuf = cfg.out_dir.clone();
    create_dir(&dir.join("checkpoints"))?;
    let config_text = cfg.to_text();
    atomic_write(&dir.join(CONFIG_FILE), config_text.as_bytes())?;

    let task = generate_task(&cfg.task)?;
    let mut record = RunRecord {
        format_version: RUN_FORMAT_VERSION,
        status: RunStatus::Running,
        error: None,
        config: config_text,
        mode: cfg.mode.as_str().to_string(),
        loss: loss_name(cfg.spin.loss).to_string(),
        kl_data_base: task.kl_data_to(&task.base)?,
        metrics: Vec::new(),
        checkpoints: Vec::new(),
        wall_seconds_total: 0.0,
    };
    record.save(&dir)?;
    let wall = |r: &mut RunRecord| {
        if cfg.spin.record_wall_time {
            r.wall_seconds_total = started.elapsed().as_secs_f64();
        }
    };

    let observe = |out: &IterationOutput, record: &mut RunRecord| -> Result<()> {
        let t = out.metrics.iteration;
        let rel = checkpoint_name(t);
        Checkpoint::from(&out.policy).save(&dir.join(&rel))?;
        if let Some(curve) = &out.gfn_curve {
            create_dir(&dir.join("gfn"))?;
            atomic_write(&dir.join(format!("gfn/iter_{t:03}.csv")), curve_csv(curve).as_bytes())?;
        }
        record.metrics.push(out.metrics.clone());
        record.checkpoints.push(rel);
        atomic_write(&dir.join(METRICS_FILE), metrics_csv(&record.metrics).as_bytes())?;
        wall(record);
        record.save(&dir)
    };

    let result = match cfg.mode {
        Mode::Spin => run_spin_with(&cfg.spin, &task, |o| observe(o, &mut record)),
        Mode::AlphaSpin | Mode::Consistent => run_alpha_spin_with(&cfg.spin, &task, |o| observe(o, &mut record)),
    };
    wall(&mut record);
    match result {
        Ok(_) => {
            record.status = RunStatus::Complete;
            record.save(&dir)?;
            Ok(record)
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            record.save(&dir)?;
            Err(e)
        }
    }
}

/// Loads the config at `config_path` and runs it.
pub fn run_experiment(config_path: &Path) -> Result<RunRecord> {
    run_experiment_config(&ExperimentConfig::load(config_path)?)
}
