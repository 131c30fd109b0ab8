//! Plot-ready curves and a text summary for a finished run.

use std::fmt::Write as _;
use std::path::Path;

use super::run::RunRecord;
use crate::error::Result;
use crate::fsutil::atomic_write;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: String,
    pub kl_csv: String,
    pub loss_csv: String,
}

/// Builds the report for `run_dir` and writes `report/summary.txt`,
/// `report/kl_curve.csv` and `report/loss_curve.csv` inside it.
pub fn emit_report(run_dir: &Path) -> Result<Report> {
    let record = RunRecord::load(run_dir)?;
    let report = build_report(&record);
    let out = run_dir.join("report");
    std::fs::create_dir_all(&out).map_err(|e| crate::SpinError::io(&out, e))?;
    atomic_write(&out.join("summary.txt"), report.summary.as_bytes())?;
    atomic_write(&out.join("kl_curve.csv"), report.kl_csv.as_bytes())?;
    atomic_write(&out.join("loss_curve.csv"), report.loss_csv.as_bytes())?;
    Ok(report)
}

pub fn build_report(record: &RunRecord) -> Report {
    let mut kl_csv = String::from("iteration,kl_data_model,kl_model_base\n");
    let mut loss_csv = String::from("iteration,mean_train_loss\n");
    for m in &record.metrics {
        writeln!(
            kl_csv,
            "{},{:.16e},{:.16e}",
            m.iteration, m.kl_data_model, m.kl_model_base
        )
        .unwrap();
        writeln!(loss_csv, "{},{:.16e}", m.iteration, m.mean_train_loss).unwrap();
    }

    let mut s = String::new();
    writeln!(s, "mode: {}", record.mode).unwrap();
    writeln!(s, "loss: {}", record.loss).unwrap();
    writeln!(s, "status: {:?}", record.status).unwrap();
    writeln!(s, "iterations: {}", record.metrics.len()).unwrap();
    writeln!(s, "kl_data_base: {:.6}", record.kl_data_base).unwrap();
    for m in &record.metrics {
        writeln!(
            s,
            "  iteration {}: loss {:.6}  kl_data_model {:.6}  kl_model_base {:.6}",
            m.iteration, m.mean_train_loss, m.kl_data_model, m.kl_model_base
        )
        .unwrap();
    }
    if let Some(last) = record.metrics.last() {
        writeln!(s, "final kl_data_model: {:.6}", last.kl_data_model).unwrap();
        writeln!(s, "final kl_model_base: {:.6}", last.kl_model_base).unwrap();
        writeln!(s, "improvement ratio: {:.4}", improvement_ratio(record)).unwrap();
    }
    Report {
        summary: s,
        kl_csv,
        loss_csv,
    }
}

/// `KL(π_data ‖ π_θ_T) / KL(π_data ‖ π_base)`; NaN for an empty run.
pub fn improvement_ratio(record: &RunRecord) -> f64 {
    record
        .metrics
        .last()
        .map_or(f64::NAN, |m| m.kl_data_model / record.kl_data_base)
}
