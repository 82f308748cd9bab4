//! End-to-end execution of a [`RunConfig`]: data, training and output files.
//!
//! Files written to the output directory:
//! - `metrics.csv`: one [`MetricsRecord`] per epoch
//! - `diagnostics.json`: final-epoch confidence densities, heatmap and
//!   corrected-label confusion matrix (when enabled)
//! - `checkpoint.json`: the trained network (when enabled)
//! - `summary.json`: a [`RunSummary`]

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::diagnostics::{
    confidence_density, confidence_heatmap, corrected_confusion, metrics_csv, ConfidenceDensity, ConfidenceHeatmap,
    ConfusionMatrix, MetricsRecord,
};
use crate::error::{Error, Result};
use crate::training::{train, EvalSet, TrainOutcome};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub final_test_accuracy: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub final_correction_accuracy: Option<f64>,
    pub metrics_csv: PathBuf,
    pub diagnostics_json: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// The only field that varies between otherwise identical runs.
    pub wall_clock_seconds: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalDiagnostics {
    pub confidence_density: Option<ConfidenceDensity>,
    pub heatmap: Option<ConfidenceHeatmap>,
    pub corrected_confusion: Option<ConfusionMatrix>,
}

/// In-memory result of [`execute`].
pub struct RunOutput {
    pub summary: RunSummary,
    pub outcome: TrainOutcome,
    pub diagnostics: FinalDiagnostics,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn final_diagnostics(
    cfg: &RunConfig,
    outcome: &TrainOutcome,
    ds: &crate::data::LabeledDataset,
) -> Result<FinalDiagnostics> {
    let d = &cfg.diagnostics;
    let need_tau = d.confidence_density || d.heatmap;
    let tau = if need_tau {
        outcome.net.forward(&ds.features)?.tau
    } else {
        Vec::new()
    };
    let mask = ds.clean_mask();
    Ok(FinalDiagnostics {
        confidence_density: d
            .confidence_density
            .then(|| confidence_density(&tau, &mask, d.density_bins))
            .transpose()?,
        heatmap: d
            .heatmap
            .then(|| confidence_heatmap(&tau, &ds.clean_labels, ds.observed_labels(), ds.num_classes))
            .transpose()?,
        corrected_confusion: d
            .confusion
            .then(|| corrected_confusion(&outcome.targets, &ds.clean_labels))
            .transpose()?,
    })
}

/// Trains per `cfg`, writes every output file and returns the summary.
/// `on_epoch` sees each record as it is produced.
pub fn execute(cfg: &RunConfig, on_epoch: impl FnMut(&MetricsRecord)) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let data = cfg.prepare_data()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let eval = data.test.as_ref().map(|t| EvalSet {
        features: &t.features,
        labels: &t.clean_labels,
    });
    let outcome = train(&data.train, &cfg.train, eval, on_epoch)?;

    let metrics_path = dir.join(METRICS_FILE);
    write(&metrics_path, &metrics_csv(&outcome.metrics))?;

    let diagnostics = final_diagnostics(cfg, &outcome, &data.train)?;
    let diagnostics_path = if cfg.diagnostics.any_report() {
        let path = dir.join(DIAGNOSTICS_FILE);
        write(&path, &serde_json::to_string_pretty(&diagnostics)?)?;
        Some(path)
    } else {
        None
    };
    let checkpoint_path = if cfg.diagnostics.checkpoint {
        let path = dir.join(CHECKPOINT_FILE);
        checkpoint::save(&path, &outcome.net)?;
        Some(path)
    } else {
        None
    };

    let last = outcome.metrics.last();
    let summary = RunSummary {
        seed: cfg.train.seed,
        epochs: cfg.train.epochs,
        final_test_accuracy: last.and_then(|r| r.test_accuracy),
        final_train_accuracy: last.map(|r| r.train_accuracy),
        final_correction_accuracy: last.map(|r| r.correction_accuracy),
        metrics_csv: metrics_path,
        diagnostics_json: diagnostics_path,
        checkpoint: checkpoint_path,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutput {
        summary,
        outcome,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, loss: &str, beta: f64) -> RunConfig {
        let text = format!(
            r#"{{
              "dataset": {{"kind": "blobs", "classes": 3, "per_class": 15, "dim": 2, "separation": 4.0, "spread": 1.0, "seed": 1}},
              "split": {{"test_fraction": 0.2, "seed": 2}},
              "noise": {{"kind": "symmetric", "rate": 0.4, "seed": 3}},
              "train": {{
                "loss": "{loss}", "hidden": [8], "epochs": 4, "batch_size": 8,
                "lr_max": 0.02, "lr_min": 0.001, "period": 2, "momentum": 0.9,
                "weight_decay": 0.001, "lambda": 0.5, "beta": {beta}, "log_zero": -4.0,
                "target_start": 2, "alpha": 0.5, "delta": 0.0, "seed": 4
              }},
              "output_dir": {:?},
              "diagnostics": {{"checkpoint": true}}
            }}"#,
            dir.to_str().unwrap()
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn writes_all_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let out = execute(&config(tmp.path(), "car", 0.3), |_| {}).unwrap();
        let csv = std::fs::read_to_string(&out.summary.metrics_csv).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(out.summary.final_test_accuracy.is_some());
        for f in [SUMMARY_FILE, DIAGNOSTICS_FILE, CHECKPOINT_FILE] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        let net = checkpoint::load(&tmp.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(net, out.outcome.net);
        let conf = out.diagnostics.corrected_confusion.unwrap();
        let acc = out.summary.final_correction_accuracy.unwrap();
        assert_eq!(conf.trace() as f64 / conf.total() as f64, acc);
    }

    #[test]
    fn zero_beta_car_matches_cal() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        execute(&config(a.path(), "car", 0.0), |_| {}).unwrap();
        execute(&config(b.path(), "cal", 0.0), |_| {}).unwrap();
        let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }
}
