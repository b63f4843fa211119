//! Experiment reports: JSON document, flat CSV and determinism digest.

use std::io::Write;
use std::path::{Path, PathBuf};

use bdlm_model::EpochLog;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ExperimentError, Result};
use crate::metrics::ConfusionMatrix;
use crate::plan::{Partition, PlanKind, Transfer};

/// Mean with the asymmetric spread `+ (max - mean) / - (mean - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub plus: f64,
    pub minus: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: 0.0, min: 0.0, max: 0.0, plus: 0.0, minus: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Rounding in the sum can put the mean a hair outside the range.
        let mean = mean.clamp(min, max);
        Summary { mean, min, max, plus: max - mean, minus: mean - min }
    }

    /// `0.9955 +0.0024/-0.0024`
    pub fn display(&self) -> String {
        format!("{:.4} +{:.4}/-{:.4}", self.mean, self.plus, self.minus)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub sizes: SplitSizes,
    /// SHA-256 of the training windows this trial fit on, see
    /// [`membership_digest`](crate::runner::membership_digest).
    pub train_digest: String,
    /// Phase-1 epochs of a transfer arm.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pretrain_log: Vec<EpochLog>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    /// `model` for plain runs, `transfer` or `baseline` for cross-dataset runs.
    pub arm: String,
    pub trials: Vec<TrialReport>,
    pub summary: Summary,
    pub best_trial: usize,
    pub best_confusion: ConfusionMatrix,
}

impl ArmReport {
    pub fn new(arm: &str, trials: Vec<TrialReport>) -> Self {
        let accs: Vec<f64> = trials.iter().map(|t| t.test_accuracy).collect();
        // Earliest trial wins ties.
        let best_trial = accs
            .iter()
            .enumerate()
            .fold(0, |b, (i, a)| if *a > accs[b] { i } else { b });
        ArmReport {
            arm: arm.into(),
            summary: Summary::of(&accs),
            best_confusion: trials.get(best_trial).map(|t| t.confusion.clone()).unwrap_or_default(),
            best_trial,
            trials,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.test_accuracy).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub patch_len: usize,
    pub stride: usize,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub path: PathBuf,
    pub lines: usize,
}

/// One row of a plan: a partition, a transfer pair, a sweep cell or the
/// single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<Transfer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<SweepCell>,
    pub arms: Vec<ArmReport>,
    /// Paired per-trial `transfer - baseline` accuracies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub differences: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difference: Option<Summary>,
    /// Overlapping window pairs across splits, summed over trials.
    pub leakage: usize,
    /// Phase-1 segments drawn from the target dataset, summed over trials.
    #[serde(default)]
    pub target_in_pretrain: usize,
    /// SHA-256 of the limited-data subsample of each trial.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsample_digests: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corpus_files: Vec<CorpusFile>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(name: impl Into<String>) -> Self {
        RunReport {
            name: name.into(),
            partition: None,
            transfer: None,
            cell: None,
            arms: Vec::new(),
            differences: Vec::new(),
            difference: None,
            leakage: 0,
            target_in_pretrain: 0,
            subsample_digests: Vec::new(),
            corpus_files: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan_id: String,
    pub kind: PlanKind,
    /// The plan as run, in its TOML form.
    pub plan: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn leakage(&self) -> usize {
        self.runs.iter().map(|r| r.leakage + r.target_in_pretrain).sum()
    }

    /// SHA-256 of the JSON form with every wall time zeroed.
    pub fn digest(&self) -> String {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        for run in &mut r.runs {
            run.wall_time_s = 0.0;
        }
        let bytes = serde_json::to_vec(&r).expect("reports serialise");
        hex(&Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Plan(format!("report: {e}")))
    }

    /// One row per (run, arm, trial, epoch, metric). Trial-level metrics
    /// leave `epoch` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["plan_id", "run", "arm", "trial", "epoch", "metric", "value"])?;
        for run in &self.runs {
            for arm in &run.arms {
                for (ti, t) in arm.trials.iter().enumerate() {
                    let mut row = |epoch: String, metric: &str, value: f64| {
                        w.write_record([
                            self.plan_id.as_str(),
                            run.name.as_str(),
                            arm.arm.as_str(),
                            &ti.to_string(),
                            &epoch,
                            metric,
                            &value.to_string(),
                        ])
                    };
                    for e in &t.pretrain_log {
                        row(e.epoch.to_string(), "pretrain_loss", e.train_loss)?;
                        row(e.epoch.to_string(), "pretrain_val_accuracy", e.val_accuracy)?;
                    }
                    for e in &t.log {
                        row(e.epoch.to_string(), "train_loss", e.train_loss)?;
                        row(e.epoch.to_string(), "val_accuracy", e.val_accuracy)?;
                    }
                    row(String::new(), "test_accuracy", t.test_accuracy)?;
                }
            }
        }
        w.flush().map_err(|e| ExperimentError::io("<report csv>", e))?;
        Ok(())
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to each other.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        }
        std::fs::write(&json, self.to_json()).map_err(|e| ExperimentError::io(&json, e))?;
        let f = std::fs::File::create(&csv_path).map_err(|e| ExperimentError::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        Ok((json, csv_path))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
