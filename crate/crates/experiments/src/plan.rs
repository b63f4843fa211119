//! Experiment plans, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bdlm_core::synth::SyntheticDataset;
use bdlm_core::SegmentationConfig;
use bdlm_model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Single,
    CrossCondition,
    CrossDatasetFull,
    CrossDatasetLimited,
    Sweep,
}

/// Where a dataset's segments come from. Exactly one of `stand_in` and
/// `manifest` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    /// Name of a synthetic stand-in, e.g. `SYN-A`.
    #[serde(default)]
    pub stand_in: Option<String>,
    #[serde(default = "default_segments_per_signal")]
    pub segments_per_signal: usize,
    #[serde(default = "default_conditions", deserialize_with = "conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_fixture_seed")]
    pub fixture_seed: u64,
    /// Dataset manifest, relative to the plan file.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

fn default_segments_per_signal() -> usize {
    200
}

fn default_conditions() -> Vec<String> {
    vec!["0".into()]
}

fn default_fixture_seed() -> u64 {
    1
}

fn conditions<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        S(String),
        I(i64),
    }
    Ok(Vec::<Either>::deserialize(d)?
        .into_iter()
        .map(|e| match e {
            Either::S(s) => s,
            Either::I(i) => i.to_string(),
        })
        .collect())
}

impl DatasetSpec {
    pub fn synthetic(id: &str, stand_in: &str, segments_per_signal: usize) -> Self {
        DatasetSpec {
            id: id.into(),
            stand_in: Some(stand_in.into()),
            segments_per_signal,
            conditions: default_conditions(),
            fixture_seed: default_fixture_seed(),
            manifest: None,
        }
    }

    pub fn stand_in_dataset(&self) -> Option<SyntheticDataset> {
        let name = self.stand_in.as_deref()?;
        SyntheticDataset::stand_ins().into_iter().find(|d| d.id == name)
    }
}

/// One cross-condition row: train on `train` conditions, test on `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(deserialize_with = "conditions")]
    pub train: Vec<String>,
    #[serde(deserialize_with = "conditions")]
    pub test: Vec<String>,
}

impl Partition {
    pub fn name(&self) -> String {
        format!("train {} -> test {}", self.train.join(","), self.test.join(","))
    }
}

/// One cross-dataset row: learn on `sources`, continue and test on `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transfer {
    pub sources: Vec<String>,
    pub target: String,
}

impl Transfer {
    pub fn name(&self) -> String {
        format!("{} -> {}", self.sources.join("+"), self.target)
    }
}

/// (patch length, stride) cells of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Named(String),
    Cells(Vec<(usize, usize)>),
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Named("table8".into())
    }
}

/// The 16 patch/stride cells compared when choosing the tokenisation.
pub const TABLE8_GRID: [(usize, usize); 16] = [
    (256, 8),
    (128, 64),
    (128, 32),
    (128, 16),
    (128, 8),
    (128, 4),
    (64, 32),
    (64, 16),
    (64, 8),
    (64, 4),
    (32, 16),
    (32, 8),
    (32, 4),
    (16, 8),
    (16, 4),
    (8, 4),
];

/// The cell used by default everywhere else.
pub const CHOSEN_CELL: (usize, usize) = (128, 8);

impl Grid {
    pub fn cells(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            Grid::Named(n) if n == "table8" => Ok(TABLE8_GRID.to_vec()),
            Grid::Named(n) => Err(ExperimentError::Plan(format!("unknown grid {n:?}; known: table8"))),
            Grid::Cells(c) => Ok(c.clone()),
        }
    }
}

/// Emit textual corpora for the run's splits instead of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusJob {
    pub out_dir: PathBuf,
    /// Prompt template JSON; the built-in template when absent.
    #[serde(default)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub id: String,
    pub kind: PlanKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_fraction")]
    pub limited_fraction: f64,
    #[serde(default = "default_true")]
    pub balance: bool,
    /// Dataset for single runs and sweeps; the first one when absent.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Phase-1 training of cross-dataset runs; `train` when absent.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub corpus: Option<CorpusJob>,
    #[serde(default, rename = "datasets")]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default, rename = "partition")]
    pub partitions: Vec<Partition>,
    #[serde(default, rename = "transfer")]
    pub transfers: Vec<Transfer>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_trials() -> usize {
    3
}

fn default_fraction() -> f64 {
    0.10
}

fn default_true() -> bool {
    true
}

impl ExperimentPlan {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut plan: ExperimentPlan = toml::from_str(text).map_err(|e| ExperimentError::Plan(e.to_string()))?;
        plan.base_dir = base_dir.to_path_buf();
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            ExperimentError::Plan(m) => ExperimentError::Plan(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans serialise to TOML")
    }

    /// Seeds of the trials: `seed, seed + 1, ...`.
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| self.seed.wrapping_add(t)).collect()
    }

    pub fn dataset_spec(&self, id: &str) -> Result<&DatasetSpec> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| ExperimentError::Plan(format!("unknown dataset {id:?}")))
    }

    /// The dataset of a single run or sweep.
    pub fn primary_dataset(&self) -> Result<&DatasetSpec> {
        match &self.dataset {
            Some(id) => self.dataset_spec(id),
            None => self.datasets.first().ok_or_else(|| ExperimentError::Plan("no datasets".into())),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Plan(m));
        if self.id.is_empty() {
            return bad("id must not be empty".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.limited_fraction > 0.0 && self.limited_fraction <= 1.0) {
            return bad(format!("limited_fraction must be in (0, 1], got {}", self.limited_fraction));
        }
        self.segmentation.validate().map_err(|e| ExperimentError::Plan(e.to_string()))?;
        if self.model.window_len != self.segmentation.window_len {
            return bad(format!(
                "model.window_len {} differs from segmentation.window_len {}",
                self.model.window_len, self.segmentation.window_len
            ));
        }
        if self.model.n_classes != 4 {
            return bad(format!("model.n_classes must be 4, got {}", self.model.n_classes));
        }
        self.model.validate().map_err(|e| ExperimentError::Plan(e.to_string()))?;
        for t in std::iter::once(&self.train).chain(self.pretrain.as_ref()) {
            if t.epochs == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
                return bad("training needs epochs, batch_size and lr above zero".into());
            }
        }
        if self.datasets.is_empty() {
            return bad("at least one [[datasets]] entry is required".into());
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id.as_str()) {
                return bad(format!("dataset {:?} declared twice", d.id));
            }
            match (&d.stand_in, &d.manifest) {
                (Some(_), None) => {
                    if d.stand_in_dataset().is_none() {
                        return bad(format!("dataset {:?}: unknown stand-in {:?}", d.id, d.stand_in));
                    }
                    if d.segments_per_signal == 0 {
                        return bad(format!("dataset {:?}: segments_per_signal must be positive", d.id));
                    }
                    for c in &d.conditions {
                        if c.parse::<u32>().is_err() {
                            return bad(format!("dataset {:?}: synthetic conditions are integers, got {c:?}", d.id));
                        }
                    }
                }
                (None, Some(_)) => {}
                _ => return bad(format!("dataset {:?} needs exactly one of stand_in and manifest", d.id)),
            }
        }
        if let Some(id) = &self.dataset {
            self.dataset_spec(id)?;
        }
        match self.kind {
            PlanKind::Single => {}
            PlanKind::Sweep => {
                let cells = self.grid.cells()?;
                if cells.is_empty() {
                    return bad("sweep grid is empty".into());
                }
                for (p, s) in cells {
                    if p == 0 || s == 0 || p > self.segmentation.window_len {
                        return bad(format!("cell ({p}, {s}) does not fit window {}", self.segmentation.window_len));
                    }
                }
            }
            PlanKind::CrossCondition => {
                if self.partitions.is_empty() {
                    return bad("cross_condition plans need [[partition]] rows".into());
                }
                for p in &self.partitions {
                    if let Some(d) = &p.dataset {
                        self.dataset_spec(d)?;
                    }
                    if p.train.is_empty() || p.test.is_empty() {
                        return bad(format!("partition {}: empty condition set", p.name()));
                    }
                    if p.train.iter().any(|c| p.test.contains(c)) {
                        return bad(format!("partition {}: train and test conditions overlap", p.name()));
                    }
                }
            }
            PlanKind::CrossDatasetFull | PlanKind::CrossDatasetLimited => {
                if self.transfers.is_empty() {
                    return bad("cross-dataset plans need [[transfer]] rows".into());
                }
                for t in &self.transfers {
                    if t.sources.len() < 2 {
                        return bad(format!("transfer {}: needs at least two sources", t.name()));
                    }
                    if t.sources.contains(&t.target) {
                        return bad(format!("transfer {}: target is also a source", t.name()));
                    }
                    for id in t.sources.iter().chain([&t.target]) {
                        self.dataset_spec(id)?;
                    }
                }
            }
        }
        Ok(())
    }
}
