//! Experiment protocols on top of the signal pipeline and the classifier:
//! leakage-free splits, single-dataset, cross-condition and cross-dataset
//! runs, the patch/stride sweep, metrics and reports.

pub mod data;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod plan;
pub mod report;
pub mod runner;
pub mod split;

pub use embed::export_embeddings;
pub use error::{ExperimentError, Result};
pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use plan::{DatasetSpec, ExperimentPlan, Grid, Partition, PlanKind, Transfer, TABLE8_GRID};
pub use report::{ArmReport, ExperimentReport, RunReport, Summary, TrialReport};
pub use runner::{
    evaluate, run_cross_condition, run_cross_dataset_full, run_cross_dataset_limited, run_plan, run_plan_with_model,
    run_single, sweep_patch_stride,
};
pub use split::{build_splits, Part, SplitMode, SplitSpec, Splits};

/// The guide's snippets, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/signals.md")]
    struct Signals;
    #[doc = include_str!("../../../book/src/features.md")]
    struct Features;
    #[doc = include_str!("../../../book/src/corpora.md")]
    struct Corpora;
    #[doc = include_str!("../../../book/src/model.md")]
    struct ModelChapter;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    struct Reproducibility;
}
