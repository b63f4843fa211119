use bdlm_core::FaultLabel;

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("class {label} has {have} segments, need at least {need}")]
    ClassTooSmall { label: FaultLabel, have: usize, need: usize },

    #[error("condition {0:?} has no segments")]
    EmptyCondition(String),

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),

    #[error("length mismatch: {predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },

    /// The plan itself is unusable; callers treat this as a usage error.
    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("leakage: {0} overlapping windows across splits")]
    Leakage(usize),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] bdlm_core::Error),

    #[error(transparent)]
    Model(#[from] bdlm_model::ModelError),
}

impl ExperimentError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ExperimentError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// True for errors caused by the plan rather than by running it.
    pub fn is_usage(&self) -> bool {
        matches!(self, ExperimentError::Plan(_))
    }
}
