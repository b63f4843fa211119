//! Signals, fault labels and sliding-window segmentation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance guard used by [`instance_normalize`].
pub const NORM_EPS: f64 = 1e-5;

/// Bearing health state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultLabel {
    Normal,
    InnerRace,
    OuterRace,
    RollingElement,
}

impl FaultLabel {
    pub const ALL: [FaultLabel; 4] = [
        FaultLabel::Normal,
        FaultLabel::InnerRace,
        FaultLabel::OuterRace,
        FaultLabel::RollingElement,
    ];

    /// Class order used for confusion matrices and class indices:
    /// ball, inner, normal, outer.
    pub const CLASS_ORDER: [FaultLabel; 4] = [
        FaultLabel::RollingElement,
        FaultLabel::InnerRace,
        FaultLabel::Normal,
        FaultLabel::OuterRace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultLabel::Normal => "normal",
            FaultLabel::InnerRace => "inner_race",
            FaultLabel::OuterRace => "outer_race",
            FaultLabel::RollingElement => "rolling_element",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FaultLabel::Normal => "normal",
            FaultLabel::InnerRace => "inner",
            FaultLabel::OuterRace => "outer",
            FaultLabel::RollingElement => "ball",
        }
    }

    /// Position of the label in [`FaultLabel::CLASS_ORDER`].
    pub fn class_index(self) -> usize {
        match self {
            FaultLabel::RollingElement => 0,
            FaultLabel::InnerRace => 1,
            FaultLabel::Normal => 2,
            FaultLabel::OuterRace => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Option<FaultLabel> {
        Self::CLASS_ORDER.get(i).copied()
    }
}

impl fmt::Display for FaultLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "normal" | "n" => Ok(FaultLabel::Normal),
            "inner_race" | "inner" | "ir" | "inner_ring" => Ok(FaultLabel::InnerRace),
            "outer_race" | "outer" | "or" | "outer_ring" => Ok(FaultLabel::OuterRace),
            "rolling_element" | "ball" | "b" | "re" => Ok(FaultLabel::RollingElement),
            _ => Err(Error::InvalidConfig(format!("unknown fault label {s:?}"))),
        }
    }
}

/// A labelled vibration recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub dataset_id: String,
    pub condition_id: String,
    pub label: FaultLabel,
}

impl Signal {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f64>,
        sample_rate_hz: f64,
        dataset_id: impl Into<String>,
        condition_id: impl Into<String>,
        label: FaultLabel,
    ) -> Result<Self> {
        let signal = Signal {
            id: id.into(),
            samples,
            sample_rate_hz,
            dataset_id: dataset_id.into(),
            condition_id: condition_id.into(),
            label,
        };
        signal.validate()?;
        Ok(signal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidSignal(format!("{}: no samples", self.id)));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "{}: sample rate must be positive, got {}",
                self.id, self.sample_rate_hz
            )));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSignal(format!(
                "{}: non-finite sample at index {i}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_len: usize,
    pub step: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            window_len: 2048,
            step: 1024,
        }
    }
}

impl SegmentationConfig {
    pub fn new(window_len: usize, step: usize) -> Result<Self> {
        let cfg = SegmentationConfig { window_len, step };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::InvalidConfig("window_len must be positive".into()));
        }
        if self.step == 0 || self.step > self.window_len {
            return Err(Error::InvalidConfig(format!(
                "step must be in 1..={}, got {}",
                self.window_len, self.step
            )));
        }
        Ok(())
    }

    /// Number of full windows that fit in `len` samples.
    pub fn segment_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.step + 1
        }
    }
}

/// Where a segment came from: the parent signal and its first sample index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentOrigin {
    pub signal_id: String,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub origin: SegmentOrigin,
    pub sample_rate_hz: f64,
    pub label: FaultLabel,
    pub condition_id: String,
    pub dataset_id: String,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Half-open sample range `[start, start + len)` in the parent signal.
    pub fn span(&self) -> std::ops::Range<usize> {
        self.origin.start..self.origin.start + self.samples.len()
    }

    /// True when both segments come from the same signal and share samples.
    pub fn overlaps(&self, other: &Segment) -> bool {
        if self.origin.signal_id != other.origin.signal_id {
            return false;
        }
        let (a, b) = (self.span(), other.span());
        a.start < b.end && b.start < a.end
    }
}

/// Cut a signal into fixed-length windows starting every `cfg.step` samples.
///
/// Samples after the last full window are dropped.
pub fn segment_sliding_window(signal: &Signal, cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let len = signal.samples.len();
    if len < cfg.window_len {
        return Err(Error::SignalTooShort {
            len,
            required: cfg.window_len,
        });
    }
    let count = cfg.segment_count(len);
    Ok((0..count)
        .map(|i| {
            let start = i * cfg.step;
            Segment {
                samples: signal.samples[start..start + cfg.window_len].to_vec(),
                origin: SegmentOrigin {
                    signal_id: signal.id.clone(),
                    start,
                },
                sample_rate_hz: signal.sample_rate_hz,
                label: signal.label,
                condition_id: signal.condition_id.clone(),
                dataset_id: signal.dataset_id.clone(),
            }
        })
        .collect())
}

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Standardise a window to zero mean and unit variance: `(x - mean) / sqrt(var + eps)`.
///
/// A constant window maps to all zeros.
pub fn instance_normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let (mean, var) = mean_var(xs);
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    xs.iter().map(|x| (x - mean) * inv).collect()
}
