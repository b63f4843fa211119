//! Turning a plan's dataset entries into labelled segments.

use bdlm_core::ingest::load_manifest;
use bdlm_core::synth::fixture_segments;
use bdlm_core::{segment_sliding_window, Segment, SegmentationConfig};

use crate::error::{ExperimentError, Result};
use crate::plan::{DatasetSpec, ExperimentPlan};

/// Segments of one dataset. `dataset_id` is the plan's id for it, and signal
/// ids are prefixed with it when they would otherwise not be unique.
pub fn load_segments(plan: &ExperimentPlan, spec: &DatasetSpec) -> Result<Vec<Segment>> {
    load_spec(spec, &plan.segmentation, |p| plan.resolve(p))
}

fn load_spec(
    spec: &DatasetSpec,
    seg: &SegmentationConfig,
    resolve: impl Fn(&std::path::Path) -> std::path::PathBuf,
) -> Result<Vec<Segment>> {
    let mut out = if let Some(ds) = spec.stand_in_dataset() {
        let conds: Vec<u32> = spec
            .conditions
            .iter()
            .map(|c| c.parse().map_err(|_| ExperimentError::Plan(format!("condition {c:?} is not an integer"))))
            .collect::<Result<_>>()?;
        let mut segs = fixture_segments(&ds, &conds, spec.segments_per_signal, seg, spec.fixture_seed)?;
        if ds.id != spec.id {
            for s in &mut segs {
                s.origin.signal_id = format!("{}:{}", spec.id, s.origin.signal_id);
            }
        }
        segs
    } else if let Some(m) = &spec.manifest {
        let loaded = load_manifest(&resolve(m))?;
        let mut segs = Vec::new();
        for sig in &loaded.signals {
            segs.extend(segment_sliding_window(sig, seg)?);
        }
        segs
    } else {
        return Err(ExperimentError::Plan(format!("dataset {:?} has no source", spec.id)));
    };
    for s in &mut out {
        s.dataset_id = spec.id.clone();
    }
    Ok(out)
}

/// Indices of the segments whose condition is one of `conditions`.
pub fn with_conditions(segments: &[Segment], conditions: &[String]) -> Result<Vec<usize>> {
    for c in conditions {
        if !segments.iter().any(|s| &s.condition_id == c) {
            return Err(ExperimentError::EmptyCondition(c.clone()));
        }
    }
    Ok((0..segments.len()).filter(|&i| conditions.contains(&segments[i].condition_id)).collect())
}
