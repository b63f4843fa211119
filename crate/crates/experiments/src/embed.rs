//! Pooled model representations as CSV, for external visualisation.

use std::io::Write;
use std::path::Path;

use bdlm_core::Segment;
use bdlm_model::Model;

use crate::error::{ExperimentError, Result};

/// Columns: origin, label and dataset metadata, then `e0 .. e{d-1}`.
pub fn write_embeddings<W: Write>(model: &Model, segments: &[&Segment], out: W) -> Result<usize> {
    let d = model.config().d_model;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["signal_id", "start", "label", "dataset_id", "condition_id"].map(String::from).into();
    header.extend((0..d).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for chunk in segments.chunks(64) {
        let windows: Vec<&[f64]> = chunk.iter().map(|s| s.samples.as_slice()).collect();
        for (s, e) in chunk.iter().zip(model.embeddings(&windows)?) {
            let mut row = vec![
                s.origin.signal_id.clone(),
                s.origin.start.to_string(),
                s.label.to_string(),
                s.dataset_id.clone(),
                s.condition_id.clone(),
            ];
            row.extend(e.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| ExperimentError::io("<embeddings csv>", e))?;
    Ok(segments.len())
}

pub fn export_embeddings(model: &Model, segments: &[&Segment], path: &Path) -> Result<usize> {
    let f = std::fs::File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    write_embeddings(model, segments, std::io::BufWriter::new(f))
}
