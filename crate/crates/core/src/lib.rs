//! Signal-side building blocks for bearing fault diagnosis: recordings and
//! their segmentation, spectra, the 24 statistical features, textual
//! fine-tuning corpora and dataset loaders.

pub mod error;
pub mod features;
pub mod ingest;
pub mod signal;
pub mod spectral;
pub mod synth;
pub mod textgen;

pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector};
pub use signal::{
    instance_normalize, segment_sliding_window, FaultLabel, Segment, SegmentOrigin,
    SegmentationConfig, Signal,
};
pub use spectral::{magnitude_spectrum, stft, Spectrogram, Spectrum};
