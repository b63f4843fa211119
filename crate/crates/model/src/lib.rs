//! A small patch-transformer classifier for vibration windows.
//!
//! Attention and FFN weights are frozen; the value embedding, position
//! table, LayerNorm affines, head and optional LoRA adapters train. Frozen
//! matrices may be stored as int4 blocks.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod lora;
pub mod loss;
pub mod model;
pub mod params;
pub mod quant;
pub mod tensor;
pub mod train;

pub use config::{LoraConfig, LoraTarget, ModelConfig, Pooling};
pub use error::{ModelError, Result};
pub use model::{Gradients, Model};
pub use params::{Param, ParamValue, ParameterSet, Tag};
pub use quant::QuantizedMatrix;
pub use tensor::Tensor;
pub use train::{train, EpochLog, Sample, TrainConfig, TrainOutcome};
