use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// How token states are reduced before the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    Query,
    Value,
}

impl LoraTarget {
    pub fn proj(self) -> &'static str {
        match self {
            LoraTarget::Query => "q",
            LoraTarget::Value => "v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default = "default_targets")]
    pub targets: Vec<LoraTarget>,
}

fn default_targets() -> Vec<LoraTarget> {
    vec![LoraTarget::Query, LoraTarget::Value]
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub window_len: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub lora: Option<LoraConfig>,
    pub quantize_base: bool,
    pub pooling: Pooling,
    /// Mask attention to earlier patches, as in GPT-2.
    pub causal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window_len: 2048,
            patch_len: 128,
            stride: 8,
            d_model: 128,
            n_heads: 4,
            n_layers: 3,
            ffn_mult: 4,
            n_classes: 4,
            seed: 0,
            lora: None,
            quantize_base: false,
            pooling: Pooling::Mean,
            causal: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad(format!("d_model {} must be even", self.d_model));
        }
        if self.patch_len == 0 || self.patch_len > self.window_len {
            return bad(format!(
                "patch_len {} must be in 1..={}",
                self.patch_len, self.window_len
            ));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if let Some(l) = &self.lora {
            if l.rank == 0 {
                return bad("LoRA rank must be positive".into());
            }
            if l.rank > self.d_model {
                return Err(ModelError::RankTooLarge {
                    rank: l.rank,
                    rows: self.d_model,
                    cols: self.d_model,
                });
            }
        }
        Ok(())
    }

    /// Number of patches per window.
    pub fn n_patches(&self) -> usize {
        (self.window_len - self.patch_len) / self.stride + 1
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ffn(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}
