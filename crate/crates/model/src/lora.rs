//! Attaching and merging low-rank adapters on the attention projections.

use bdlm_core::synth::mix_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::LoraConfig;
use crate::error::{ModelError, Result};
use crate::model::{lora_a_name, lora_b_name, Model, LORA_INIT_STD};
use crate::params::{ParamValue, Tag};
use crate::tensor::{matmul, Tensor};

/// Adds fresh adapters (`A` gaussian, `B = 0`) to a model that has none.
/// Logits are unchanged until `B` is trained.
pub fn attach(model: Model, lora: LoraConfig, seed: u64) -> Result<Model> {
    let (mut cfg, mut params) = model.into_parts();
    if cfg.lora.is_some() {
        return Err(ModelError::InvalidConfig("model already carries LoRA adapters".into()));
    }
    cfg.lora = Some(lora.clone());
    cfg.validate()?;
    let d = cfg.d_model;
    let dist = Normal::new(0.0, LORA_INIT_STD).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    for layer in 0..cfg.n_layers {
        for (ti, &target) in lora.targets.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[layer as u64, ti as u64]));
            let a: Vec<f64> = (0..lora.rank * d).map(|_| dist.sample(&mut rng)).collect();
            params.insert_dense(lora_a_name(layer, target), Tag::Trainable, Tensor::new(vec![lora.rank, d], a)?)?;
            params.insert_dense(lora_b_name(layer, target), Tag::Trainable, Tensor::zeros(&[d, lora.rank]))?;
        }
    }
    Model::from_parts(cfg, params)
}

/// Folds every adapter into its base matrix, `W' = W + (alpha/r) B A`, and
/// drops the adapters. Merged matrices are stored dense.
pub fn merge(model: &Model) -> Result<Model> {
    let (mut cfg, mut params) = model.clone().into_parts();
    let Some(lora) = cfg.lora.take() else {
        return Ok(model.clone());
    };
    let (d, r, s) = (cfg.d_model, lora.rank, lora.scale());
    for layer in 0..cfg.n_layers {
        for &target in &lora.targets {
            let a = params.remove(&lora_a_name(layer, target))?;
            let b = params.remove(&lora_b_name(layer, target))?;
            let ba = matmul(&b.value().values(), &a.value().values(), d, r, d);
            let wname = format!("layers.{layer}.attn.{}.weight", target.proj());
            let mut w = params.values(&wname)?.into_owned();
            for (x, delta) in w.iter_mut().zip(&ba) {
                *x += s * delta;
            }
            params.replace(&wname, ParamValue::Dense(Tensor::new(vec![d, d], w)?))?;
        }
    }
    Model::from_parts(cfg, params)
}
