//! Criterion checks shared by the model integration tests and the workspace
//! acceptance target. Each returns a detail line or the first violation.
#![allow(dead_code)]

use bdlm_model::gradcheck::check_gradients;
use bdlm_model::lora::{attach, merge};
use bdlm_model::quant::{quantize_slice, BLOCK};
use bdlm_model::{train, LoraConfig, LoraTarget, Model, ModelConfig, Sample, Tag, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        window_len: 64,
        patch_len: 16,
        stride: 8,
        d_model: 16,
        n_heads: 1,
        n_layers: 2,
        n_classes: 4,
        seed: 1,
        ..ModelConfig::default()
    }
}

pub fn random_windows(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Pushes every trainable tensor off its initial value so that no gradient
/// (and no LoRA `B`) is trivially zero.
pub fn scramble(m: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in m.trainable_names() {
        for v in m.trainable_mut(&name).unwrap().data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

pub fn check_gradients_tiny() -> Check {
    let mut m = Model::init(tiny_config()).map_err(e)?;
    scramble(&mut m, 9, 0.2);
    let xs = random_windows(3, 64, 2);
    let r = check_gradients(&m, &xs, &[0, 2, 3], 1e-5, 1e-6).map_err(e)?;
    let trainable = m.params().count_scalars(Tag::Trainable);
    if r.checked != trainable {
        return Err(format!("checked {} of {trainable} trainable scalars", r.checked));
    }
    if !(r.max_rel_error <= 1e-4) {
        return Err(format!("max rel error {:.2e} at {:?}", r.max_rel_error, r.worst));
    }
    Ok(format!("{trainable} scalars, max rel error {:.1e}", r.max_rel_error))
}

fn two_tone_set(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 4;
            let f = 0.2 + 0.3 * class as f64;
            let window = (0..64).map(|t| (t as f64 * f).sin() + rng.random_range(-0.3..0.3)).collect();
            Sample { window, class }
        })
        .collect()
}

pub fn check_freeze_and_lora() -> Check {
    let lora = LoraConfig { rank: 4, alpha: 8.0, targets: vec![LoraTarget::Query, LoraTarget::Value] };
    let mut frozen_checked = 0;
    for quantize_base in [false, true] {
        let cfg = ModelConfig { quantize_base, lora: Some(lora.clone()), ..tiny_config() };
        let init = Model::init(cfg).map_err(e)?;
        let tc = TrainConfig { epochs: 5, batch_size: 8, lr: 1e-2, seed: 3, stop_at_perfect_val: false, ..TrainConfig::default() };
        let out = train(init.clone(), &two_tone_set(32, 1), &two_tone_set(8, 2), &tc).map_err(e)?;
        if out.log.len() != 5 {
            return Err(format!("ran {} epochs", out.log.len()));
        }
        for (name, p) in init.params().iter().filter(|(_, p)| p.tag() == Tag::Frozen) {
            if out.model.params().get(name).ok() != Some(p) {
                return Err(format!("frozen tensor {name} changed (quantized: {quantize_base})"));
            }
            frozen_checked += 1;
        }
        if init.params().iter().filter(|(_, p)| p.tag() == Tag::Trainable).all(|(n, p)| out.model.params().get(n).ok() == Some(p)) {
            return Err("no trainable tensor moved".into());
        }
    }

    let base = Model::init(ModelConfig { n_heads: 2, ..tiny_config() }).map_err(e)?;
    let fresh = attach(base.clone(), lora.clone(), 5).map_err(e)?;
    let xs = random_windows(100, 64, 17);
    for (i, x) in xs.iter().enumerate() {
        if fresh.logits(x).map_err(e)? != base.logits(x).map_err(e)? {
            return Err(format!("fresh adapter changed logits of window {i}"));
        }
    }
    let mut adapted = fresh;
    scramble(&mut adapted, 6, 0.3);
    let merged = merge(&adapted).map_err(e)?;
    let mut worst = 0.0f64;
    for x in &xs {
        let (a, b) = (adapted.logits(x).map_err(e)?, merged.logits(x).map_err(e)?);
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    if !(worst <= 1e-10) {
        return Err(format!("merged logits differ by {worst:e}"));
    }
    Ok(format!("{frozen_checked} frozen tensors unchanged, fresh adapter bitwise no-op, merge within {worst:.1e}"))
}

pub fn check_quantization() -> Check {
    let mut elements = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.random_range(1..64), rng.random_range(1..160));
        let scale = 10f64.powi(rng.random_range(-4..5));
        let w: Vec<f64> = (0..r * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let q = quantize_slice(&w, vec![r, c]);
        for (i, (a, b)) in w.iter().zip(q.dequantize_vec()).enumerate() {
            if (a - b).abs() > q.absmax[i / BLOCK] / 7.0 {
                return Err(format!("matrix {seed} element {i}: {a} -> {b}"));
            }
        }
        elements += w.len();
    }
    Ok(format!("100 matrices, {elements} elements within absmax/7"))
}
