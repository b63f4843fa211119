use bdlm_model::gradcheck::check_gradients;
use bdlm_model::lora::{attach, merge};
use bdlm_model::quant::{quantize_slice, BLOCK};
use bdlm_model::{train, LoraConfig, LoraTarget, Model, ModelConfig, Sample, Tag, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grad_cfg() -> ModelConfig {
    ModelConfig {
        window_len: 64,
        patch_len: 16,
        stride: 8,
        d_model: 16,
        n_heads: 1,
        n_layers: 2,
        ffn_mult: 4,
        n_classes: 4,
        seed: 1,
        ..ModelConfig::default()
    }
}

fn random_windows(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Moves every trainable tensor off its initial value so no gradient is
/// trivially zero.
fn scramble(m: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in m.trainable_names() {
        for v in m.trainable_mut(&name).unwrap().data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut m = Model::init(grad_cfg()).unwrap();
    scramble(&mut m, 9, 0.2);
    let xs = random_windows(3, 64, 2);
    let r = check_gradients(&m, &xs, &[0, 2, 3], 1e-5, 1e-6).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
    let trainable: usize = m.params().count_scalars(Tag::Trainable);
    assert_eq!(r.checked, trainable);
}

#[test]
fn lora_and_quantized_gradients_match() {
    let mut cfg = grad_cfg();
    cfg.n_heads = 2;
    cfg.quantize_base = true;
    cfg.lora = Some(LoraConfig { rank: 2, alpha: 3.0, targets: vec![LoraTarget::Query, LoraTarget::Value] });
    let mut m = Model::init(cfg).unwrap();
    scramble(&mut m, 4, 0.2);
    let xs = random_windows(2, 64, 8);
    let r = check_gradients(&m, &xs, &[1, 3], 1e-5, 1e-6).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn saturated_fit_has_vanishing_gradient() {
    let mut m = Model::init(grad_cfg()).unwrap();
    m.trainable_mut("head.bias").unwrap().data_mut().copy_from_slice(&[100.0, 0.0, 0.0, 0.0]);
    let xs = random_windows(2, 64, 3);
    let (loss, g) = m.loss_and_grad(&xs, &[0, 0]).unwrap();
    assert!(loss < 1e-20);
    assert!(g.global_norm() < 1e-8);
}

#[test]
fn frozen_values_do_not_change_gradient_layout() {
    let a = Model::init(grad_cfg()).unwrap();
    let mut cfg = grad_cfg();
    cfg.seed = 99;
    let b = Model::init(cfg).unwrap();
    let xs = random_windows(1, 64, 3);
    let names = |m: &Model| -> Vec<String> {
        m.loss_and_grad(&xs, &[1]).unwrap().1.named().into_iter().map(|(n, _)| n).collect()
    };
    assert_eq!(names(&a), names(&b));
    assert!(names(&a).iter().all(|n| !n.contains(".weight") || n.starts_with("embed") || n.starts_with("head")));
}

/// Reference quantizer written from the definition.
fn oracle_quantize(w: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len());
    for block in w.chunks(64) {
        let a = block.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for &v in block {
            if a == 0.0 {
                out.push(0.0);
            } else {
                let code = (v / a * 7.0).round().clamp(-7.0, 7.0);
                out.push(a * (code / 7.0));
            }
        }
    }
    out
}

#[test]
fn quantizer_matches_oracle_and_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(256);
    let w: Vec<f64> = (0..256 * 256).map(|_| rng.random_range(-3.0..3.0)).collect();
    let q = quantize_slice(&w, vec![256, 256]);
    let got = q.dequantize_vec();
    let want = oracle_quantize(&w);
    assert_eq!(got, want);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = (rng.random_range(1..40), rng.random_range(1..90));
        let scale = 10f64.powi(rng.random_range(-3..4));
        let w: Vec<f64> = (0..r * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let q = quantize_slice(&w, vec![r, c]);
        for (i, (a, b)) in w.iter().zip(q.dequantize_vec()).enumerate() {
            assert!((a - b).abs() <= q.absmax[i / BLOCK] / 7.0);
        }
    }
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        window_len: 64,
        patch_len: 16,
        stride: 8,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        n_classes: 2,
        seed: 3,
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lora_noop_then_merge_equivalent(rank_ix in 0usize..4, seed in 0u64..1000, alpha in 0.0f64..16.0) {
        let rank = [1usize, 2, 4, 8][rank_ix];
        let base = Model::init(small_cfg()).unwrap();
        let lora = LoraConfig { rank, alpha, targets: vec![LoraTarget::Query, LoraTarget::Value] };
        let mut adapted = attach(base.clone(), lora, seed).unwrap();
        let xs = random_windows(4, 64, seed);
        for x in &xs {
            prop_assert_eq!(adapted.logits(x).unwrap(), base.logits(x).unwrap());
        }
        scramble(&mut adapted, seed + 1, 0.3);
        let merged = merge(&adapted).unwrap();
        for x in &xs {
            let (a, b) = (adapted.logits(x).unwrap(), merged.logits(x).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn zero_alpha_has_no_effect() {
    let base = Model::init(small_cfg()).unwrap();
    let lora = LoraConfig { rank: 4, alpha: 0.0, targets: vec![LoraTarget::Query, LoraTarget::Value] };
    let mut adapted = attach(base.clone(), lora, 5).unwrap();
    scramble(&mut adapted, 6, 1.0);
    let mut expect = base.clone();
    for name in base.trainable_names() {
        let v = adapted.params().values(&name).unwrap().into_owned();
        expect.trainable_mut(&name).unwrap().data_mut().copy_from_slice(&v);
    }
    let x = &random_windows(1, 64, 1)[0];
    assert_eq!(adapted.logits(x).unwrap(), expect.logits(x).unwrap());
}

/// Two classes separated by which half of the window carries a tone.
fn toy_set(n: usize, seed: u64, window: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 2;
            let f = rng.random_range(0.2..0.4);
            let window = (0..window)
                .map(|t| {
                    let tone = if (t < window / 2) == (class == 0) { (t as f64 * f).sin() * 3.0 } else { 0.0 };
                    tone + rng.random_range(-0.3..0.3)
                })
                .collect();
            Sample { window, class }
        })
        .collect()
}

#[test]
fn separable_toy_reaches_full_train_accuracy() {
    let cfg = ModelConfig {
        window_len: 128,
        patch_len: 16,
        stride: 8,
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        n_classes: 2,
        seed: 0,
        causal: false,
        ..ModelConfig::default()
    };
    let train_set = toy_set(64, 1, 128);
    let val_set = toy_set(16, 2, 128);
    let tc = TrainConfig { epochs: 50, batch_size: 16, lr: 1e-2, seed: 4, stop_at_perfect_val: false, ..TrainConfig::default() };
    let out = train(Model::init(cfg).unwrap(), &train_set, &val_set, &tc).unwrap();
    let acc = bdlm_model::train::accuracy(&out.model, &train_set).unwrap();
    assert_eq!(acc, 1.0, "log: {:?}", out.log);
}

#[test]
fn training_freezes_frozen_and_is_deterministic() {
    let cfg = ModelConfig { lora: Some(LoraConfig { rank: 2, alpha: 2.0, targets: vec![LoraTarget::Query, LoraTarget::Value] }), ..small_cfg() };
    let init = Model::init(cfg).unwrap();
    let tr = toy_set(24, 5, 64);
    let va = toy_set(8, 6, 64);
    let tc = TrainConfig { epochs: 5, batch_size: 8, seed: 7, stop_at_perfect_val: false, ..TrainConfig::default() };
    let a = train(init.clone(), &tr, &va, &tc).unwrap();
    let b = train(init.clone(), &tr, &va, &tc).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 5);
    assert_eq!(a.model, b.model);
    // Compare the last epoch's parameters, not just the selected ones.
    let last = train(init.clone(), &tr, &va, &TrainConfig { epochs: 5, ..tc.clone() }).unwrap();
    for (name, p) in init.params().iter() {
        let after = last.model.params().get(name).unwrap();
        match p.tag() {
            Tag::Frozen => assert_eq!(p, after, "{name} moved"),
            Tag::Trainable => {}
        }
    }
    let moved = init
        .params()
        .iter()
        .filter(|(n, p)| p != &last.model.params().get(n).unwrap())
        .all(|(_, p)| p.tag() == Tag::Trainable);
    assert!(moved);
}

#[test]
fn empty_sets_rejected() {
    let m = Model::init(small_cfg()).unwrap();
    let va = toy_set(4, 1, 64);
    assert!(matches!(
        train(m.clone(), &[], &va, &TrainConfig::default()),
        Err(bdlm_model::ModelError::EmptyDataset(_))
    ));
    assert!(train(m, &va, &[], &TrainConfig::default()).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bdlm");
    let mut cfg = small_cfg();
    cfg.quantize_base = true;
    let mut m = Model::init(cfg).unwrap();
    scramble(&mut m, 1, 0.1);
    bdlm_model::checkpoint::save_checkpoint(&m, &path).unwrap();
    let back = bdlm_model::checkpoint::load_checkpoint(&path).unwrap();
    for (name, p) in m.params().iter() {
        assert_eq!(p.value().values(), back.params().get(name).unwrap().value().values(), "{name}");
    }
    let x = &random_windows(1, 64, 0)[0];
    assert_eq!(m.logits(x).unwrap(), back.logits(x).unwrap());
}
