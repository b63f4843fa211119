//! The patch transformer classifier: parameter layout, forward pass and the
//! hand-written reverse pass over trainable parameters.
//!
//! Per window: instance normalisation, patching, value embedding plus a
//! trainable position table, `n_layers` pre-norm blocks (attention then
//! GELU FFN, each with a residual add), a final LayerNorm, pooling over
//! patches and a linear head.

use std::borrow::Cow;
use std::collections::BTreeMap;

use bdlm_core::signal::instance_normalize;
use bdlm_core::synth::mix_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{LoraTarget, ModelConfig, Pooling};
use crate::error::{ModelError, Result};
use crate::layers::{
    gelu_from_tanh, gelu_grad_from_tanh, gelu_tanh, layer_norm, layer_norm_backward, patchify, sinusoidal_position_table, softmax_rows, LnCache,
    LN_EPS,
};
use crate::params::{ParamValue, ParameterSet, Tag};
use crate::tensor::{col_sum_acc, linear, matmul, matmul_nt, matmul_tn_acc, Tensor};

pub const FROZEN_INIT_STD: f64 = 0.02;
pub const LORA_INIT_STD: f64 = 0.02;

const ATTN_PROJ: [&str; 4] = ["q", "k", "v", "o"];

pub fn lora_a_name(layer: usize, target: LoraTarget) -> String {
    format!("layers.{layer}.attn.{}.lora_a", target.proj())
}

pub fn lora_b_name(layer: usize, target: LoraTarget) -> String {
    format!("layers.{layer}.attn.{}.lora_b", target.proj())
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
    Sinusoid,
}

struct ParamSpec {
    name: String,
    tag: Tag,
    shape: Vec<usize>,
    init: Init,
}

fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, l, t, f, c) = (cfg.d_model, cfg.patch_len, cfg.n_patches(), cfg.d_ffn(), cfg.n_classes);
    let mut out = Vec::new();
    let mut push = |name: String, tag, shape: Vec<usize>, init| out.push(ParamSpec { name, tag, shape, init });
    push("embed.weight".into(), Tag::Trainable, vec![d, l], Init::Normal(1.0 / (l as f64).sqrt()));
    push("embed.bias".into(), Tag::Trainable, vec![d], Init::Zeros);
    push("pos.table".into(), Tag::Trainable, vec![t, d], Init::Sinusoid);
    for i in 0..cfg.n_layers {
        for ln in ["ln1", "ln2"] {
            push(format!("layers.{i}.{ln}.gamma"), Tag::Trainable, vec![d], Init::Ones);
            push(format!("layers.{i}.{ln}.beta"), Tag::Trainable, vec![d], Init::Zeros);
        }
        for p in ATTN_PROJ {
            push(format!("layers.{i}.attn.{p}.weight"), Tag::Frozen, vec![d, d], Init::Normal(FROZEN_INIT_STD));
            push(format!("layers.{i}.attn.{p}.bias"), Tag::Frozen, vec![d], Init::Zeros);
        }
        push(format!("layers.{i}.ffn.up.weight"), Tag::Frozen, vec![f, d], Init::Normal(FROZEN_INIT_STD));
        push(format!("layers.{i}.ffn.up.bias"), Tag::Frozen, vec![f], Init::Zeros);
        push(format!("layers.{i}.ffn.down.weight"), Tag::Frozen, vec![d, f], Init::Normal(FROZEN_INIT_STD));
        push(format!("layers.{i}.ffn.down.bias"), Tag::Frozen, vec![d], Init::Zeros);
        if let Some(lora) = &cfg.lora {
            for &target in &lora.targets {
                push(lora_a_name(i, target), Tag::Trainable, vec![lora.rank, d], Init::Normal(LORA_INIT_STD));
                push(lora_b_name(i, target), Tag::Trainable, vec![d, lora.rank], Init::Zeros);
            }
        }
    }
    push("final_ln.gamma".into(), Tag::Trainable, vec![d], Init::Ones);
    push("final_ln.beta".into(), Tag::Trainable, vec![d], Init::Zeros);
    push("head.weight".into(), Tag::Trainable, vec![c, d], Init::Normal(FROZEN_INIT_STD));
    push("head.bias".into(), Tag::Trainable, vec![c], Init::Zeros);
    out
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn init_tensor(spec: &ParamSpec, seed: u64) -> Result<Tensor> {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal(std) => {
            // Each tensor draws from its own stream so optional parameters
            // never shift the values of the others.
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[name_hash(&spec.name)]));
            let dist = Normal::new(0.0, std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        Init::Sinusoid => return sinusoidal_position_table(spec.shape[0], spec.shape[1]),
    };
    Tensor::new(spec.shape.clone(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
}

impl Model {
    /// Fresh model: frozen blocks gaussian, LayerNorms identity, LoRA `B = 0`.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for spec in layout(&config) {
            let t = init_tensor(&spec, config.seed)?;
            params.insert_dense(spec.name, spec.tag, t)?;
        }
        if config.quantize_base {
            params.quantize_frozen_matrices();
        }
        Ok(Model { config, params })
    }

    /// Assembles a model from stored parameters, checking names, tags and shapes.
    pub fn from_parts(config: ModelConfig, params: ParameterSet) -> Result<Model> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let p = params.get(&spec.name)?;
            if p.tag() != spec.tag || p.shape() != spec.shape.as_slice() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{}: expected {:?} {:?}, found {:?} {:?}",
                    spec.name,
                    spec.tag,
                    spec.shape,
                    p.tag(),
                    p.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ParameterSet) {
        (self.config, self.params)
    }

    pub fn trainable_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.trainable_mut(name)
    }

    /// Names of trainable parameters in layout order.
    pub fn trainable_names(&self) -> Vec<String> {
        layout(&self.config)
            .into_iter()
            .filter(|s| s.tag == Tag::Trainable)
            .map(|s| s.name)
            .collect()
    }

    fn resolve(&self) -> Result<Resolved<'_>> {
        Resolved::new(&self.config, &self.params)
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.config.window_len {
            return Err(ModelError::ShapeMismatch(format!(
                "window has {} samples, model expects {}",
                window.len(),
                self.config.window_len
            )));
        }
        Ok(())
    }

    pub fn logits(&self, window: &[f64]) -> Result<Vec<f64>> {
        let w = self.resolve()?;
        self.check_window(window)?;
        Ok(forward(&self.config, &w, window)?.0)
    }

    /// Logits for many windows, resolving quantized weights once.
    pub fn logits_batch<W: AsRef<[f64]>>(&self, windows: &[W]) -> Result<Vec<Vec<f64>>> {
        let w = self.resolve()?;
        windows
            .iter()
            .map(|x| {
                self.check_window(x.as_ref())?;
                Ok(forward(&self.config, &w, x.as_ref())?.0)
            })
            .collect()
    }

    pub fn predict_batch<W: AsRef<[f64]>>(&self, windows: &[W]) -> Result<Vec<usize>> {
        Ok(self.logits_batch(windows)?.iter().map(|l| argmax(l)).collect())
    }

    /// Pooled representation fed to the head, one `d_model` vector per window.
    pub fn embeddings<W: AsRef<[f64]>>(&self, windows: &[W]) -> Result<Vec<Vec<f64>>> {
        let w = self.resolve()?;
        windows
            .iter()
            .map(|x| {
                self.check_window(x.as_ref())?;
                Ok(forward(&self.config, &w, x.as_ref())?.1.pooled)
            })
            .collect()
    }

    /// Attention probabilities per layer, each `n_heads x P x P`.
    pub fn attention_maps(&self, window: &[f64]) -> Result<Vec<Tensor>> {
        let w = self.resolve()?;
        self.check_window(window)?;
        let (_, cache) = forward(&self.config, &w, window)?;
        let t = self.config.n_patches();
        cache
            .layers
            .into_iter()
            .map(|l| Tensor::new(vec![self.config.n_heads, t, t], l.probs))
            .collect()
    }

    /// Mean cross-entropy over the batch and its gradient for every
    /// trainable parameter.
    pub fn loss_and_grad<W: AsRef<[f64]>>(&self, windows: &[W], targets: &[usize]) -> Result<(f64, Gradients)> {
        if windows.len() != targets.len() || windows.is_empty() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} windows for {} targets",
                windows.len(),
                targets.len()
            )));
        }
        let c = self.config.n_classes;
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(ModelError::ShapeMismatch(format!("target {bad} outside {c} classes")));
        }
        let w = self.resolve()?;
        let mut grads = Gradients::zeros(&self.config);
        let mut total = 0.0;
        let scale = 1.0 / windows.len() as f64;
        for (x, &t) in windows.iter().zip(targets) {
            self.check_window(x.as_ref())?;
            let (logits, cache) = forward(&self.config, &w, x.as_ref())?;
            let (loss, mut dlogits) = crate::loss::cross_entropy_with_grad(&logits, &[t], c);
            total += loss;
            for g in &mut dlogits {
                *g *= scale;
            }
            backward(&self.config, &w, &cache, &dlogits, &mut grads);
        }
        Ok((total * scale, grads))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct Lora<'a> {
    a: &'a [f64],
    b: &'a [f64],
    rank: usize,
    scale: f64,
}

struct Lin<'a> {
    w: Cow<'a, [f64]>,
    b: Cow<'a, [f64]>,
    d_in: usize,
    d_out: usize,
    lora: Option<Lora<'a>>,
}

impl Lin<'_> {
    /// `y = x W^T + b (+ s (x A^T) B^T)`; also returns `x A^T` when adapted.
    fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut y = linear(x, &self.w, Some(&self.b), rows, self.d_in, self.d_out);
        let r = self.lora.as_ref().map(|lo| {
            let r = matmul_nt(x, lo.a, rows, self.d_in, lo.rank);
            let delta = matmul_nt(&r, lo.b, rows, lo.rank, self.d_out);
            for (v, d) in y.iter_mut().zip(&delta) {
                *v += lo.scale * d;
            }
            r
        });
        (y, r)
    }

    fn backward(&self, dy: &[f64], x: &[f64], r: Option<&Vec<f64>>, rows: usize, g: Option<&mut LoraGrad>) -> Vec<f64> {
        let mut dx = matmul(dy, &self.w, rows, self.d_out, self.d_in);
        if let (Some(lo), Some(r)) = (&self.lora, r) {
            let dys: Vec<f64> = dy.iter().map(|v| v * lo.scale).collect();
            let dr = matmul(&dys, lo.b, rows, self.d_out, lo.rank);
            if let Some(g) = g {
                matmul_tn_acc(&dys, r, rows, self.d_out, lo.rank, &mut g.b);
                matmul_tn_acc(&dr, x, rows, lo.rank, self.d_in, &mut g.a);
            }
            let dxl = matmul(&dr, lo.a, rows, lo.rank, self.d_in);
            for (v, d) in dx.iter_mut().zip(&dxl) {
                *v += d;
            }
        }
        dx
    }
}

struct LayerW<'a> {
    ln1_g: Cow<'a, [f64]>,
    ln1_b: Cow<'a, [f64]>,
    ln2_g: Cow<'a, [f64]>,
    ln2_b: Cow<'a, [f64]>,
    q: Lin<'a>,
    k: Lin<'a>,
    v: Lin<'a>,
    o: Lin<'a>,
    up: Lin<'a>,
    down: Lin<'a>,
}

/// Dense views of every parameter for one pass; quantized matrices are
/// dequantized here.
struct Resolved<'a> {
    embed_w: Cow<'a, [f64]>,
    embed_b: Cow<'a, [f64]>,
    pos: Cow<'a, [f64]>,
    layers: Vec<LayerW<'a>>,
    lnf_g: Cow<'a, [f64]>,
    lnf_b: Cow<'a, [f64]>,
    head_w: Cow<'a, [f64]>,
    head_b: Cow<'a, [f64]>,
}

fn dense<'a>(ps: &'a ParameterSet, name: &str) -> Result<&'a [f64]> {
    match ps.get(name)?.value() {
        ParamValue::Dense(t) => Ok(t.data()),
        ParamValue::Quantized(_) => Err(ModelError::InvalidConfig(format!("{name} must be dense"))),
    }
}

impl<'a> Resolved<'a> {
    fn new(cfg: &ModelConfig, ps: &'a ParameterSet) -> Result<Self> {
        let d = cfg.d_model;
        let lin = |i: usize, proj: &str, d_in: usize, d_out: usize| -> Result<Lin<'a>> {
            let base = format!("layers.{i}.{proj}");
            let lora = match &cfg.lora {
                Some(l) if proj.starts_with("attn.") => l
                    .targets
                    .iter()
                    .find(|t| proj == format!("attn.{}", t.proj()))
                    .map(|&t| -> Result<Lora<'a>> {
                        Ok(Lora {
                            a: dense(ps, &lora_a_name(i, t))?,
                            b: dense(ps, &lora_b_name(i, t))?,
                            rank: l.rank,
                            scale: l.scale(),
                        })
                    })
                    .transpose()?,
                _ => None,
            };
            Ok(Lin {
                w: ps.values(&format!("{base}.weight"))?,
                b: ps.values(&format!("{base}.bias"))?,
                d_in,
                d_out,
                lora,
            })
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            layers.push(LayerW {
                ln1_g: ps.values(&format!("layers.{i}.ln1.gamma"))?,
                ln1_b: ps.values(&format!("layers.{i}.ln1.beta"))?,
                ln2_g: ps.values(&format!("layers.{i}.ln2.gamma"))?,
                ln2_b: ps.values(&format!("layers.{i}.ln2.beta"))?,
                q: lin(i, "attn.q", d, d)?,
                k: lin(i, "attn.k", d, d)?,
                v: lin(i, "attn.v", d, d)?,
                o: lin(i, "attn.o", d, d)?,
                up: lin(i, "ffn.up", d, cfg.d_ffn())?,
                down: lin(i, "ffn.down", cfg.d_ffn(), d)?,
            });
        }
        Ok(Resolved {
            embed_w: ps.values("embed.weight")?,
            embed_b: ps.values("embed.bias")?,
            pos: ps.values("pos.table")?,
            layers,
            lnf_g: ps.values("final_ln.gamma")?,
            lnf_b: ps.values("final_ln.beta")?,
            head_w: ps.values("head.weight")?,
            head_b: ps.values("head.bias")?,
        })
    }
}

struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    rq: Option<Vec<f64>>,
    rk: Option<Vec<f64>>,
    rv: Option<Vec<f64>>,
    probs: Vec<f64>,
    o: Vec<f64>,
    ro: Option<Vec<f64>>,
    ln2: LnCache,
    b: Vec<f64>,
    u: Vec<f64>,
    /// `tanh` inside the GELU, reused by the backward pass.
    gt: Vec<f64>,
    ru: Option<Vec<f64>>,
    g: Vec<f64>,
    rd: Option<Vec<f64>>,
}

struct Cache {
    patches: Vec<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    pooled: Vec<f64>,
}

fn gather_head(x: &[f64], t: usize, d: usize, off: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * dh);
    for r in 0..t {
        out.extend_from_slice(&x[r * d + off..r * d + off + dh]);
    }
    out
}

fn scatter_head(src: &[f64], dst: &mut [f64], t: usize, d: usize, off: usize, dh: usize) {
    for r in 0..t {
        dst[r * d + off..r * d + off + dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

/// Multi-head scaled dot-product attention; returns the concatenated head
/// outputs and the `H x T x T` probabilities.
fn attention(cfg: &ModelConfig, q: &[f64], k: &[f64], v: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let (d, h, dh) = (cfg.d_model, cfg.n_heads, cfg.d_head());
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = vec![0.0; t * d];
    let mut probs = Vec::with_capacity(h * t * t);
    for head in 0..h {
        let off = head * dh;
        let qh = gather_head(q, t, d, off, dh);
        let kh = gather_head(k, t, d, off, dh);
        let vh = gather_head(v, t, d, off, dh);
        let mut s = matmul_nt(&qh, &kh, t, dh, t);
        for (i, row) in s.chunks_exact_mut(t).enumerate() {
            let visible = if cfg.causal { i + 1 } else { t };
            row[..visible].iter_mut().for_each(|v| *v *= scale);
            softmax_rows(&mut row[..visible], visible);
            row[visible..].fill(0.0);
        }
        let oh = matmul(&s, &vh, t, t, dh);
        scatter_head(&oh, &mut o, t, d, off, dh);
        probs.extend_from_slice(&s);
    }
    (o, probs)
}

fn attention_backward(
    cfg: &ModelConfig,
    d_o: &[f64],
    c: &LayerCache,
    t: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, h, dh) = (cfg.d_model, cfg.n_heads, cfg.d_head());
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (vec![0.0; t * d], vec![0.0; t * d], vec![0.0; t * d]);
    for head in 0..h {
        let off = head * dh;
        let p = &c.probs[head * t * t..(head + 1) * t * t];
        let qh = gather_head(&c.q, t, d, off, dh);
        let kh = gather_head(&c.k, t, d, off, dh);
        let vh = gather_head(&c.v, t, d, off, dh);
        let doh = gather_head(d_o, t, d, off, dh);
        let dp = matmul_nt(&doh, &vh, t, dh, t);
        let mut dvh = vec![0.0; t * dh];
        matmul_tn_acc(p, &doh, t, t, dh, &mut dvh);
        let mut ds = vec![0.0; t * t];
        for i in 0..t {
            let row = i * t..(i + 1) * t;
            let dot: f64 = p[row.clone()].iter().zip(&dp[row.clone()]).map(|(a, b)| a * b).sum();
            for j in row {
                ds[j] = p[j] * (dp[j] - dot) * scale;
            }
        }
        let dqh = matmul(&ds, &kh, t, t, dh);
        let mut dkh = vec![0.0; t * dh];
        matmul_tn_acc(&ds, &qh, t, t, dh, &mut dkh);
        scatter_head(&dqh, &mut dq, t, d, off, dh);
        scatter_head(&dkh, &mut dk, t, d, off, dh);
        scatter_head(&dvh, &mut dv, t, d, off, dh);
    }
    (dq, dk, dv)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn forward(cfg: &ModelConfig, w: &Resolved, window: &[f64]) -> Result<(Vec<f64>, Cache)> {
    let (d, l, t) = (cfg.d_model, cfg.patch_len, cfg.n_patches());
    let xn = instance_normalize(window);
    let patches = patchify(&xn, l, cfg.stride)?.into_data();
    let mut h = linear(&patches, &w.embed_w, Some(&w.embed_b), t, l, d);
    add_into(&mut h, &w.pos);
    let mut layers = Vec::with_capacity(w.layers.len());
    for lw in &w.layers {
        let (a, ln1) = layer_norm(&h, &lw.ln1_g, &lw.ln1_b, LN_EPS);
        let (q, rq) = lw.q.forward(&a, t);
        let (k, rk) = lw.k.forward(&a, t);
        let (v, rv) = lw.v.forward(&a, t);
        let (o, probs) = attention(cfg, &q, &k, &v, t);
        let (attn, ro) = lw.o.forward(&o, t);
        add_into(&mut h, &attn);
        let (b, ln2) = layer_norm(&h, &lw.ln2_g, &lw.ln2_b, LN_EPS);
        let (u, ru) = lw.up.forward(&b, t);
        let gt: Vec<f64> = u.iter().map(|&x| gelu_tanh(x)).collect();
        let g: Vec<f64> = u.iter().zip(&gt).map(|(&x, &th)| gelu_from_tanh(x, th)).collect();
        let (f, rd) = lw.down.forward(&g, t);
        add_into(&mut h, &f);
        layers.push(LayerCache { ln1, a, q, k, v, rq, rk, rv, probs, o, ro, ln2, b, u, gt, ru, g, rd });
    }
    let (z, lnf) = layer_norm(&h, &w.lnf_g, &w.lnf_b, LN_EPS);
    let pooled = match cfg.pooling {
        Pooling::Mean => {
            let mut p = vec![0.0; d];
            col_sum_acc(&z, d, &mut p);
            p.iter_mut().for_each(|v| *v /= t as f64);
            p
        }
        Pooling::Last => z[(t - 1) * d..].to_vec(),
    };
    let logits = linear(&pooled, &w.head_w, Some(&w.head_b), 1, d, cfg.n_classes);
    Ok((logits, Cache { patches, layers, lnf, pooled }))
}

fn backward(cfg: &ModelConfig, w: &Resolved, cache: &Cache, dlogits: &[f64], g: &mut Gradients) {
    let (d, l, t, c) = (cfg.d_model, cfg.patch_len, cfg.n_patches(), cfg.n_classes);
    matmul_tn_acc(dlogits, &cache.pooled, 1, c, d, &mut g.head_weight);
    add_into(&mut g.head_bias, dlogits);
    let dpooled = matmul(dlogits, &w.head_w, 1, c, d);
    let mut dz = vec![0.0; t * d];
    match cfg.pooling {
        Pooling::Mean => {
            for row in dz.chunks_exact_mut(d) {
                for (v, p) in row.iter_mut().zip(&dpooled) {
                    *v = p / t as f64;
                }
            }
        }
        Pooling::Last => dz[(t - 1) * d..].copy_from_slice(&dpooled),
    }
    let mut dh = layer_norm_backward(
        &dz,
        &cache.lnf,
        &w.lnf_g,
        Some(&mut g.final_ln_gamma),
        Some(&mut g.final_ln_beta),
    );
    for ((lw, lc), lg) in w.layers.iter().zip(&cache.layers).zip(&mut g.layers).rev() {
        let dgl = lw.down.backward(&dh, &lc.g, lc.rd.as_ref(), t, None);
        let du: Vec<f64> = dgl
            .iter()
            .zip(lc.u.iter().zip(&lc.gt))
            .map(|(dg, (&u, &th))| dg * gelu_grad_from_tanh(u, th))
            .collect();
        let db = lw.up.backward(&du, &lc.b, lc.ru.as_ref(), t, None);
        let dres = layer_norm_backward(&db, &lc.ln2, &lw.ln2_g, Some(&mut lg.ln2_gamma), Some(&mut lg.ln2_beta));
        add_into(&mut dh, &dres);

        let d_o = lw.o.backward(&dh, &lc.o, lc.ro.as_ref(), t, None);
        let (dq, dk, dv) = attention_backward(cfg, &d_o, lc, t);
        let mut da = lw.q.backward(&dq, &lc.a, lc.rq.as_ref(), t, lg.lora.get_mut(&LoraTarget::Query));
        add_into(&mut da, &lw.k.backward(&dk, &lc.a, lc.rk.as_ref(), t, None));
        add_into(&mut da, &lw.v.backward(&dv, &lc.a, lc.rv.as_ref(), t, lg.lora.get_mut(&LoraTarget::Value)));
        let dres = layer_norm_backward(&da, &lc.ln1, &lw.ln1_g, Some(&mut lg.ln1_gamma), Some(&mut lg.ln1_beta));
        add_into(&mut dh, &dres);
    }
    matmul_tn_acc(&dh, &cache.patches, t, d, l, &mut g.embed_weight);
    col_sum_acc(&dh, d, &mut g.embed_bias);
    add_into(&mut g.pos_table, &dh);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub lora: BTreeMap<LoraTarget, LoraGrad>,
}

/// Gradient buffers, allocated for trainable parameters only.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed_weight: Vec<f64>,
    pub embed_bias: Vec<f64>,
    pub pos_table: Vec<f64>,
    pub layers: Vec<LayerGrad>,
    pub final_ln_gamma: Vec<f64>,
    pub final_ln_beta: Vec<f64>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.n_layers)
            .map(|_| LayerGrad {
                ln1_gamma: vec![0.0; d],
                ln1_beta: vec![0.0; d],
                ln2_gamma: vec![0.0; d],
                ln2_beta: vec![0.0; d],
                lora: cfg
                    .lora
                    .iter()
                    .flat_map(|l| {
                        l.targets.iter().map(move |&t| {
                            (t, LoraGrad { a: vec![0.0; l.rank * d], b: vec![0.0; d * l.rank] })
                        })
                    })
                    .collect(),
            })
            .collect();
        Gradients {
            embed_weight: vec![0.0; d * cfg.patch_len],
            embed_bias: vec![0.0; d],
            pos_table: vec![0.0; cfg.n_patches() * d],
            layers,
            final_ln_gamma: vec![0.0; d],
            final_ln_beta: vec![0.0; d],
            head_weight: vec![0.0; cfg.n_classes * d],
            head_bias: vec![0.0; cfg.n_classes],
        }
    }

    /// `(parameter name, gradient)` for every buffer.
    pub fn named(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embed.weight".into(), &self.embed_weight),
            ("embed.bias".into(), &self.embed_bias),
            ("pos.table".into(), &self.pos_table),
        ];
        for (i, lg) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.ln1.gamma"), &lg.ln1_gamma));
            out.push((format!("layers.{i}.ln1.beta"), &lg.ln1_beta));
            out.push((format!("layers.{i}.ln2.gamma"), &lg.ln2_gamma));
            out.push((format!("layers.{i}.ln2.beta"), &lg.ln2_beta));
            for (&t, g) in &lg.lora {
                out.push((lora_a_name(i, t), &g.a));
                out.push((lora_b_name(i, t), &g.b));
            }
        }
        out.push(("final_ln.gamma".into(), &self.final_ln_gamma));
        out.push(("final_ln.beta".into(), &self.final_ln_beta));
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
