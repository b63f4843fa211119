//! Independent oracles and criterion checks shared by the core integration
//! tests and the workspace acceptance target. Each `check_*` returns a short
//! detail line on success and the first violation on failure.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use bdlm_core::features::{extract_samples, FeatureOptions, N_FEATURES};
use bdlm_core::ingest::mat::{list_variables, read_all, read_variable, ElementClass};
use bdlm_core::spectral::fft::dft;
use bdlm_core::synth::{fixture_segments, SyntheticDataset};
use bdlm_core::textgen::{record_to_line, render_record, PromptTemplate};
use bdlm_core::{extract_features, magnitude_spectrum, Error, FaultLabel, SegmentationConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Check = Result<String, String>;

pub const FS: f64 = 12_000.0;

/// Neumaier-compensated sum.
pub fn ksum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// `O(N^2)` DFT with the twiddle angle reduced exactly via `k*n mod N`.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let table: Vec<Complex64> = (0..n).map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64)).collect();
    (0..n)
        .map(|k| {
            let re = ksum(x.iter().enumerate().map(|(j, v)| (v * table[(k * j) % n]).re));
            let im = ksum(x.iter().enumerate().map(|(j, v)| (v * table[(k * j) % n]).im));
            Complex64::new(re, im)
        })
        .collect()
}

/// One-sided magnitudes of a real window: `sqrt((Σ x cos)^2 + (Σ x sin)^2)`
/// per bin, twiddles from an exact table.
pub fn naive_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im, mut idx) = (0.0, 0.0, 0usize);
            for &v in x {
                re += v * cos[idx];
                im += v * sin[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            re.hypot(im)
        })
        .collect()
}

/// Oracle value of every feature together with the scale its error is
/// measured against. Signed statistics that can sit near zero are scaled by
/// their absolute-valued counterpart.
pub fn oracle_features(x: &[f64], fs: f64) -> [(f64, f64); N_FEATURES] {
    let n = x.len() as f64;
    let mean = |g: &dyn Fn(f64) -> f64| ksum(x.iter().map(|&v| g(v))) / n;
    let p1 = mean(&|v| v);
    let p2 = (ksum(x.iter().map(|v| (v - p1).powi(2))) / (n - 1.0)).sqrt();
    let p3 = mean(&|v| v.abs().sqrt()).powi(2);
    let p4 = mean(&|v| v.abs());
    let p5 = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let p6 = mean(&|v| v.powi(3));
    let p7 = mean(&|v| v.powi(4));
    let p8 = mean(&|v| v * v);
    let abs3 = mean(&|v| v.abs().powi(3));

    let s = naive_magnitudes(x);
    let k = s.len() as f64;
    let f: Vec<f64> = (0..s.len()).map(|i| i as f64 * fs / x.len() as f64).collect();
    let fsum = |g: &dyn Fn(f64, f64) -> f64| ksum(f.iter().zip(&s).map(|(&fi, &si)| g(fi, si)));
    let p13 = ksum(s.iter().copied()) / k;
    let p14 = ksum(s.iter().map(|v| (v - p13).powi(2))) / (k - 1.0);
    let p15 = ksum(s.iter().map(|v| (v - p13).powi(3))) / (k * p14.powf(1.5));
    let p15s = ksum(s.iter().map(|v| (v - p13).abs().powi(3))) / (k * p14.powf(1.5));
    let p16 = ksum(s.iter().map(|v| (v - p13).powi(4))) / (k * p14 * p14);
    let ss = fsum(&|_, si| si);
    let p17 = fsum(&|fi, si| fi * si) / ss;
    let p18 = (fsum(&|fi, si| (fi - p17).powi(2) * si) / (k * ss)).sqrt();
    let f2 = fsum(&|fi, si| fi * fi * si);
    let f4 = fsum(&|fi, si| fi.powi(4) * si);
    let p19 = (f2 / ss).sqrt();
    let p20 = (f4 / f2).sqrt();
    let p21 = f2 / (ss * f4).sqrt();
    let p22 = p18 / p17;
    let p23 = fsum(&|fi, si| (fi - p17).powi(3) * si) / (k * p18.powi(3));
    let p23s = fsum(&|fi, si| (fi - p17).abs().powi(3) * si) / (k * p18.powi(3));
    let p24 = fsum(&|fi, si| (fi - p17).powi(4) * si) / (k * p18.powi(4));

    let own = |v: f64| (v, v.abs());
    [
        (p1, p4),
        own(p2),
        own(p3),
        own(p4),
        own(p5),
        (p6, abs3),
        own(p7),
        own(p8),
        own(p7 / (p8 * p8)),
        own(p5 / p2),
        own(p2 / p4),
        own(p5 / p4),
        own(p13),
        own(p14),
        (p15, p15s),
        own(p16),
        own(p17),
        own(p18),
        own(p19),
        own(p20),
        own(p21),
        own(p22),
        (p23, p23s),
        own(p24),
    ]
}

/// Varied random windows: offset noise, heavy tails, tones, bursts.
pub fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let offset = rng.random_range(-2.0..2.0);
    let amp = 10f64.powf(rng.random_range(-3.0..3.0));
    match rng.random_range(0..4) {
        0 => (0..n).map(|_| amp * (offset + gauss.sample(rng))).collect(),
        1 => (0..n).map(|_| amp * (offset + gauss.sample(rng).powi(3))).collect(),
        2 => {
            let tones: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(10.0..5000.0), rng.random_range(0.0..PI))).collect();
            (0..n)
                .map(|t| {
                    let tt = t as f64 / FS;
                    amp * (offset + tones.iter().map(|(f, ph)| (2.0 * PI * f * tt + ph).sin()).sum::<f64>() + 0.1 * gauss.sample(rng))
                })
                .collect()
        }
        _ => {
            let period = rng.random_range(30..300);
            (0..n)
                .map(|t| {
                    let age = (t % period) as f64 / FS;
                    amp * ((-600.0 * age).exp() * (2.0 * PI * 3000.0 * age).sin() + 0.2 * gauss.sample(rng))
                })
                .collect()
        }
    }
}

pub fn check_features(count: usize, seed: u64) -> Check {
    const TIME_TOL: f64 = 1e-9;
    const FREQ_TOL: f64 = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 2];
    for case in 0..count {
        let x = random_window(&mut rng, 2048);
        let got = extract_samples(&x, FS, &FeatureOptions::default()).map_err(|e| format!("case {case}: {e}"))?;
        let want = oracle_features(&x, FS);
        for (i, &(v, scale)) in want.iter().enumerate() {
            let g = got.p(i + 1).ok_or_else(|| format!("case {case}: p{} undefined", i + 1))?;
            let rel = (g - v).abs() / scale.max(f64::MIN_POSITIVE);
            let (slot, tol) = if i < 12 { (0, TIME_TOL) } else { (1, FREQ_TOL) };
            worst[slot] = worst[slot].max(rel);
            if !(rel <= tol) {
                return Err(format!("case {case}: p{} = {g:e}, oracle {v:e}, rel {rel:e}", i + 1));
            }
        }
    }
    Ok(format!("{count} windows, worst rel time {:.1e} freq {:.1e}", worst[0], worst[1]))
}

pub fn check_fft(max_n: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for n in 2..=max_n {
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let fast = dft(&x);
        let slow = naive_dft(&x);
        let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (k, (a, b)) in fast.iter().zip(&slow).enumerate() {
            let rel = (a.norm() - b.norm()).abs() / scale;
            worst = worst.max(rel);
            if rel > TOL {
                return Err(format!("N={n} bin {k}: |X| {} vs {}", a.norm(), b.norm()));
            }
        }
        let energy = ksum(x.iter().map(|z| z.norm_sqr()));
        let spectral = ksum(fast.iter().map(|z| z.norm_sqr())) / n as f64;
        if ((energy - spectral) / energy).abs() > TOL {
            return Err(format!("N={n}: Parseval {energy} vs {spectral}"));
        }
        let real: Vec<f64> = x.iter().map(|z| z.re).collect();
        let one_sided = magnitude_spectrum(&real, FS).map_err(|e| e.to_string())?;
        let want = naive_magnitudes(&real);
        let scale = want.iter().copied().fold(0.0, f64::max);
        for (a, b) in one_sided.magnitudes.iter().zip(&want) {
            if (a - b).abs() > TOL * scale {
                return Err(format!("N={n}: one-sided magnitude {a} vs {b}"));
            }
        }
    }
    Ok(format!("N = 2..{max_n}, worst rel {worst:.1e}"))
}

/// The corpus pinned by the golden file: SYN-A, condition 0, three windows
/// per class, default template.
pub fn golden_corpus() -> String {
    let seg = SegmentationConfig::new(2048, 1024).unwrap();
    let segs = fixture_segments(&SyntheticDataset::four_class("SYN-A", 1.0), &[0], 3, &seg, 1).unwrap();
    let tpl = PromptTemplate::default();
    let mut out = String::new();
    for s in &segs {
        let fv = extract_features(s).unwrap();
        out.push_str(&record_to_line(&render_record(&fv, s.label, &tpl).unwrap()));
        out.push('\n');
    }
    out
}

pub fn check_corpus(golden: &Path) -> Check {
    let text = golden_corpus();
    let want = std::fs::read_to_string(golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    if text != want {
        return Err("regenerated corpus differs from the golden file".into());
    }
    let inner = FaultLabel::InnerRace.as_str();
    let mut inner_seen = 0;
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        let obj = v.as_object().ok_or("record is not an object")?;
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        if sorted != ["history", "input", "instruction", "output"] {
            return Err(format!("line {}: keys {keys:?}", i + 1));
        }
        if obj["history"] != serde_json::json!([]) {
            return Err(format!("line {}: history not empty", i + 1));
        }
        if obj["output"].as_str().unwrap_or("").contains("inner ring fault") {
            inner_seen += 1;
        }
    }
    let lines = text.lines().count();
    if inner_seen != 3 {
        return Err(format!("{inner_seen} records mention the inner ring fault ({inner} windows: 3)"));
    }
    Ok(format!("{lines} records byte-identical to golden"))
}

fn fixture_bytes(dir: &Path, name: &str) -> Result<Vec<u8>, String> {
    std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
}

/// Flip bits or truncate `base`; returns the mutated bytes.
pub fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut b = base.to_vec();
    match rng.random_range(0..3) {
        0 => b.truncate(rng.random_range(0..base.len())),
        1 => {
            for _ in 0..rng.random_range(1..9) {
                let i = rng.random_range(0..b.len());
                b[i] ^= 1 << rng.random_range(0..8);
            }
        }
        _ => {
            // bit flips past the header hit the element tags most often
            let i = rng.random_range(128.min(b.len() - 1)..b.len());
            b[i] = rng.random();
            b.truncate(rng.random_range(i..=b.len()));
        }
    }
    b
}

pub fn check_mat(dir: &Path, fuzz_cases: usize, seed: u64) -> Check {
    let plain = fixture_bytes(dir, "x098.mat")?;
    let packed = fixture_bytes(dir, "x098_compressed.mat")?;

    let names = list_variables(&plain).map_err(|e| e.to_string())?;
    if names != ["X098_DE_time", "X098_FE_time", "X098RPM"] {
        return Err(format!("variables {names:?}"));
    }
    let de = read_variable(&plain, "X098_DE_time").map_err(|e| e.to_string())?;
    if (de.rows, de.cols, de.class, de.data.as_slice()) != (3, 1, ElementClass::Double, &[1.0, 2.0, 3.0][..]) {
        return Err(format!("X098_DE_time read as {de:?}"));
    }
    let fe = read_variable(&plain, "X098_FE_time").map_err(|e| e.to_string())?;
    if (fe.class, fe.data.as_slice()) != (ElementClass::Single, &[-0.5, 0.25][..]) {
        return Err(format!("X098_FE_time read as {fe:?}"));
    }
    let ramp = read_variable(&packed, "X098_DE_time").map_err(|e| e.to_string())?;
    let want: Vec<f64> = (0..1000).map(|i| i as f64 / 8.0).collect();
    if ramp.data != want || ramp.rows != 1000 {
        return Err("compressed ramp not recovered exactly".into());
    }

    let mut bad_version = plain.clone();
    bad_version[124] = 0x02;
    let mut bad_endian = plain.clone();
    bad_endian[126..128].copy_from_slice(b"XX");
    let structured = [
        matches!(read_all(&plain[..100]), Err(Error::BadMagic(_))),
        matches!(read_all(&bad_version), Err(Error::BadMagic(_))),
        matches!(read_all(&bad_endian), Err(Error::BadMagic(_))),
        matches!(read_all(&plain[..plain.len() - 20]), Err(Error::CorruptElement { .. })),
        matches!(read_variable(&plain, "nope"), Err(Error::VariableNotFound { .. })),
        matches!(read_all(&packed[..packed.len() - 40]), Err(Error::CorruptElement { .. })),
    ];
    if let Some(i) = structured.iter().position(|ok| !ok) {
        return Err(format!("malformed input {i} not rejected with its structured error"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    for case in 0..fuzz_cases {
        let base = if case % 2 == 0 { &plain } else { &packed };
        let bytes = mutate(base, &mut rng);
        let outcome = std::panic::catch_unwind(|| (read_all(&bytes).is_err(), list_variables(&bytes).is_err()));
        match outcome {
            Ok((a, _)) => rejected += a as usize,
            Err(_) => return Err(format!("fuzz case {case} panicked")),
        }
    }
    Ok(format!("fixtures exact, {fuzz_cases} fuzz cases without a crash ({rejected} rejected)"))
}
