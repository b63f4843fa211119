//! The 24 time- and frequency-domain statistics used as diagnosis features.
//!
//! Time domain, over samples `x(n)`, `n = 1..N`:
//!
//! | id  | name                  | definition                                 |
//! |-----|-----------------------|--------------------------------------------|
//! | p1  | mean                  | `(1/N) Σ x`                                |
//! | p2  | standard deviation    | `sqrt((1/(N-1)) Σ (x - p1)^2)`             |
//! | p3  | square root amplitude | `((1/N) Σ sqrt|x|)^2`                      |
//! | p4  | absolute mean         | `(1/N) Σ |x|`                              |
//! | p5  | peak                  | `max |x|`                                  |
//! | p6  | skewness (raw)        | `(1/N) Σ x^3`                              |
//! | p7  | kurtosis (raw)        | `(1/N) Σ x^4`                              |
//! | p8  | variance (raw)        | `(1/N) Σ x^2`                              |
//! | p9  | kurtosis index        | `p7 / p8^2` (literal variant `p7 / p6`)    |
//! | p10 | peak index            | `p5 / p2`                                  |
//! | p11 | waveform index        | `p2 / p4`                                  |
//! | p12 | pulse index           | `p5 / p4`                                  |
//!
//! Frequency domain, over magnitudes `s(k)` at frequencies `f_k`, `k = 1..K`:
//!
//! | id  | name                  | definition                                    |
//! |-----|-----------------------|-----------------------------------------------|
//! | p13 | frequency mean        | `(1/K) Σ s`                                   |
//! | p14 | frequency variance    | `(1/(K-1)) Σ (s - p13)^2`                     |
//! | p15 | frequency skewness    | `Σ (s - p13)^3 / (K p14^(3/2))`               |
//! | p16 | frequency kurtosis    | `Σ (s - p13)^4 / (K p14^2)`                   |
//! | p17 | gravity frequency     | `Σ f s / Σ s`                                 |
//! | p18 | frequency std         | `sqrt(Σ (f - p17)^2 s / (K Σ s))`             |
//! | p19 | frequency RMS         | `sqrt(Σ f^2 s / Σ s)`                         |
//! | p20 | average frequency     | `sqrt(Σ f^4 s / Σ f^2 s)`                     |
//! | p21 | regularity degree     | `Σ f^2 s / sqrt(Σ s · Σ f^4 s)`               |
//! | p22 | variation parameter   | `p18 / p17`                                   |
//! | p23 | eighth-order moment   | `Σ (f - p17)^3 s / (K p18^3)`                 |
//! | p24 | sixteenth-order moment| `Σ (f - p17)^4 s / (K p18^4)`                 |
//!
//! p6, p7 and p8 are raw (uncentred) moments even though their names suggest
//! the standardised statistics. Features whose denominator vanishes are
//! marked undefined and stored as NaN.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Segment;
use crate::spectral::{magnitude_spectrum, Spectrum};

pub const N_FEATURES: usize = 24;
pub const N_TIME: usize = 12;

/// Relative size below which a denominator counts as zero.
const REL_TINY: f64 = 1e-12;
const ABS_TINY: f64 = 1e-30;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "mean value",
    "standard deviation",
    "square root amplitude",
    "absolute mean value",
    "peak value",
    "skewness",
    "kurtosis",
    "variance",
    "kurtosis index",
    "peak index",
    "waveform index",
    "pulse index",
    "frequency mean value",
    "frequency variance",
    "frequency skewness",
    "frequency kurtosis",
    "gravity frequency",
    "frequency standard deviation",
    "frequency root mean square",
    "average frequency",
    "regularity degree",
    "variation parameter",
    "eighth-order moment",
    "sixteenth-order moment",
];

/// How p9 is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KurtosisIndex {
    /// `p7 / p8^2`, the usual kurtosis factor.
    #[default]
    MeanSquare,
    /// `p7 / (sqrt(p6))^2`, transcribed literally; undefined when `p6 <= 0`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub kurtosis_index: KurtosisIndex,
}

/// Values for a contiguous block of features plus their undefined flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBlock<const N: usize> {
    pub values: [f64; N],
    pub undefined: [bool; N],
}

impl<const N: usize> FeatureBlock<N> {
    fn new() -> Self {
        FeatureBlock {
            values: [0.0; N],
            undefined: [false; N],
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    fn set_ratio(&mut self, i: usize, num: f64, den: f64, den_scale: f64) {
        if is_tiny(den, den_scale) {
            self.values[i] = f64::NAN;
            self.undefined[i] = true;
        } else {
            self.values[i] = num / den;
        }
    }

    fn mark_undefined(&mut self, i: usize) {
        self.values[i] = f64::NAN;
        self.undefined[i] = true;
    }

    /// Value of the feature, `None` when undefined.
    pub fn get(&self, i: usize) -> Option<f64> {
        (!self.undefined[i]).then_some(self.values[i])
    }
}

fn is_tiny(den: f64, scale: f64) -> bool {
    let a = den.abs();
    !(a > ABS_TINY && a > REL_TINY * scale.abs()) || !a.is_finite()
}

/// p1..p12 of a window.
pub fn time_features(x: &[f64], opts: &FeatureOptions) -> Result<FeatureBlock<N_TIME>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::SignalTooShort { len: n, required: 2 });
    }
    let nf = n as f64;
    let mut out = FeatureBlock::new();

    let p1 = x.iter().sum::<f64>() / nf;
    let p2 = (x.iter().map(|v| (v - p1) * (v - p1)).sum::<f64>() / (nf - 1.0)).sqrt();
    let p3 = {
        let m = x.iter().map(|v| v.abs().sqrt()).sum::<f64>() / nf;
        m * m
    };
    let p4 = x.iter().map(|v| v.abs()).sum::<f64>() / nf;
    let p5 = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let p6 = x.iter().map(|v| v * v * v).sum::<f64>() / nf;
    let p7 = x.iter().map(|v| (v * v) * (v * v)).sum::<f64>() / nf;
    let p8 = x.iter().map(|v| v * v).sum::<f64>() / nf;

    for (i, v) in [p1, p2, p3, p4, p5, p6, p7, p8].into_iter().enumerate() {
        out.set(i, v);
    }
    match opts.kurtosis_index {
        KurtosisIndex::MeanSquare => out.set_ratio(8, p7, p8 * p8, p5.powi(4)),
        KurtosisIndex::Literal => {
            if p6 > 0.0 {
                let root = p6.sqrt();
                out.set_ratio(8, p7, root * root, p5.powi(3));
            } else {
                out.mark_undefined(8);
            }
        }
    }
    out.set_ratio(9, p5, p2, p5);
    out.set_ratio(10, p2, p4, p5);
    // a flat window has no waveform to speak of
    if is_tiny(p2, p5) {
        out.mark_undefined(10);
    }
    out.set_ratio(11, p5, p4, p5);
    Ok(out)
}

/// p13..p24 of a one-sided magnitude spectrum. Index 0 of the block is p13.
pub fn frequency_features(spec: &Spectrum) -> Result<FeatureBlock<N_TIME>> {
    let k = spec.magnitudes.len();
    if k < 2 || spec.freqs_hz.len() != k {
        return Err(Error::InvalidConfig(format!(
            "spectrum needs >= 2 bins with matching frequencies, got {k}/{}",
            spec.freqs_hz.len()
        )));
    }
    let s = &spec.magnitudes;
    let f = &spec.freqs_hz;
    let kf = k as f64;
    let mut out = FeatureBlock::new();

    let s_max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let f_max = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let p13 = s.iter().sum::<f64>() / kf;
    let dev = |p: i32| s.iter().map(|v| (v - p13).powi(p)).sum::<f64>();
    let p14 = dev(2) / (kf - 1.0);
    out.set(0, p13);
    out.set(1, p14);
    out.set_ratio(2, dev(3), kf * p14.powf(1.5), (s_max * s_max).powf(1.5));
    out.set_ratio(3, dev(4), kf * p14 * p14, s_max.powi(4));

    let sum_s: f64 = s.iter().sum();
    let weighted = |g: &dyn Fn(f64) -> f64| f.iter().zip(s).map(|(fk, sk)| g(*fk) * sk).sum::<f64>();
    let sum_fs = weighted(&|fk| fk);
    let sum_f2s = weighted(&|fk| fk * fk);
    let sum_f4s = weighted(&|fk| (fk * fk) * (fk * fk));

    if is_tiny(sum_s, s_max) {
        for i in 4..N_TIME {
            out.mark_undefined(i);
        }
        return Ok(out);
    }

    let p17 = sum_fs / sum_s;
    let cdev = |p: i32| f.iter().zip(s).map(|(fk, sk)| (fk - p17).powi(p) * sk).sum::<f64>();
    let p18 = (cdev(2) / (kf * sum_s)).sqrt();
    let p19 = (sum_f2s / sum_s).sqrt();
    out.set(4, p17);
    out.set(5, p18);
    out.set(6, p19);
    if is_tiny(sum_f2s, f_max * f_max * sum_s) {
        out.mark_undefined(7);
    } else {
        out.set(7, (sum_f4s / sum_f2s).sqrt());
    }
    out.set_ratio(8, sum_f2s, (sum_s * sum_f4s).sqrt(), f_max * f_max * sum_s);
    out.set_ratio(9, p18, p17, f_max);
    out.set_ratio(10, cdev(3), kf * p18.powi(3), f_max.powi(3));
    out.set_ratio(11, cdev(4), kf * p18.powi(4), f_max.powi(4));
    Ok(out)
}

/// All 24 features of one window, p1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
    pub undefined: [bool; N_FEATURES],
}

impl FeatureVector {
    pub fn from_blocks(time: &FeatureBlock<N_TIME>, freq: &FeatureBlock<N_TIME>) -> Self {
        let mut values = [0.0; N_FEATURES];
        let mut undefined = [false; N_FEATURES];
        values[..N_TIME].copy_from_slice(&time.values);
        values[N_TIME..].copy_from_slice(&freq.values);
        undefined[..N_TIME].copy_from_slice(&time.undefined);
        undefined[N_TIME..].copy_from_slice(&freq.undefined);
        FeatureVector { values, undefined }
    }

    /// Feature `p{id}` (1-based), `None` when undefined.
    pub fn p(&self, id: usize) -> Option<f64> {
        let i = id - 1;
        (!self.undefined[i]).then_some(self.values[i])
    }

    pub fn has_undefined(&self) -> bool {
        self.undefined.iter().any(|&u| u)
    }
}

pub fn extract_samples(
    samples: &[f64],
    sample_rate_hz: f64,
    opts: &FeatureOptions,
) -> Result<FeatureVector> {
    let time = time_features(samples, opts)?;
    let spec = magnitude_spectrum(samples, sample_rate_hz)?;
    let freq = frequency_features(&spec)?;
    Ok(FeatureVector::from_blocks(&time, &freq))
}

/// Features of a segment; values are not normalised.
pub fn extract_features(segment: &Segment) -> Result<FeatureVector> {
    extract_samples(&segment.samples, segment.sample_rate_hz, &FeatureOptions::default())
}

pub fn feature_csv_header() -> Vec<String> {
    let mut h: Vec<String> = (1..=N_FEATURES).map(|i| format!("p{i}")).collect();
    h.extend(["label", "dataset_id", "condition_id"].map(String::from));
    h
}

/// Write one CSV row per segment. Undefined features are empty cells.
pub fn write_feature_csv<W: Write>(
    out: W,
    rows: &[(FeatureVector, &Segment)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_csv_header())?;
    for (fv, seg) in rows {
        let mut rec: Vec<String> = fv
            .values
            .iter()
            .zip(&fv.undefined)
            .map(|(v, u)| if *u { String::new() } else { format!("{v:e}") })
            .collect();
        rec.push(seg.label.to_string());
        rec.push(seg.dataset_id.clone());
        rec.push(seg.condition_id.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

pub fn save_feature_csv(path: &Path, rows: &[(FeatureVector, &Segment)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_csv(std::io::BufWriter::new(file), rows)
}
