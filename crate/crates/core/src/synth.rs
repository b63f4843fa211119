//! Deterministic synthetic bearing signals.
//!
//! Faulty bearings are modelled as a train of exponentially decaying bursts of
//! a structural resonance (the carrier), repeating at the fault's impact rate,
//! on top of white gaussian noise. A healthy bearing is noise only.
//!
//! The per-class parameters live in a versioned fixture table so that numbers
//! derived from these signals stay stable across releases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{segment_sliding_window, FaultLabel, Segment, SegmentationConfig, Signal};

/// Bumped whenever [`fixture_spec`] or the generator changes output.
pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class: FaultLabel,
    pub carrier_hz: f64,
    pub impact_rate_hz: f64,
    /// Exponential decay rate of each burst, 1/s.
    pub decay: f64,
    pub noise_std: f64,
    pub length: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidConfig("synthetic length must be positive".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if !(self.carrier_hz >= 0.0 && self.carrier_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "carrier {} Hz violates Nyquist for {} Hz sampling",
                self.carrier_hz, self.sample_rate_hz
            )));
        }
        if self.class != FaultLabel::Normal && !(self.impact_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("impact rate must be positive".into()));
        }
        if !(self.decay > 0.0) {
            return Err(Error::InvalidConfig("decay must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generate one synthetic recording. Same spec, same samples, bit for bit.
pub fn synth_signal(spec: &SyntheticSpec) -> Result<Signal> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.sample_rate_hz;
    let mut samples = vec![0.0; spec.length];

    if spec.class != FaultLabel::Normal {
        let period = 1.0 / spec.impact_rate_hz;
        let phase: f64 = rng.random::<f64>() * period;
        let duration = spec.length as f64 / fs;
        // bursts below 1e-6 of their peak are cut off
        let tail = (1e6f64).ln() / spec.decay;
        let omega = 2.0 * std::f64::consts::PI * spec.carrier_hz;
        let mut onset = phase - period * (tail / period).ceil();
        while onset < duration {
            let first = ((onset * fs).ceil().max(0.0)) as usize;
            let last = (((onset + tail) * fs).floor() as usize).min(spec.length.saturating_sub(1));
            for (n, x) in samples.iter_mut().enumerate().take(last + 1).skip(first) {
                let t = n as f64 / fs - onset;
                if t >= 0.0 {
                    *x += (-spec.decay * t).exp() * (omega * t).sin();
                }
            }
            onset += period;
        }
    }

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
        for x in samples.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }

    Signal::new(
        format!("synth-{}-{:016x}", spec.class.short_name(), spec.seed),
        samples,
        fs,
        "synthetic",
        "0",
        spec.class,
    )
}

/// A synthetic stand-in for one public dataset: all of its carriers are
/// scaled by `carrier_scale`, giving each stand-in its own resonance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub id: String,
    pub carrier_scale: f64,
    pub sample_rate_hz: f64,
    pub labels: Vec<FaultLabel>,
}

impl SyntheticDataset {
    pub fn four_class(id: &str, carrier_scale: f64) -> Self {
        SyntheticDataset {
            id: id.to_string(),
            carrier_scale,
            sample_rate_hz: 12_000.0,
            labels: FaultLabel::ALL.to_vec(),
        }
    }

    /// The four stand-ins used for cross-dataset runs.
    pub fn stand_ins() -> Vec<SyntheticDataset> {
        vec![
            Self::four_class("SYN-A", 1.0),
            Self::four_class("SYN-B", 0.8),
            Self::four_class("SYN-C", 1.2),
            Self::four_class("SYN-D", 0.9),
        ]
    }
}

/// Motor speed factor of operating condition `0..=3` (1797, 1772, 1750, 1730 rpm).
pub fn condition_speed_factor(condition: u32) -> f64 {
    const RPM: [f64; 4] = [1797.0, 1772.0, 1750.0, 1730.0];
    RPM[condition as usize % RPM.len()] / RPM[0]
}

/// Versioned per-class generator parameters (fixture version 1).
///
/// | class           | carrier Hz | impact Hz | decay 1/s | noise std |
/// |-----------------|-----------:|----------:|----------:|----------:|
/// | normal          |          - |         - |         - |      1.00 |
/// | inner race      |       3000 |       162 |       800 |      0.30 |
/// | outer race      |       2000 |       107 |       500 |      0.30 |
/// | rolling element |       4000 |       141 |      1200 |      0.30 |
pub fn fixture_spec(
    label: FaultLabel,
    dataset: &SyntheticDataset,
    condition: u32,
    length: usize,
    seed: u64,
) -> SyntheticSpec {
    let (carrier, rate, decay, noise) = match label {
        FaultLabel::Normal => (0.0, 0.0, 1.0, 1.0),
        FaultLabel::InnerRace => (3000.0, 162.0, 800.0, 0.3),
        FaultLabel::OuterRace => (2000.0, 107.0, 500.0, 0.3),
        FaultLabel::RollingElement => (4000.0, 141.0, 1200.0, 0.3),
    };
    SyntheticSpec {
        class: label,
        carrier_hz: carrier * dataset.carrier_scale,
        impact_rate_hz: rate * condition_speed_factor(condition),
        decay,
        noise_std: noise,
        length,
        sample_rate_hz: dataset.sample_rate_hz,
        seed,
    }
}

/// Derives a child seed from `seed` and a path of integers.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = seed;
    for p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(*p);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = x ^ (x >> 31);
    }
    z
}

/// One signal per (label, condition) for a stand-in dataset, each long enough
/// to yield `segments_per_signal` windows under `seg`.
pub fn fixture_signals(
    dataset: &SyntheticDataset,
    conditions: &[u32],
    segments_per_signal: usize,
    seg: &SegmentationConfig,
    seed: u64,
) -> Result<Vec<Signal>> {
    seg.validate()?;
    let length = seg.window_len + seg.step * segments_per_signal.saturating_sub(1);
    let ds_hash = dataset.id.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut out = Vec::new();
    for &condition in conditions {
        for &label in &dataset.labels {
            let s = mix_seed(seed, &[ds_hash, condition as u64, label.class_index() as u64]);
            let spec = fixture_spec(label, dataset, condition, length, s);
            let mut sig = synth_signal(&spec)?;
            sig.id = format!("{}/c{}/{}", dataset.id, condition, label.short_name());
            sig.dataset_id = dataset.id.clone();
            sig.condition_id = condition.to_string();
            out.push(sig);
        }
    }
    Ok(out)
}

/// Segments of [`fixture_signals`], in signal order.
pub fn fixture_segments(
    dataset: &SyntheticDataset,
    conditions: &[u32],
    segments_per_signal: usize,
    seg: &SegmentationConfig,
    seed: u64,
) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for sig in fixture_signals(dataset, conditions, segments_per_signal, seg, seed)? {
        out.extend(segment_sliding_window(&sig, seg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: FaultLabel) -> SyntheticSpec {
        SyntheticSpec {
            class,
            carrier_hz: 3000.0,
            impact_rate_hz: 162.0,
            decay: 800.0,
            noise_std: 0.3,
            length: 4096,
            sample_rate_hz: 12_000.0,
            seed: 42,
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_signal(&spec(FaultLabel::InnerRace)).unwrap();
        let b = synth_signal(&spec(FaultLabel::InnerRace)).unwrap();
        let bits = |s: &Signal| s.samples.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let mut other = spec(FaultLabel::InnerRace);
        other.seed = 43;
        assert_ne!(bits(&a), bits(&synth_signal(&other).unwrap()));
    }

    #[test]
    fn silent_normal() {
        let mut s = spec(FaultLabel::Normal);
        s.noise_std = 0.0;
        let sig = synth_signal(&s).unwrap();
        assert!(sig.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nyquist_rejected() {
        let mut s = spec(FaultLabel::OuterRace);
        s.carrier_hz = 6000.0;
        assert!(matches!(synth_signal(&s), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fixture_lengths() {
        let ds = SyntheticDataset::four_class("X", 1.0);
        let seg = SegmentationConfig::new(256, 128).unwrap();
        let segs = fixture_segments(&ds, &[0, 1], 5, &seg, 1).unwrap();
        assert_eq!(segs.len(), 2 * 4 * 5);
        assert!(segs.iter().all(|s| s.dataset_id == "X"));
        let ids: std::collections::BTreeSet<_> = segs.iter().map(|s| &s.origin.signal_id).collect();
        assert_eq!(ids.len(), 8);
    }
}
