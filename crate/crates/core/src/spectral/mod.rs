//! One-sided magnitude spectra and short-time Fourier transforms.
//!
//! Magnitudes are raw `|X_k|` with no `2/N` amplitude scaling, and the DC bin
//! is kept as the first bin. Feature values downstream depend on both
//! conventions.

pub mod fft;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// Build a spectrum from magnitudes on the bin grid of an `n`-point DFT.
    pub fn from_magnitudes(magnitudes: Vec<f64>, n: usize, sample_rate_hz: f64) -> Self {
        let freqs_hz = (0..magnitudes.len())
            .map(|k| k as f64 * sample_rate_hz / n as f64)
            .collect();
        Spectrum {
            magnitudes,
            freqs_hz,
            sample_rate_hz,
        }
    }
}

/// One-sided magnitude spectrum: `floor(N/2) + 1` bins at `k * fs / N`.
pub fn magnitude_spectrum(samples: &[f64], sample_rate_hz: f64) -> Result<Spectrum> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n < 2 {
        return Err(Error::SignalTooShort { len: n, required: 2 });
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidConfig("sample rate must be positive".into()));
    }
    let full = fft::dft_real(samples);
    let k = n / 2 + 1;
    let mags = full[..k].iter().map(|c| c.norm()).collect();
    Ok(Spectrum::from_magnitudes(mags, n, sample_rate_hz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    Rect,
    #[default]
    Hann,
}

impl WindowFn {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rect => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl std::str::FromStr for WindowFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(WindowFn::Rect),
            "hann" => Ok(WindowFn::Hann),
            _ => Err(Error::InvalidConfig(format!("unknown window {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 256,
            hop: 128,
            window_fn: WindowFn::Hann,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// `frames[f][k]`: magnitude of bin `k` in frame `f`.
    pub frames: Vec<Vec<f64>>,
    /// Centre time of each frame, seconds.
    pub frame_times_s: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub window_len: usize,
    pub hop: usize,
}

pub fn stft(samples: &[f64], sample_rate_hz: f64, cfg: &StftConfig) -> Result<Spectrogram> {
    if cfg.hop == 0 || cfg.window_len < 2 {
        return Err(Error::InvalidConfig(format!(
            "stft needs window_len >= 2 and hop >= 1, got {} / {}",
            cfg.window_len, cfg.hop
        )));
    }
    if samples.len() < cfg.window_len {
        return Err(Error::SignalTooShort {
            len: samples.len(),
            required: cfg.window_len,
        });
    }
    let coeffs = cfg.window_fn.coefficients(cfg.window_len);
    let count = (samples.len() - cfg.window_len) / cfg.hop + 1;
    let mut frames = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    let mut freqs = Vec::new();
    let mut slice = vec![0.0; cfg.window_len];
    for f in 0..count {
        let start = f * cfg.hop;
        for (dst, (x, w)) in slice
            .iter_mut()
            .zip(samples[start..start + cfg.window_len].iter().zip(&coeffs))
        {
            *dst = x * w;
        }
        let spec = magnitude_spectrum(&slice, sample_rate_hz)?;
        if f == 0 {
            freqs = spec.freqs_hz;
        }
        frames.push(spec.magnitudes);
        times.push((start as f64 + cfg.window_len as f64 / 2.0) / sample_rate_hz);
    }
    Ok(Spectrogram {
        frames,
        frame_times_s: times,
        freqs_hz: freqs,
        window_len: cfg.window_len,
        hop: cfg.hop,
    })
}

impl Spectrogram {
    /// Plot-ready CSV: a header of bin frequencies, then one row per frame
    /// starting with the frame time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time_s".to_string()];
        header.extend(self.freqs_hz.iter().map(|f| f.to_string()));
        w.write_record(&header)?;
        for (t, frame) in self.frame_times_s.iter().zip(&self.frames) {
            let mut row = vec![t.to_string()];
            row.extend(frame.iter().map(|m| m.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<spectrogram csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
