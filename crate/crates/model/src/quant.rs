//! Symmetric blockwise int4 quantization.
//!
//! Values are flattened row-major and cut into blocks of [`BLOCK`]. Each
//! block stores its absolute maximum `a`; element `w` becomes the code
//! `round(7 w / a)` in `-7..=7` and is restored as `a * (code / 7)`. The
//! restoration error is at most `a / 14` per element, and a block whose
//! elements all share one magnitude round-trips exactly.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const BLOCK: usize = 64;
pub const LEVELS: i8 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    pub shape: Vec<usize>,
    pub block: usize,
    /// Per-block absolute maximum.
    pub absmax: Vec<f64>,
    /// Two codes per byte, low nibble first, each stored as `code + 8`.
    pub packed: Vec<u8>,
    pub len: usize,
}

fn encode(w: f64, absmax: f64) -> i8 {
    if absmax == 0.0 {
        return 0;
    }
    let q = (w / absmax * LEVELS as f64).round();
    q.clamp(-(LEVELS as f64), LEVELS as f64) as i8
}

fn decode(code: i8, absmax: f64) -> f64 {
    absmax * (code as f64 / LEVELS as f64)
}

pub fn quantize(t: &Tensor) -> QuantizedMatrix {
    quantize_slice(t.data(), t.shape().to_vec())
}

pub fn quantize_slice(data: &[f64], shape: Vec<usize>) -> QuantizedMatrix {
    let mut absmax = Vec::with_capacity(data.len().div_ceil(BLOCK));
    let mut codes = Vec::with_capacity(data.len());
    for block in data.chunks(BLOCK) {
        let a = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        absmax.push(a);
        codes.extend(block.iter().map(|&w| encode(w, a)));
    }
    let packed = codes
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] + 8) as u8;
            let hi = pair.get(1).map(|c| (c + 8) as u8).unwrap_or(8);
            lo | (hi << 4)
        })
        .collect();
    QuantizedMatrix {
        shape,
        block: BLOCK,
        absmax,
        packed,
        len: data.len(),
    }
}

impl QuantizedMatrix {
    pub fn code(&self, i: usize) -> i8 {
        let byte = self.packed[i / 2];
        let nib = if i % 2 == 0 { byte & 0x0f } else { byte >> 4 };
        nib as i8 - 8
    }

    pub fn dequantize_vec(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| decode(self.code(i), self.absmax[i / self.block]))
            .collect()
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.dequantize_vec()).expect("shape recorded at quantization")
    }

    /// Structural consistency, used when loading checkpoints.
    pub fn is_consistent(&self) -> bool {
        self.block > 0
            && self.shape.iter().product::<usize>() == self.len
            && self.absmax.len() == self.len.div_ceil(self.block)
            && self.packed.len() == self.len.div_ceil(2)
            && self.absmax.iter().all(|a| a.is_finite() && *a >= 0.0)
            && (0..self.len).all(|i| self.code(i).abs() <= LEVELS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_exact() {
        for c in [0.1, -3.7, 0.0, 1e-300, 12345.678] {
            let t = Tensor::filled(&[3, 50], c);
            let back = quantize(&t).dequantize();
            assert_eq!(back.data(), t.data(), "c = {c}");
        }
    }

    #[test]
    fn error_bound() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 / 97.0 - 5.0).collect();
        let q = quantize_slice(&data, vec![1000]);
        let back = q.dequantize_vec();
        for (i, (w, r)) in data.iter().zip(&back).enumerate() {
            let a = q.absmax[i / BLOCK];
            assert!((w - r).abs() <= a / 7.0);
            assert!((w - r).abs() <= a / 14.0 * (1.0 + 1e-12));
        }
        assert!(q.is_consistent());
    }

    #[test]
    fn odd_lengths_pack() {
        let q = quantize_slice(&[1.0, -1.0, 0.5], vec![3]);
        assert_eq!(q.packed.len(), 2);
        assert_eq!(q.code(0), 7);
        assert_eq!(q.code(1), -7);
        assert_eq!(q.code(2), 4);
    }
}
