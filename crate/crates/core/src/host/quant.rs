//! Symmetric blockwise absmax 4-bit quantization.
//!
//! Values are split into consecutive blocks of `block_size` (row-major order).
//! Each block stores its absolute maximum `m`; entries map to integer codes in
//! −7..=7 with step `m / 7`, so the round-trip error is at most `m / 14`.
//! Codes are packed two per byte as 4-bit two's complement nibbles.

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const DEFAULT_BLOCK_SIZE: usize = 64;
const LEVELS: f64 = 7.0;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedBlocks {
    rows: usize,
    cols: usize,
    block_size: usize,
    packed: Vec<u8>,
    absmax: Vec<f64>,
}

impl QuantizedBlocks {
    pub fn quantize(m: &Matrix, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidArgument("block_size must be at least 1".into()));
        }
        let values = m.as_slice();
        let mut absmax = Vec::with_capacity(values.len().div_ceil(block_size));
        let mut codes = Vec::with_capacity(values.len());
        for block in values.chunks(block_size) {
            let amax = block.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            absmax.push(amax);
            for &v in block {
                let code = if amax == 0.0 {
                    0
                } else {
                    (v / amax * LEVELS).round().clamp(-LEVELS, LEVELS) as i8
                };
                codes.push(code);
            }
        }
        let packed = codes
            .chunks(2)
            .map(|pair| {
                let lo = (pair[0] as u8) & 0x0F;
                let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0F);
                lo | (hi << 4)
            })
            .collect();
        Ok(Self {
            rows: m.rows(),
            cols: m.cols(),
            block_size,
            packed,
            absmax,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn absmax(&self) -> &[f64] {
        &self.absmax
    }

    /// Signed code of element `i` (row-major), in −7..=7.
    pub fn code(&self, i: usize) -> i8 {
        let byte = self.packed[i / 2];
        let nibble = if i.is_multiple_of(2) { byte & 0x0F } else { byte >> 4 };
        // sign-extend the 4-bit value
        ((nibble << 4) as i8) >> 4
    }

    pub fn dequantize(&self) -> Matrix {
        let values = (0..self.len())
            .map(|i| {
                let scale = self.absmax[i / self.block_size] / LEVELS;
                f64::from(self.code(i)) * scale
            })
            .collect();
        Matrix::from_vec(self.rows, self.cols, values).expect("dequantized values are finite")
    }
}
