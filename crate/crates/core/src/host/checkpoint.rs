//! Host checkpoints.
//!
//! Layout, little-endian:
//!
//! | bytes   | field                                                   |
//! |---------|---------------------------------------------------------|
//! | 8       | magic `LRCHOST1`                                        |
//! | 2       | version (u16, currently 1)                              |
//! | 7 × 8   | n_layers, d_model, n_heads, d_ff, vocab, max_seq, seed (u64) |
//! | 8       | quantization block size (u64, 0 = unquantized)          |
//! | 4       | tensor count (u32)                                      |
//! | …       | per tensor: name, rows u32, cols u32, row-major f64     |
//!
//! Quantized hosts store the original weights and re-quantize on load, which is
//! deterministic.

use std::path::Path;

use super::{HostConfig, HostModel};
use crate::codec::{check_header, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const HOST_MAGIC: &[u8; 8] = b"LRCHOST1";
pub const HOST_VERSION: u16 = 1;

pub fn encode_host(host: &HostModel) -> Vec<u8> {
    let c = host.config();
    let mut w = ByteWriter::new();
    w.bytes(HOST_MAGIC);
    w.u16(HOST_VERSION);
    for v in [c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_seq] {
        w.u64(v as u64);
    }
    w.u64(c.seed);
    w.u64(host.quantization_block_size().unwrap_or(0) as u64);
    let tensors = host.named_tensors();
    w.u32(tensors.len() as u32);
    for (name, m) in tensors {
        w.str(&name);
        w.u32(m.rows() as u32);
        w.u32(m.cols() as u32);
        for &v in m.as_slice() {
            w.f64(v);
        }
    }
    w.into_inner()
}

pub fn decode_host(data: &[u8]) -> Result<HostModel> {
    let mut r = ByteReader::new(data);
    check_header(&mut r, HOST_MAGIC, HOST_VERSION)?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let config = HostConfig {
        n_layers: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        d_ff: dims[3],
        vocab_size: dims[4],
        max_seq: dims[5],
        seed: r.u64()?,
    };
    config.validate()?;
    let block = r.u64()? as usize;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if 8 * rows * cols > r.remaining() {
            return Err(Error::TruncatedPayload {
                expected: r.position() + 8 * rows * cols,
                found: data.len(),
            });
        }
        let values = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Matrix::from_vec(rows, cols, values).map_err(|e| Error::Malformed(format!("{name}: {e}")))?);
    }
    if r.remaining() != 0 {
        return Err(Error::TruncatedPayload {
            expected: r.position(),
            found: data.len(),
        });
    }
    HostModel::from_parts(config, tensors, (block > 0).then_some(block))
}

pub fn save_host(host: &HostModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_host(host)).map_err(|e| Error::io(path, e))
}

pub fn load_host(path: impl AsRef<Path>) -> Result<HostModel> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_host(&data)
}
