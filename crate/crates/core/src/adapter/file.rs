//! Binary adapter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes        | field                                        |
//! |--------------|----------------------------------------------|
//! | 8            | magic `LRCMPSE1`                             |
//! | 2            | version (u16, currently 1)                   |
//! | 4 + n        | name: u32 byte length, then UTF-8            |
//! | 4            | site layer (u32)                             |
//! | 1            | site kind code (u8, q=0 … lm_head=7)         |
//! | 4 / 4 / 4    | d_out, d_in, r (u32)                         |
//! | 8            | alpha (f64)                                  |
//! | 8            | dropout probability (f64)                    |
//! | 4·d_out·r    | A, row-major f32                             |
//! | 4·d_in·r     | B, row-major f32                             |

use std::path::Path;

use crate::adapter::LowRankAdapter;
use crate::codec::{check_header, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::site::{AttachmentSite, SiteKind};

pub const ADAPTER_MAGIC: &[u8; 8] = b"LRCMPSE1";
pub const ADAPTER_VERSION: u16 = 1;

pub fn encode(adapter: &LowRankAdapter) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(ADAPTER_MAGIC);
    w.u16(ADAPTER_VERSION);
    w.str(adapter.name());
    w.u32(adapter.site().layer as u32);
    w.u8(adapter.site().kind.code());
    w.u32(adapter.d_out() as u32);
    w.u32(adapter.d_in() as u32);
    w.u32(adapter.rank() as u32);
    w.f64(adapter.alpha());
    w.f64(adapter.dropout_p());
    for m in [adapter.a(), adapter.b()] {
        for &v in m.as_slice() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(Error::NonFinite("adapter payload does not fit in f32"));
            }
            w.f32(narrow);
        }
    }
    Ok(w.into_inner())
}

pub fn decode(data: &[u8]) -> Result<LowRankAdapter> {
    let mut r = ByteReader::new(data);
    check_header(&mut r, ADAPTER_MAGIC, ADAPTER_VERSION)?;
    let name = r.str()?;
    let layer = r.u32()? as usize;
    let code = r.u8()?;
    let kind = SiteKind::from_code(code).ok_or_else(|| Error::Malformed(format!("unknown site kind code {code}")))?;
    let d_out = r.u32()? as usize;
    let d_in = r.u32()? as usize;
    let rank = r.u32()? as usize;
    let alpha = r.f64()?;
    let dropout_p = r.f64()?;
    if d_out == 0 || d_in == 0 || rank == 0 {
        return Err(Error::Malformed(format!(
            "zero dimension in header (d_out={d_out}, d_in={d_in}, r={rank})"
        )));
    }

    let expected = r.position() + 4 * rank * (d_out + d_in);
    if data.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: data.len(),
        });
    }
    let mut read_matrix = |rows: usize| -> Result<Matrix> {
        let values = (0..rows * rank).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, rank, values)
    };
    let a = read_matrix(d_out)?;
    let b = read_matrix(d_in)?;
    LowRankAdapter::from_parts(name, AttachmentSite::new(layer, kind), alpha, dropout_p, a, b)
}

pub fn save(adapter: &LowRankAdapter, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(adapter)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<LowRankAdapter> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}
