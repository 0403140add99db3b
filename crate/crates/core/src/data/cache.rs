//! Binary dataset cache.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "CSDR1"                     5 bytes magic
//! rows: u64, cols: u64
//! X: rows*cols f64            row-major
//! y: rows f64
//! names: cols x (u32 byte length, UTF-8 bytes)
//! standardized: u8            0 or 1
//! if 1: cols f64 means, cols f64 scales, f64 response mean, f64 response scale
//! ```

use std::path::Path;

use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const CACHE_MAGIC: &[u8; 5] = b"CSDR1";

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let (n, p) = (data.n(), data.p());
    let mut out = Vec::with_capacity(5 + 16 + 8 * (n * p + n) + 16 * p);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for v in data.x().data().iter().chain(data.y()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in data.feature_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    match data.standardization() {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            for v in st.column_means.iter().chain(&st.column_scales) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&st.response_mean.to_le_bytes());
            out.extend_from_slice(&st.response_scale.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            Error::Format {
                what: "dataset cache",
                detail: format!("truncated at byte {}", self.pos),
            }
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format {
            what: "dataset cache",
            detail: "size overflow".into(),
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(5)? != CACHE_MAGIC {
        return Err(Error::Format {
            what: "dataset cache",
            detail: "bad magic".into(),
        });
    }
    let n = cur.u64()? as usize;
    let p = cur.u64()? as usize;
    let x = cur.f64s(n.checked_mul(p).ok_or_else(|| Error::Format {
        what: "dataset cache",
        detail: "size overflow".into(),
    })?)?;
    let y = cur.f64s(n)?;
    let mut names = Vec::with_capacity(p);
    for _ in 0..p {
        let len = cur.u32()? as usize;
        let bytes = cur.take(len)?;
        names.push(String::from_utf8(bytes.to_vec()).map_err(|e| Error::Format {
            what: "dataset cache",
            detail: e.to_string(),
        })?);
    }
    let standardization = match cur.take(1)?[0] {
        0 => None,
        1 => Some(Standardization {
            column_means: cur.f64s(p)?,
            column_scales: cur.f64s(p)?,
            response_mean: cur.f64()?,
            response_scale: cur.f64()?,
        }),
        flag => {
            return Err(Error::Format {
                what: "dataset cache",
                detail: format!("bad standardization flag {flag}"),
            })
        }
    };
    if cur.pos != buf.len() {
        return Err(Error::Format {
            what: "dataset cache",
            detail: format!("{} trailing bytes", buf.len() - cur.pos),
        });
    }
    Dataset::new(DenseMatrix::new(n, p, x)?, y, names)?.with_standardization(standardization)
}

pub fn write_cache(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(data)).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&buf)
}
