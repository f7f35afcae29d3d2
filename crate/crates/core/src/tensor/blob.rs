//! Tensor blob encoding: `rank: u32`, `extents: [u32; rank]`, then the data
//! as little-endian `f32`, row-major.

use super::{numel_of, Real, Tensor};
use crate::error::{Error, Result};

/// Bounds-checked little-endian reader that reports byte offsets on failure.
#[derive(Debug, Clone)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { offset: self.pos as u64, missing: (n - self.remaining()) as u64 });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Append `t` to `out`.
pub fn write_blob<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.reserve(4 * t.numel());
    for v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Decode one blob as a constant tensor.
pub fn read_blob<T: Real>(r: &mut ByteReader<'_>) -> Result<Tensor<T>> {
    const MAX_RANK: u32 = 8;
    let at = r.offset();
    let rank = r.u32()?;
    if rank > MAX_RANK {
        return Err(Error::Format { offset: at, detail: format!("tensor rank {rank} exceeds {MAX_RANK}") });
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = numel_of(&shape);
    let bytes = r.take(4 * n)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(Tensor::from_vec(&shape, data)?)
}
