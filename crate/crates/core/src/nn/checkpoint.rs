//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "HIGHAIR1"
//! manifest   u32 len + bytes (opaque to this codec)
//! count      u32
//! per tensor u32 name len + utf-8 name, u32 ndim, u64 dims[ndim],
//!            f64 payload[product(dims)]
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HIGHAIR1";

pub fn encode(store: &ParamStore, manifest: &[u8]) -> Vec<u8> {
    let payload: usize = store.iter().map(|(n, t)| n.len() + 16 + 8 * (t.ndim() + t.len())).sum();
    let mut out = Vec::with_capacity(16 + manifest.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(alloc::format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("dimension overflow".into()))
    }
}

/// Decodes a container produced by [`encode`], returning the parameters and the manifest bytes.
pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Vec<u8>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mlen = r.u32()?;
    let manifest = r.take(mlen)?.to_vec();
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::matrix(1, 2, alloc::vec![1.0, f64::MIN_POSITIVE])).unwrap();
        let bytes = encode(&store, b"{}");
        let (back, manifest) = decode(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(manifest, b"{}");
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
