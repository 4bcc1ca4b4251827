//! Binary parameter checkpoints.
//!
//! Little-endian layout: `b"MSCR"`, version `u32`, tensor count `u32`, then
//! per tensor: name length `u32`, UTF-8 name, rank `u32`, dims `u32 × rank`,
//! raw `f32` data.

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCR";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32, NumError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint(w: &mut impl Write, store: &ParamStore) -> Result<(), NumError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_u32(w, store.len() as u32)?;
    for (name, t) in store.named() {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.rank() as u32)?;
        for &d in t.shape() {
            put_u32(w, d as u32)?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Named tensors in file order.
pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor)>, NumError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NumError::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NumError::Format(format!("unsupported version {version}")));
    }
    let count = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NumError::Format(format!("tensor name: {e}")))?;
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[2], vec![1.5, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"MSCR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        // name length, name, rank, dim, 2 floats
        assert_eq!(buf.len(), 12 + 4 + 1 + 4 + 4 + 8);
        assert_eq!(f32::from_le_bytes(buf[25..29].try_into().unwrap()), 1.5);
    }

    #[test]
    fn roundtrip_rounds_to_f32() {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        s.add("a.b", Tensor::new(&[2], vec![1e-3, -7.25]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a.w");
        assert_eq!(back[0].1.data()[0], 0.1f32 as f64);
        assert_eq!(back[1].1.data()[1], -7.25);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(NumError::Format(_))));
    }
}
