//! Flat binary parameter checkpoints.
//!
//! Layout, all integers u64 little-endian:
//!
//! ```text
//! "SCSTSUM1" count { name_len name_utf8 rank dim* f64_le* }*
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCSTSUM1";

fn put_u64(out: &mut impl Write, v: u64) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint(out: &mut impl Write, params: &ParamStore) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    put_u64(out, params.len() as u64)?;
    for (name, t) in params.iter() {
        put_u64(out, name.len() as u64)?;
        out.write_all(name.as_bytes())?;
        put_u64(out, t.rank() as u64)?;
        for &d in t.shape() {
            put_u64(out, d as u64)?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible {what} {v}")))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = cur.len("record count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.len("name length")?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.len("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.len("dimension")?);
        }
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint(format!("tensor `{name}` too large"))
        })?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        if store.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_bytes() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::from_vec(vec![1.5]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        let mut want = b"SCSTSUM1".to_vec();
        want.extend(1u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.push(b'b');
        want.extend(1u64.to_le_bytes());
        want.extend(1u64.to_le_bytes());
        want.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[2, 2]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut &bad[..]).is_err());
        buf.push(0);
        assert!(read_checkpoint(&mut &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::btree_map(
                "[a-z.]{1,12}",
                (prop::collection::vec(1usize..4, 0..3), any::<u64>()),
                1..5,
            )
        ) {
            let mut store = ParamStore::new();
            for (name, (shape, seed)) in tensors {
                let numel: usize = shape.iter().product();
                let data = (0..numel as u64)
                    .map(|i| f64::from_bits(seed.wrapping_mul(i + 1).rotate_left(7)))
                    .collect();
                store.insert(name, Tensor::new(shape, data).unwrap());
            }
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &store).unwrap();
            let back = read_checkpoint(&mut &buf[..]).unwrap();
            prop_assert_eq!(back.len(), store.len());
            for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
