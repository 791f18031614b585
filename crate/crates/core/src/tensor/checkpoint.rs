//! Flat binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! b"UBRT"  version:u32  header_len:u32  header[header_len]
//! count:u32
//! count x { name_len:u32 name[name_len] rank:u32 dims:u64[rank] values:f64[prod(dims)] }
//! ```
//!
//! The header is opaque here; the model stores its configuration and
//! vocabulary in it. Values round-trip bit for bit.

use std::io::{self, Write};

use thiserror::Error;

use super::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"UBRT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor {name:?} declares an impossible shape {dims:?}")]
    BadShape { name: String, dims: Vec<u64> },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_checkpoint(out: &mut impl Write, header: &[u8], params: &ParamSet) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&len_u32(header.len())?.to_le_bytes())?;
    out.write_all(header)?;
    out.write_all(&len_u32(params.len())?.to_le_bytes())?;
    for (name, tensor) in params.iter() {
        out.write_all(&len_u32(name.len())?.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&len_u32(tensor.shape().len())?.to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn len_u32(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint into its header bytes and named tensors.
///
/// Every length is checked against the remaining input before anything is
/// allocated, so arbitrary bytes fail cleanly.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(Vec<u8>, ParamSet), CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = r.u32("header length")? as usize;
    let header = r.take(header_len, "header")?.to_vec();
    let count = r.u32("tensor count")?;

    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = r.u32("rank")? as usize;
        // Each dim takes 8 bytes; refuse ranks the input cannot hold.
        if rank > r.bytes.len() / 8 {
            return Err(CheckpointError::Truncated("dims"));
        }
        let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>, _>>()?;
        let numel = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| CheckpointError::BadShape {
                name: name.clone(),
                dims: dims.clone(),
            })?;
        let raw = r.take(numel * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let tensor = Tensor::new(&shape, data).map_err(|_| CheckpointError::BadShape { name: name.clone(), dims })?;
        params.push(name, tensor);
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::TrailingBytes(r.bytes.len()));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap());
        p.push("u", Tensor::new(&[2, 1, 2], vec![0.25, f64::NAN, -1.0, 3.0]).unwrap());
        p.push("s", Tensor::scalar(7.0));
        p
    }

    fn bits(p: &ParamSet) -> Vec<(String, Vec<usize>, Vec<u64>)> {
        p.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, b"{\"k\":1}", &sample()).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let (header, params) = read_checkpoint(&buf).unwrap();
        assert_eq!(header, b"{\"k\":1}");
        assert_eq!(bits(&params), bits(&sample()));
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, b"", &sample()).unwrap();
        assert!(matches!(read_checkpoint(b"NOPE"), Err(CheckpointError::BadMagic)));
        assert!(matches!(read_checkpoint(&buf[..3]), Err(CheckpointError::BadMagic)));
        for cut in [5, 12, 20, buf.len() - 1] {
            assert!(matches!(read_checkpoint(&buf[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut versioned = buf.clone();
        versioned[4] = 9;
        assert!(matches!(read_checkpoint(&versioned), Err(CheckpointError::UnsupportedVersion(9))));
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(read_checkpoint(&trailing), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn huge_declared_shapes_fail_without_allocating() {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(b'x');
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&u64::MAX.to_le_bytes());
        buf.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_checkpoint(&buf), Err(CheckpointError::BadShape { .. })));
    }
}
