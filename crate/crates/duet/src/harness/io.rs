//! Binary tensor files: magic `TNSR`, a format version, little-endian u32
//! rank, u64 dims, then the f64 payload. Dumb and exact — full-precision
//! round-trips with no parsing ambiguity.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::{Tensor, TensorResult};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported tensor file version {0}")]
    Version(u32),
    #[error("corrupt tensor file: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(IoError::Version(version));
    }
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 8 {
        return Err(IoError::Corrupt("implausible rank"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf)?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut u64buf)?;
        data.push(f64::from_le_bytes(u64buf));
    }
    // must be at EOF
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(IoError::Corrupt("trailing bytes"));
    }
    Ok(Tensor::new(shape, data)?)
}

/// Convenience for tests and callers that already track shapes.
pub fn roundtrip_check(t: &Tensor, path: &Path) -> TensorResult<bool> {
    match write_tensor(path, t).and_then(|_| read_tensor(path)) {
        Ok(back) => Ok(&back == t),
        Err(_) => Ok(false),
    }
}
