//! Binary tensor interchange format.
//!
//! Layout, all little-endian:
//!
//! | bytes      | content                              |
//! |------------|--------------------------------------|
//! | 4          | magic `FTNS`                         |
//! | 4          | rank as `u32`                        |
//! | 8 × rank   | dimensions as `u64`                  |
//! | 1          | dtype tag: 0 = `f64`, 1 = `f32`      |
//! | n × size   | values in row-major order            |

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{bail, Result};

pub const MAGIC: &[u8; 4] = b"FTNS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            t => bail!(Format, "unknown dtype tag {t}"),
        }
    }
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor, dtype: DType) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&[dtype as u8])?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for &v in t.data() {
        match dtype {
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        bail!(Format, "bad magic {:?}", magic);
    }
    let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if rank > 16 {
        bail!(Format, "implausible rank {rank}");
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(read_array(&mut r)?);
        shape.push(usize::try_from(d).map_err(|_| crate::Error::Format(format!("dimension {d}")))?);
    }
    let dtype = DType::from_tag(read_array::<1, _>(&mut r)?[0])?;
    let n: usize = shape.iter().product();
    let size = match dtype {
        DType::F64 => 8,
        DType::F32 => 4,
    };
    let mut raw = vec![0u8; n * size];
    r.read_exact(&mut raw)?;
    let data = match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Tensor::new(&shape, data)
}
