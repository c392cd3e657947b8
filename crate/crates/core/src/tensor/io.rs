//! Binary tensor dump: 8-byte magic `VMTENSOR`, `u32` rank, `rank` × `u32`
//! extents, then the `f64` payload. All integers and floats little-endian.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"VMTENSOR";

pub fn write_tensor<W: Write>(out: &mut W, t: &Tensor) -> std::io::Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for &d in t.dims() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)
}

/// Reads one tensor. `origin` only labels error messages.
pub fn read_tensor<R: Read>(input: &mut R, origin: &std::path::Path) -> Result<Tensor> {
    let mut magic = [0u8; 8];
    read_exact(input, &mut magic, origin)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format(origin, "bad tensor magic"));
    }
    let rank = read_u32(input, origin)? as usize;
    if rank > 8 {
        return Err(Error::format(origin, format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(input, origin)? as usize);
    }
    let numel: usize = dims.iter().product();
    let mut bytes = vec![0u8; numel * 8];
    read_exact(input, &mut bytes, origin)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::from_vec(dims, data).map_err(|e| Error::format(origin, e.to_string()))
}

fn read_u32<R: Read>(input: &mut R, origin: &std::path::Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, origin)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], origin: &std::path::Path) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(origin, "truncated tensor")
        } else {
            Error::io(origin, e)
        }
    })
}
