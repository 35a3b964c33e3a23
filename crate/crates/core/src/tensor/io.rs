//! SPDT tensor files: magic `SPDT`, little-endian u32 rank, u32 dims, then
//! the raw little-endian f32 payload in row-major (batch, channel, height,
//! width) order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{format_err, io_err, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: [u8; 4] = *b"SPDT";
const RANK: u32 = 4;

pub fn tensor_to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(4 + 4 + 16 + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&RANK.to_le_bytes());
    for dim in [s.batch, s.channels, s.height, s.width] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads one tensor record from a stream, leaving the cursor after it.
pub fn read_tensor(reader: &mut impl Read, path: &Path) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    read_exact(reader, &mut magic, path, "tensor magic")?;
    if magic != MAGIC {
        return Err(format_err(path, format!("bad tensor magic {magic:?}, expected `SPDT`")));
    }
    let rank = read_u32(reader, path, "tensor rank")?;
    if rank != RANK {
        return Err(format_err(path, format!("unsupported tensor rank {rank}, expected 4")));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = read_u32(reader, path, "tensor dims")? as usize;
        // Guard against absurd headers before allocating the payload.
        if *d > (1 << 28) {
            return Err(format_err(path, format!("dimension {i} too large: {d}")));
        }
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    if shape.len() > (1 << 30) {
        return Err(format_err(path, format!("tensor volume too large: {}", shape.len())));
    }
    let mut payload = vec![0u8; shape.len() * 4];
    read_exact(reader, &mut payload, path, "tensor payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor_file(path: &Path, t: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, tensor_to_bytes(t)).map_err(io_err(path))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut cursor = bytes.as_slice();
    let tensor = read_tensor(&mut cursor, path)?;
    if !cursor.is_empty() {
        return Err(format_err(path, format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(tensor)
}

pub(crate) fn read_exact(
    reader: &mut impl Read,
    buf: &mut [u8],
    path: &Path,
    what: &str,
) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| format_err(path, format!("truncated while reading {what}")))
}

pub(crate) fn read_u32(reader: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, path, what)?;
    Ok(u32::from_le_bytes(buf))
}

#[allow(dead_code)]
pub(crate) fn write_u32(writer: &mut impl Write, value: u32, path: &Path) -> Result<()> {
    writer.write_all(&value.to_le_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::from_fn(Shape::new(2, 3, 4, 5), |i| (i as f32) * 0.25 - 7.5)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.spdt");
        write_tensor_file(&path, &t).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn corrupt_magic_is_structured_error() {
        let mut bytes = tensor_to_bytes(&sample());
        bytes[0] = b'X';
        let mut cursor = bytes.as_slice();
        let err = read_tensor(&mut cursor, Path::new("t.spdt")).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_is_structured_error() {
        let bytes = tensor_to_bytes(&sample());
        let mut cursor = &bytes[..bytes.len() - 3];
        let err = read_tensor(&mut cursor, Path::new("t.spdt")).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn bad_rank_is_rejected() {
        let mut bytes = tensor_to_bytes(&sample());
        bytes[4] = 3;
        let mut cursor = bytes.as_slice();
        assert!(read_tensor(&mut cursor, Path::new("t.spdt")).is_err());
    }
}
