//! `RGBPT` single-tensor container.
//!
//! ```text
//! magic   "RGBPT"   5 bytes
//! version u16 LE    currently 1
//! dtype   u8        1 = f32, 2 = f64
//! rank    u8
//! dims    u32 LE × rank
//! payload little-endian, row-major
//! ```
//! Tensors of rank below 4 load with leading unit dimensions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::container::{write_array, ByteReader};
use crate::tensor::{DType, Tensor};

pub const TENSOR_MAGIC: &[u8; 5] = b"RGBPT";
pub const TENSOR_VERSION: u16 = 1;

pub fn encode_tensor(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + t.len() * dtype.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    write_array(&mut out, dtype, &t.shape(), t.data())?;
    Ok(out)
}

pub fn decode_tensor(buf: &[u8]) -> Result<(DType, Tensor)> {
    let mut r = ByteReader::new(buf);
    r.magic(TENSOR_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::format(
            at as u64,
            format!("unsupported tensor version {version}"),
        ));
    }
    let at = r.offset();
    let (dtype, dims, data) = r.array()?;
    if r.remaining() != 0 {
        return Err(r.error(format!(
            "{} trailing bytes after the payload",
            r.remaining()
        )));
    }
    if dims.len() > 4 {
        return Err(Error::format(
            at as u64 + 1,
            format!("rank {} exceeds 4", dims.len()),
        ));
    }
    let mut shape = [1usize; 4];
    shape[4 - dims.len()..].copy_from_slice(&dims);
    Ok((dtype, Tensor::new(shape, data)?))
}

pub fn save_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_tensor(t, dtype)?)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_tensor(&bytes).map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    #[test]
    fn round_trip_bit_exact() {
        let t = Tensor::random_normal([2, 3, 4, 5], &mut PortableRng::new(1));
        let (dtype, back) = decode_tensor(&encode_tensor(&t, DType::F64).unwrap()).unwrap();
        assert_eq!(dtype, DType::F64);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        let (_, b32) = decode_tensor(&encode_tensor(&t, DType::F32).unwrap()).unwrap();
        assert!(b32.max_abs_diff(&t) < 1e-6);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::full([1, 1, 2, 2], 1.5);
        let bytes = encode_tensor(&t, DType::F64).unwrap();
        for cut in [0, 3, 6, 8, 10, bytes.len() - 1] {
            match decode_tensor(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_header_fields() {
        let t = Tensor::full([1, 1, 1, 2], 0.0);
        let mut bytes = encode_tensor(&t, DType::F32).unwrap();
        bytes[5] = 9;
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::Format { offset: 5, .. })
        ));
        let mut bytes = encode_tensor(&t, DType::F32).unwrap();
        bytes[7] = 7;
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::Format { offset: 7, .. })
        ));
    }

    #[test]
    fn overflowing_dims_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RGBPT");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[2, 4]);
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_tensor(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn lower_rank_is_padded() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RGBPT");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        write_array(&mut bytes, DType::F64, &[2, 3], &[1.0; 6]).unwrap();
        let (_, t) = decode_tensor(&bytes).unwrap();
        assert_eq!(t.shape(), [1, 1, 2, 3]);
    }
}
