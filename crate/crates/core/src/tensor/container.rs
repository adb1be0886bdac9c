//! `RGBPW` weight container.
//!
//! ```text
//! magic   "RGBPW"              5 bytes
//! version u16 LE               currently 1
//! count   u32 LE
//! count × entry:
//!   name_len u16 LE, name UTF-8
//!   dtype    u8                1 = f32, 2 = f64
//!   rank     u8
//!   dims     u32 LE × rank
//!   payload  little-endian, row-major
//! ```

use std::io::Write;
use std::path::Path;

use super::params::Parameterized;
use super::DType;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 5] = b"RGBPW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    entry: Option<String>,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            entry: None,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            entry: self.entry.clone(),
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn magic(&mut self, magic: &[u8]) -> Result<()> {
        let start = self.pos;
        let got = self.take(magic.len(), "magic")?;
        if got != magic {
            self.pos = start;
            return Err(self.error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    /// dtype, rank, dims and payload of one array.
    pub(crate) fn array(&mut self) -> Result<(DType, Vec<usize>, Vec<f64>)> {
        let code = self.u8("dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| {
            self.pos -= 1;
            self.error(format!("unknown dtype code {code}"))
        })?;
        let rank = self.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("dims")? as usize);
        }
        let bytes = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .filter(|&b| b <= self.remaining())
            .ok_or_else(|| {
                self.error(format!(
                    "dims {dims:?} of {} need more bytes than the {} remaining",
                    match dtype {
                        DType::F32 => "f32",
                        DType::F64 => "f64",
                    },
                    self.remaining()
                ))
            })?;
        let payload = self.take(bytes, "payload")?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        };
        Ok((dtype, dims, data))
    }
}

pub(crate) fn write_array(
    out: &mut Vec<u8>,
    dtype: DType,
    dims: &[usize],
    data: &[f64],
) -> Result<()> {
    out.push(dtype.code());
    let rank = u8::try_from(dims.len()).map_err(|_| Error::shape("rank above 255"))?;
    out.push(rank);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F32 => data
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => data
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(())
}

pub fn encode_weights(entries: &[WeightEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::shape("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::validation(format!("entry name `{}` is too long", e.name)))?;
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(Error::shape(format!(
                "entry `{}` dims do not match its data",
                e.name
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        write_array(&mut out, e.dtype, &e.dims, &e.data)?;
    }
    Ok(out)
}

pub fn decode_weights(buf: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = ByteReader::new(buf);
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u16("version")?;
    if version != WEIGHTS_VERSION {
        r.pos -= 2;
        return Err(r.error(format!("unsupported weights version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity((count as usize).min(4096));
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let raw = r.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| r.error(format!("entry {i} name is not UTF-8")))?
            .to_string();
        r.entry = Some(name.clone());
        let (dtype, dims, data) = r.array()?;
        r.entry = None;
        entries.push(WeightEntry {
            name,
            dtype,
            dims,
            data,
        });
    }
    if r.remaining() != 0 {
        return Err(r.error(format!(
            "{} trailing bytes after the last entry",
            r.remaining()
        )));
    }
    Ok(entries)
}

/// Every parameter and buffer of `params` as `f64` entries.
pub fn params_to_entries<P: Parameterized + ?Sized>(params: &P) -> Vec<WeightEntry> {
    let mut out = Vec::new();
    params.visit("", &mut |name, _, dims, data| {
        out.push(WeightEntry {
            name: name.to_string(),
            dtype: DType::F64,
            dims: dims.to_vec(),
            data: data.to_vec(),
        })
    });
    out
}

/// Fills `params` from `entries`, matching by name and checking dims.
pub fn load_entries_into<P: Parameterized + ?Sized>(
    params: &mut P,
    entries: &[WeightEntry],
) -> Result<()> {
    let mut failure: Option<Error> = None;
    let mut used = vec![false; entries.len()];
    params.visit_mut("", &mut |name, _, dims, data| {
        if failure.is_some() {
            return;
        }
        let Some(pos) = entries.iter().position(|e| e.name == name) else {
            failure = Some(Error::Format {
                offset: 0,
                entry: Some(name.to_string()),
                message: "entry missing from weights file".into(),
            });
            return;
        };
        let e = &entries[pos];
        if e.dims != dims {
            failure = Some(Error::Format {
                offset: 0,
                entry: Some(name.to_string()),
                message: format!("dims {:?} do not match the model's {:?}", e.dims, dims),
            });
            return;
        }
        if let Some(i) = e.data.iter().position(|v| !v.is_finite()) {
            failure = Some(Error::Format {
                offset: 0,
                entry: Some(name.to_string()),
                message: format!("non-finite value at index {i}"),
            });
            return;
        }
        used[pos] = true;
        data.copy_from_slice(&e.data);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(pos) = used.iter().position(|u| !u) {
        return Err(Error::Format {
            offset: 0,
            entry: Some(entries[pos].name.clone()),
            message: "entry is not used by the model".into(),
        });
    }
    Ok(())
}

pub fn save_params<P: Parameterized + ?Sized>(params: &P, path: &Path) -> Result<()> {
    let bytes = encode_weights(&params_to_entries(params))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_params<P: Parameterized + ?Sized>(params: &mut P, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    load_entries_into(params, &decode_weights(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<WeightEntry> {
        vec![
            WeightEntry {
                name: "a.weight".into(),
                dtype: DType::F64,
                dims: vec![2, 3],
                data: vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0],
            },
            WeightEntry {
                name: "b".into(),
                dtype: DType::F32,
                dims: vec![2],
                data: vec![0.5, -8.0],
            },
        ]
    }

    #[test]
    fn round_trip_bit_exact() {
        let bytes = encode_weights(&sample()).unwrap();
        assert_eq!(&bytes[..5], b"RGBPW");
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(sample()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn corruption_names_the_entry() {
        let mut bytes = encode_weights(&sample()).unwrap();
        bytes.truncate(bytes.len() - 3);
        match decode_weights(&bytes).unwrap_err() {
            Error::Format { entry, offset, .. } => {
                assert_eq!(entry.as_deref(), Some("b"));
                assert!(offset > 0);
            }
            e => panic!("unexpected {e}"),
        }
        let mut bytes = encode_weights(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_weights(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bytes = encode_weights(&sample()).unwrap();
        bytes.push(0);
        assert!(decode_weights(&bytes).is_err());
    }

    #[test]
    fn huge_dims_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RGBPW");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'x');
        bytes.push(2);
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        let err = decode_weights(&bytes).unwrap_err();
        assert!(err.to_string().contains("entry `x`"), "{err}");
    }
}
