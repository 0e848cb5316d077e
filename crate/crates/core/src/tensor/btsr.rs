//! The BTSR portable tensor file.
//!
//! ```text
//! magic   "BTSR" (42 54 53 52)
//! version u32 LE = 1
//! dtype   u8     1 = f32, 2 = f64
//! ndim    u8
//! dims    ndim × u64 LE
//! payload row-major IEEE-754 LE values
//! ```

use std::fs;
use std::path::Path;

use super::{DType, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BTSR";
pub const VERSION: u32 = 1;

fn dtype_code(dtype: DType) -> u8 {
    match dtype {
        DType::F32 => 1,
        DType::F64 => 2,
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(10 + 8 * t.ndim() + width * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code(t.dtype()));
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dtype = match r.take(1)?[0] {
        1 => DType::F32,
        2 => DType::F64,
        other => return Err(format!("unknown dtype code {other}")),
    };
    let ndim = r.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if d == 0 {
            return Err("zero-sized dimension".into());
        }
        shape.push(usize::try_from(d).map_err(|_| "dimension too large".to_string())?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("element count overflows")?;
    let data: Vec<f64> = match dtype {
        DType::F32 => r
            .take(n.checked_mul(4).ok_or("payload too large")?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => r
            .take(n.checked_mul(8).ok_or("payload too large")?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(format!("non-finite value at element {bad}"));
    }
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor::from_parts(shape, data, dtype))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    decode_inner(bytes).map_err(|reason| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::from_f32(&[2, 1], &[1.0, -2.5]).unwrap();
        let b = encode(&t);
        let mut expected = vec![0x42, 0x54, 0x53, 0x52, 1, 0, 0, 0, 1, 2];
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn truncated_and_padded_files_are_malformed() {
        let t = Tensor::from_f32(&[3, 3], &[0.5; 9]).unwrap();
        let b = encode(&t);
        let p = Path::new("x.btsr");
        for cut in [0, 3, 9, 17, b.len() - 1] {
            assert!(matches!(decode(&b[..cut], p), Err(Error::MalformedFile { .. })));
        }
        let mut long = b.clone();
        long.push(0);
        assert!(decode(&long, p).is_err());
        let mut bad = b;
        bad[0] = b'X';
        assert!(decode(&bad, p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1usize..5, 1..4),
                      seed in any::<u64>(), wide in any::<bool>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed as f64) * 1e-9 + i as f64).sin() * 1e3).collect();
            let dtype = if wide { DType::F64 } else { DType::F32 };
            let t = Tensor::new(&dims, data, dtype).unwrap();
            let back = decode(&encode(&t), Path::new("p")).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
