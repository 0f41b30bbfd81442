//! CLP1 raw clip files.
//!
//! ```text
//! 0   "CLP1"
//! 4   T, H, W, C as u32 LE
//! 20  dtype tag "f32\0"
//! 24  T·H·W·C f32 LE values
//! ```
//!
//! Raw clips hold values in `[0, 1]`. Frame-difference tensors written by
//! the `preprocess` command are signed, so the reader accepts `[−1, 1]`;
//! [`read_clip`] narrows that back to `[0, 1]`.

use std::path::Path;

use super::{format_err, read_file, write_file};
use crate::error::{Error, Result};
use crate::preproc::Clip;
use crate::tensor::Tensor;

pub const CLP1_MAGIC: &[u8; 4] = b"CLP1";
/// The magic doubles as the version; there is no separate field.
pub const CLP1_VERSION: u32 = 1;
const DTYPE: &[u8; 4] = b"f32\0";
const HEADER: usize = 24;

pub fn write_clp1(path: &Path, x: &Tensor<f32>) -> Result<()> {
    if x.rank() != 4 {
        return Err(Error::invalid(
            "write_clp1",
            format!("expected T×H×W×C, got {:?}", x.shape()),
        ));
    }
    let mut out = Vec::with_capacity(HEADER + 4 * x.len());
    out.extend_from_slice(CLP1_MAGIC);
    for &d in x.shape() {
        let d = u32::try_from(d).map_err(|_| Error::invalid("write_clp1", "extent exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(DTYPE);
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_clp1(path: &Path) -> Result<Tensor<f32>> {
    parse(path, &read_file(path)?)
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Tensor<f32>> {
    let err = |off: usize, msg: String| format_err(path, off as u64, msg);
    if bytes.len() < 4 || &bytes[..4] != CLP1_MAGIC {
        return Err(err(0, "bad magic, expected \"CLP1\"".into()));
    }
    if bytes.len() < HEADER {
        return Err(err(
            bytes.len(),
            format!("truncated header ({} of {HEADER} bytes)", bytes.len()),
        ));
    }
    let dims: Vec<usize> = (0..4)
        .map(|i| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(err(4 + 4 * i, "zero extent".into()));
    }
    if &bytes[20..24] != DTYPE {
        return Err(err(
            20,
            format!("unsupported dtype tag {:?}", String::from_utf8_lossy(&bytes[20..24])),
        ));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| err(4, "extent product overflows".into()))?;
    let want = n
        .checked_mul(4)
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| err(4, "payload size overflows".into()))?;
    if bytes.len() != want {
        return Err(err(
            bytes.len().min(want),
            format!("file is {} bytes, header declares {want}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(n);
    for (i, c) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !(-1.0..=1.0).contains(&v) {
            return Err(err(HEADER + 4 * i, format!("value {v} outside [-1, 1]")));
        }
        data.push(v);
    }
    Tensor::new(&dims, data)
}

/// A CLP1 file as a clip (values must lie in `[0, 1]`).
pub fn read_clip(path: &Path) -> Result<Clip> {
    Clip::new(read_clp1(path)?, path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.clp1");
        let x = Tensor::from_fn(&[3, 4, 5, 3], |i| (i % 17) as f32 / 16.0);
        write_clp1(&p, &x).unwrap();
        assert_eq!(read_clp1(&p).unwrap(), x);
        assert_eq!(read_clip(&p).unwrap().frames(), &x);

        let good = std::fs::read(&p).unwrap();
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(parse(&p, &bad), Err(Error::Format { offset: 0, .. })));
        assert!(parse(&p, &good[..good.len() - 2]).is_err());
        let mut nan = good.clone();
        nan[HEADER..HEADER + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse(&p, &nan), Err(Error::Format { offset: 24, .. })));
        let mut neg = good;
        neg[HEADER..HEADER + 4].copy_from_slice(&(-0.5f32).to_le_bytes());
        assert!(parse(&p, &neg).is_ok());
        std::fs::write(&p, &neg).unwrap();
        assert!(read_clip(&p).is_err());
    }
}
