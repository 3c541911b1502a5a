//! Shared helpers for on-disk model checkpoints.
//!
//! Matrices are stored as row-major little-endian f32, concatenated in a
//! fixed order per model; each model writes its own JSON header describing
//! shapes. Values are f64 in memory and rounded to f32 on save.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn write_matrices(path: &Path, arrays: &[&Array2<f64>]) -> Result<()> {
    let total: usize = arrays.iter().map(|a| a.len()).sum();
    let mut bytes = Vec::with_capacity(total * 4);
    for arr in arrays {
        for &v in arr.iter() {
            // Array2 iteration is row-major (standard layout)
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn read_matrices(path: &Path, shapes: &[(usize, usize)]) -> Result<Vec<Array2<f64>>> {
    let bytes = fs::read(path)?;
    let expected: usize = shapes.iter().map(|&(r, c)| r * c * 4).sum();
    if bytes.len() != expected {
        return Err(Error::Serde(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for &(rows, cols) in shapes {
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let chunk: [u8; 4] = bytes[offset..offset + 4].try_into().unwrap();
            values.push(f32::from_le_bytes(chunk) as f64);
            offset += 4;
        }
        out.push(
            Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| Error::Serde(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Round-trip an in-memory matrix through the same f32 precision the
/// checkpoint stores; lets tests assert exact equality after save/load.
#[cfg(test)]
pub(crate) fn quantize_f32(arr: &Array2<f64>) -> Array2<f64> {
    arr.mapv(|v| v as f32 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrices_round_trip_at_f32_precision() {
        let a = Array2::from_shape_fn((3, 2), |(r, c)| r as f64 + c as f64 * 0.1234567890123);
        let b = Array2::from_shape_fn((1, 4), |(_, c)| -(c as f64) * 1e-7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_matrices(&path, &[&a, &b]).unwrap();
        let read = read_matrices(&path, &[(3, 2), (1, 4)]).unwrap();
        assert_eq!(read[0], quantize_f32(&a));
        assert_eq!(read[1], quantize_f32(&b));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let a = Array2::<f64>::zeros((2, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_matrices(&path, &[&a]).unwrap();
        assert!(read_matrices(&path, &[(3, 2)]).is_err());
    }
}
