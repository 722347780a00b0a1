//! Dense row-major tensors and the `FPT1` file format.
//!
//! [`Tensor`] is deliberately small: a shape plus a flat buffer. Hot code
//! works on raw slices with explicit strides; the type mostly carries data
//! between modules and to disk.
//!
//! ## `FPT1` format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "FPT1"
//! rank    u32      number of dimensions (1..=8)
//! dims    rank*u32 each >= 1
//! data    prod(dims) * f32, row-major (last dimension fastest)
//! ```
//!
//! Payloads are always 32-bit floats regardless of the in-memory scalar; a
//! 64-bit tensor is rounded on write and widened on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `FPT1` magic bytes.
pub const TENSOR_MAGIC: [u8; 4] = *b"FPT1";
/// Maximum rank accepted when reading tensor files.
pub const MAX_RANK: usize = 8;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Zero-filled tensor. Panics on an empty shape or a zero dimension;
    /// those are programming errors, not data errors.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    /// Constant-filled tensor. Same panics as [`Tensor::zeros`].
    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor shape must be non-empty with positive dims, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Wraps an existing buffer; errors if the length does not match.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("shape must be non-empty with positive dims, got {shape:?}"),
            ));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expect} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Reinterprets the buffer under a new shape of the same total length.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Element-wise construction in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of rows of a rank-≥2 tensor viewed as `[rows × row_len]`.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Length of one leading-dimension row (product of trailing dims).
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// Slice of row `i` when the tensor is viewed as `[rows × row_len]`.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Mutable slice of row `i`.
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Value at `(i, j)` of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Value at `(i, j, k)` of a rank-3 tensor.
    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op,
                    detail: format!("element {i} of shape {:?} is {v}", self.shape),
                });
            }
        }
        Ok(())
    }

    /// Converts element-wise to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Largest absolute difference against a same-shape tensor.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Serializes in `FPT1` format (see module docs).
    pub fn write_fpt(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        emit(&TENSOR_MAGIC)?;
        emit(&(self.rank() as u32).to_le_bytes())?;
        for &d in &self.shape {
            emit(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            emit(&v.as_f32().to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads an `FPT1` file, validating the header and finiteness.
    pub fn read_fpt(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |detail: String| Error::format("tensor file", path, detail);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("file shorter than header".into()))?;
        if magic != TENSOR_MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected \"FPT1\"")));
        }
        let rank = read_u32(&mut r).map_err(|_| bad("missing rank".into()))? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(bad(format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            let d = read_u32(&mut r).map_err(|_| bad(format!("missing dim {i}")))? as usize;
            if d == 0 {
                return Err(bad(format!("dim {i} is zero")));
            }
            shape.push(d);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for i in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("payload truncated at element {i} of {len}")))?;
            data.push(T::of(f32::from_le_bytes(buf) as f64));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes after payload".into()));
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor file read")
            .map_err(|_| bad("payload contains non-finite values".into()))?;
        Ok(t)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("needs 6"));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[], vec![]).is_err());
    }

    #[test]
    fn row_views() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.at2(1, 2), 5.0);
    }

    #[test]
    fn fpt_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fpt");
        let t = Tensor::<f32>::from_fn(&[3, 4, 2], |i| (i as f32).sin());
        t.write_fpt(&path).unwrap();
        let back = Tensor::<f32>::read_fpt(&path).unwrap();
        assert_eq!(t.shape(), back.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // A second write of the loaded tensor reproduces the file byte for byte.
        let path2 = dir.path().join("t2.fpt");
        back.write_fpt(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn fpt_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(Tensor::<f32>::read_fpt(&path).is_err());

        let t = Tensor::<f32>::zeros(&[4]);
        t.write_fpt(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        let err = Tensor::<f32>::read_fpt(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn fpt_rejects_non_finite_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.fpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FPT1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = Tensor::<f32>::read_fpt(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn f64_round_trips_through_f32_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.fpt");
        let t = Tensor::<f64>::from_fn(&[5], |i| i as f64 / 7.0);
        t.write_fpt(&path).unwrap();
        let back = Tensor::<f64>::read_fpt(&path).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
