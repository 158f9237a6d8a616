//! FDMP feature dumps and labeled CSV export.
//!
//! An FDMP file is a little-endian header followed by a row-major payload:
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 4            | magic `FDMP`                           |
//! | 4            | version, `u32` = 1                     |
//! | 1            | dtype, `u8`: 0 = f32, 1 = f64          |
//! | 1            | ndim, `u8` in 1..=4                    |
//! | 8 · ndim     | dims, `u64` each                       |
//! | count · size | payload                                |
//!
//! Concurrent writes to one path are not synchronized.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoError};
use crate::linalg::Matrix;
use crate::tensor::{FeatureMap, Logits};

pub const MAGIC: [u8; 4] = *b"FDMP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, IoError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(IoError::BadDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// N-dimensional array as stored in a dump (1 to 4 axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, Error> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::dim(format!(
                "tensor rank {} outside 1..=4",
                dims.len()
            )));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} need {count} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn to_matrix(&self) -> Result<Matrix, Error> {
        match self.dims[..] {
            [r, c] => Matrix::from_vec(r, c, self.data.clone()),
            _ => Err(Error::dim(format!(
                "expected a 2-D dump, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_feature_map(&self) -> Result<FeatureMap, Error> {
        match self.dims[..] {
            [b, c, h, w] => FeatureMap::new(b, c, h, w, self.data.clone()),
            _ => Err(Error::dim(format!(
                "expected a 4-D dump, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// 2-D dumps as-is; 4-D dumps flattened to `(b, c·h·w)`.
    pub fn to_sample_matrix(&self) -> Result<Matrix, Error> {
        match self.ndim() {
            2 => self.to_matrix(),
            4 => Ok(self.to_feature_map()?.flatten()),
            _ => Err(Error::dim(format!(
                "expected a 2-D or 4-D dump, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Tensor {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }
}

impl From<&Logits> for Tensor {
    fn from(z: &Logits) -> Self {
        Tensor::from(z.as_matrix())
    }
}

impl From<&FeatureMap> for Tensor {
    fn from(f: &FeatureMap) -> Self {
        let (b, c, h, w) = f.dims();
        Tensor {
            dims: vec![b, c, h, w],
            data: f.as_slice().to_vec(),
        }
    }
}

/// Header length in bytes for a tensor of rank `ndim`.
pub fn header_len(ndim: usize) -> usize {
    4 + 4 + 1 + 1 + 8 * ndim
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(t.ndim()) + t.data.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => t
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8], allow_nonfinite: bool) -> Result<Tensor, IoError> {
    let short = |expected: u64| IoError::LengthMismatch {
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 10 {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(IoError::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(short(10));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(IoError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(IoError::BadVersion(version));
    }
    let dtype = Dtype::from_code(bytes[8])?;
    let ndim = bytes[9];
    if !(1..=4).contains(&ndim) {
        return Err(IoError::BadNdim(ndim));
    }
    let hdr = header_len(ndim as usize);
    if bytes.len() < hdr {
        return Err(short(hdr as u64));
    }
    let dims: Vec<u64> = bytes[10..hdr]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected = dims
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
        .unwrap_or(u64::MAX);
    let found = (bytes.len() - hdr) as u64;
    if expected != found {
        return Err(IoError::LengthMismatch { expected, found });
    }
    let payload = &bytes[hdr..];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if !allow_nonfinite {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFinite { index });
        }
    }
    let dims = dims.into_iter().map(|d| d as usize).collect();
    Ok(Tensor::new(dims, data)?)
}

pub fn write_dump(t: &Tensor, path: &Path, dtype: Dtype) -> Result<(), IoError> {
    fs::write(path, encode(t, dtype)).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a dump, rejecting NaN/Inf payloads.
pub fn read_dump(path: &Path) -> Result<Tensor, IoError> {
    read_dump_with(path, false)
}

pub fn read_dump_with(path: &Path, allow_nonfinite: bool) -> Result<Tensor, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, allow_nonfinite)
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `m` as CSV with a header of column labels and one labeled row per
/// matrix row. The corner cell is empty.
pub fn write_labeled_csv<W: std::io::Write>(
    m: &Matrix,
    out: W,
    row_labels: &[String],
    col_labels: &[String],
) -> Result<(), IoError> {
    if row_labels.len() != m.rows() {
        return Err(IoError::LabelCount(format!(
            "{} row labels for {} rows",
            row_labels.len(),
            m.rows()
        )));
    }
    if col_labels.len() != m.cols() {
        return Err(IoError::LabelCount(format!(
            "{} column labels for {} columns",
            col_labels.len(),
            m.cols()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("").chain(col_labels.iter().map(String::as_str)))?;
    for (r, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(r).iter().map(|v| format_value(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_csv(
    m: &Matrix,
    path: &Path,
    row_labels: &[String],
    col_labels: &[String],
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_labeled_csv(m, &mut buf, row_labels, col_labels)?;
    fs::write(path, buf).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}
