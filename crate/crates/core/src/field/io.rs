//! TFV — the toolkit's bit-exact volume file format.
//!
//! Layout (all multi-byte values little-endian, no compression):
//!
//! ```text
//! magic   4 bytes   "TFV1"
//! kind    u8        0 = scalar, 1 = tensor (Manifold), 2 = tensor (Tangent)
//! dims    3 × u32   nx, ny, nz
//! spacing 3 × f64   mm per voxel
//! payload f64 …     row-major, x fastest; 1 value per voxel (scalar) or
//!                   6 values per voxel in (m11, m22, m33, m12, m13, m23)
//! ```
//!
//! Writing a field and reading it back reproduces the in-memory data
//! bit-for-bit; the reader re-validates everything the constructors enforce
//! (finiteness, and SPD validity for Manifold-tagged tensors).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::spd::SymMat3;

use super::{Domain, FieldError, ScalarField, TensorField};

const MAGIC: &[u8; 4] = b"TFV1";

const KIND_SCALAR: u8 = 0;
const KIND_TENSOR_MANIFOLD: u8 = 1;
const KIND_TENSOR_TANGENT: u8 = 2;

/// A volume of either kind, as read from a TFV file.
#[derive(Debug, Clone)]
pub enum AnyField {
    Scalar(ScalarField),
    Tensor(TensorField),
}

impl AnyField {
    /// Unwraps a scalar volume or fails with a format error naming the
    /// actual content.
    pub fn into_scalar(self) -> Result<ScalarField, FieldError> {
        match self {
            AnyField::Scalar(f) => Ok(f),
            AnyField::Tensor(t) => Err(FieldError::Format(format!(
                "expected a scalar volume, found a {:?}-domain tensor volume",
                t.domain()
            ))),
        }
    }

    /// Unwraps a tensor volume or fails with a format error.
    pub fn into_tensor(self) -> Result<TensorField, FieldError> {
        match self {
            AnyField::Tensor(t) => Ok(t),
            AnyField::Scalar(_) => Err(FieldError::Format(
                "expected a tensor volume, found a scalar volume".into(),
            )),
        }
    }
}

fn write_header<W: Write>(
    w: &mut W,
    kind: u8,
    dims: (usize, usize, usize),
    spacing: [f64; 3],
) -> Result<(), FieldError> {
    w.write_all(MAGIC)?;
    w.write_u8(kind)?;
    for d in [dims.0, dims.1, dims.2] {
        let d = u32::try_from(d)
            .map_err(|_| FieldError::Format(format!("dimension {d} exceeds u32 range")))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    for s in spacing {
        w.write_f64::<LittleEndian>(s)?;
    }
    Ok(())
}

impl ScalarField {
    /// Writes the field as a TFV file.
    pub fn write_tfv(&self, path: &Path) -> Result<(), FieldError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, KIND_SCALAR, self.dims(), self.spacing())?;
        for &v in self.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl TensorField {
    /// Writes the field as a TFV file; the kind byte records the domain tag.
    pub fn write_tfv(&self, path: &Path) -> Result<(), FieldError> {
        let kind = match self.domain() {
            Domain::Manifold => KIND_TENSOR_MANIFOLD,
            Domain::Tangent => KIND_TENSOR_TANGENT,
        };
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, kind, self.dims(), self.spacing())?;
        for v in self.data() {
            for &c in &v.d {
                w.write_f64::<LittleEndian>(c)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a TFV file of either kind, validating the header and payload.
pub fn read_tfv(path: &Path) -> Result<AnyField, FieldError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FieldError::Format("file too short for TFV header".into()))?;
    if &magic != MAGIC {
        return Err(FieldError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }

    let kind = r.read_u8()?;
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let dims = (dims[0], dims[1], dims[2]);
    let mut spacing = [0f64; 3];
    for s in spacing.iter_mut() {
        *s = r.read_f64::<LittleEndian>()?;
    }

    let voxels = dims
        .0
        .checked_mul(dims.1)
        .and_then(|n| n.checked_mul(dims.2))
        .ok_or_else(|| FieldError::Format(format!("dims {dims:?} overflow")))?;

    let field = match kind {
        KIND_SCALAR => {
            let mut data = vec![0f64; voxels];
            read_f64_exact(&mut r, &mut data)?;
            AnyField::Scalar(ScalarField::new(dims, spacing, data)?)
        }
        KIND_TENSOR_MANIFOLD | KIND_TENSOR_TANGENT => {
            let mut raw = vec![0f64; voxels.checked_mul(6).ok_or_else(|| {
                FieldError::Format(format!("dims {dims:?} overflow"))
            })?];
            read_f64_exact(&mut r, &mut raw)?;
            let data: Vec<SymMat3<f64>> = raw
                .chunks_exact(6)
                .map(|c| SymMat3 { d: [c[0], c[1], c[2], c[3], c[4], c[5]] })
                .collect();
            let domain = if kind == KIND_TENSOR_MANIFOLD {
                Domain::Manifold
            } else {
                Domain::Tangent
            };
            AnyField::Tensor(TensorField::new(dims, spacing, domain, data)?)
        }
        other => {
            return Err(FieldError::Format(format!(
                "unknown kind byte {other}, expected 0, 1, or 2"
            )))
        }
    };

    // Trailing bytes mean the header lied about the payload size.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(FieldError::Format("trailing bytes after payload".into()));
    }
    Ok(field)
}

fn read_f64_exact<R: Read>(r: &mut R, out: &mut [f64]) -> Result<(), FieldError> {
    for v in out.iter_mut() {
        *v = r
            .read_f64::<LittleEndian>()
            .map_err(|_| FieldError::Format("payload truncated".into()))?;
    }
    Ok(())
}
