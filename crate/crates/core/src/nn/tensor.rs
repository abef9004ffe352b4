//! Dense 5-D value container for network activations and parameters.

use super::NnError;

/// Shape as (batch, channels, x, y, z).
pub type Shape5 = [usize; 5];

/// Dense little 5-D tensor. Memory is row-major with x fastest:
/// `idx = (((b·C + c)·NZ + z)·NY + y)·NX + x`, matching the volume layout in
/// [`crate::field`] so (1, 1, nx, ny, nz) tensors and scalar fields share
/// bytes directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    shape: Shape5,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &Shape5) -> usize {
    shape.iter().product()
}

impl Tensor5 {
    pub fn zeros(shape: Shape5) -> Self {
        Self { shape, data: vec![0.0; numel(&shape)] }
    }

    pub fn filled(shape: Shape5, value: f64) -> Self {
        Self { shape, data: vec![value; numel(&shape)] }
    }

    pub fn from_vec(shape: Shape5, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != numel(&shape) {
            return Err(NnError::ShapeMismatch(format!(
                "data length {} does not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Spatial dims (nx, ny, nz).
    pub fn spatial(&self) -> (usize, usize, usize) {
        (self.shape[2], self.shape[3], self.shape[4])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of (b, c, x, y, z).
    #[inline]
    pub fn index(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
        let [_, ch, nx, ny, nz] = self.shape;
        debug_assert!(b < self.shape[0] && c < ch && x < nx && y < ny && z < nz);
        (((b * ch + c) * nz + z) * ny + y) * nx + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(b, c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(b, c, x, y, z);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
