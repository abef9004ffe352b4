//! Volumetric containers and the operations the pipeline performs on them:
//! foreground masking, overlapping patch extraction and mean stitching,
//! trilinear resampling in tangent space, and the bit-exact TFV file format
//! (see [`io`]).
//!
//! Two grid types exist: [`ScalarField`] for structural intensities and
//! [`TensorField`] for per-voxel symmetric 3×3 tensors. A tensor field
//! carries a [`Domain`] tag distinguishing manifold points (SPD tensors)
//! from tangent vectors (log-space values). Operations that are only safe in
//! log space — resampling, stitching averages — refuse Manifold-tagged
//! input instead of silently leaving the manifold.
//!
//! Grids are dense, row-major with **x fastest**: `index = x + nx·(y + ny·z)`.
//! Fields are immutable after construction as far as the public API is
//! concerned, and every operation is a pure function of its inputs, so
//! results are bit-identical across runs.

pub mod io;

use thiserror::Error;

use crate::spd::{self, SymMat3};

/// Interpretation of the values in a [`TensorField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Voxels are SPD tensors (points on the manifold).
    Manifold,
    /// Voxels are arbitrary symmetric matrices (log-space / tangent values).
    Tangent,
}

/// Errors raised by volume construction and manipulation.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dims ({0}, {1}, {2}) must all be positive")]
    EmptyDims(usize, usize, usize),
    #[error("data length {got} does not match dims product {want}")]
    DataLength { want: usize, got: usize },
    #[error("field contains a non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("voxel ({0}, {1}, {2}) fails the SPD check for a Manifold-tagged field: {3}")]
    NotSpd(usize, usize, usize, spd::SpdError),
    #[error("operation requires {want:?} domain but the field is {got:?}")]
    WrongDomain { want: Domain, got: Domain },
    #[error("patch size {size} exceeds volume dims ({0}, {1}, {2})", .dims.0, .dims.1, .dims.2)]
    PatchTooLarge { size: usize, dims: (usize, usize, usize) },
    #[error("stride {stride} must satisfy 1 <= stride <= patch size {size}")]
    BadStride { stride: usize, size: usize },
    #[error("mask dims {got:?} do not match volume dims {want:?}")]
    MaskMismatch {
        want: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("patch set is inconsistent: {0}")]
    BadPatchSet(String),
    #[error("{count} voxels are covered by no patch (first: {sample:?})")]
    CoverageGap { count: usize, sample: Vec<(usize, usize, usize)> },
    #[error("resample factor {factor} is invalid: {reason}")]
    BadFactor { factor: f64, reason: String },
    #[error("field shapes differ: {0:?} vs {1:?}")]
    DimMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file format error: {0}")]
    Format(String),
}

/// Voxel value abstraction shared by the generic grid internals. Only the
/// affine operations needed by interpolation and averaging are required.
pub(crate) trait Voxel: Copy {
    fn vzero() -> Self;
    fn vadd(&mut self, x: &Self);
    fn vsub(a: &Self, b: &Self) -> Self;
    fn vscaled(&self, k: f64) -> Self;
    /// Bitwise equality (distinguishes -0.0 from 0.0, unlike `==`).
    fn vbits_eq(&self, x: &Self) -> bool;
}

impl Voxel for f64 {
    fn vzero() -> Self {
        0.0
    }
    fn vadd(&mut self, x: &Self) {
        *self += x;
    }
    fn vsub(a: &Self, b: &Self) -> Self {
        a - b
    }
    fn vscaled(&self, k: f64) -> Self {
        self * k
    }
    fn vbits_eq(&self, x: &Self) -> bool {
        self.to_bits() == x.to_bits()
    }
}

impl Voxel for SymMat3<f64> {
    fn vzero() -> Self {
        SymMat3::zero()
    }
    fn vadd(&mut self, x: &Self) {
        *self = *self + *x;
    }
    fn vsub(a: &Self, b: &Self) -> Self {
        *a - *b
    }
    fn vscaled(&self, k: f64) -> Self {
        *self * k
    }
    fn vbits_eq(&self, x: &Self) -> bool {
        self.d
            .iter()
            .zip(x.d.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[inline]
pub(crate) fn lin_index(dims: (usize, usize, usize), x: usize, y: usize, z: usize) -> usize {
    debug_assert!(x < dims.0 && y < dims.1 && z < dims.2);
    x + dims.0 * (y + dims.1 * z)
}

/// Boolean voxel grid produced by [`foreground_mask`] and consumed by
/// [`ScalarField::extract_patches`] / [`TensorField::extract_patches`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: (usize, usize, usize),
    data: Vec<bool>,
}

impl Mask {
    /// All-true mask over `dims`.
    pub fn full(dims: (usize, usize, usize)) -> Self {
        Self { dims, data: vec![true; dims.0 * dims.1 * dims.2] }
    }

    /// Mask from an explicit bit vector in row-major x-fastest order.
    ///
    /// Panics if `data` does not cover `dims` exactly.
    pub fn from_parts(dims: (usize, usize, usize), data: Vec<bool>) -> Self {
        assert_eq!(
            data.len(),
            dims.0 * dims.1 * dims.2,
            "mask data must cover the volume"
        );
        Self { dims, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[lin_index(self.dims, x, y, z)]
    }

    /// Number of `true` voxels.
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of `true` voxels in the volume.
    pub fn fraction(&self) -> f64 {
        self.count_true() as f64 / self.data.len() as f64
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Dense 3D grid of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: (usize, usize, usize),
    spacing: [f64; 3],
    data: Vec<f64>,
}

/// Dense 3D grid of symmetric 3×3 tensors with a [`Domain`] tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    dims: (usize, usize, usize),
    spacing: [f64; 3],
    domain: Domain,
    data: Vec<SymMat3<f64>>,
}

fn check_dims(dims: (usize, usize, usize)) -> Result<usize, FieldError> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(FieldError::EmptyDims(dims.0, dims.1, dims.2));
    }
    Ok(dims.0 * dims.1 * dims.2)
}

impl ScalarField {
    /// Builds a field, validating the data length and finiteness.
    pub fn new(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        let n = check_dims(dims)?;
        if data.len() != n {
            return Err(FieldError::DataLength { want: n, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Self { dims, spacing, data })
    }

    /// Constant-valued field.
    pub fn constant(dims: (usize, usize, usize), spacing: [f64; 3], value: f64) -> Self {
        let n = dims.0 * dims.1 * dims.2;
        Self { dims, spacing, data: vec![value; n] }
    }

    /// Builds a field by evaluating `f` at every voxel (x-fastest order).
    pub fn from_fn(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, spacing, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[lin_index(self.dims, x, y, z)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mask of voxels with intensity strictly above `threshold`.
    ///
    /// `threshold` is expected in `[0, 1)` — intensities are normalized.
    pub fn foreground_mask(&self, threshold: f64) -> Mask {
        debug_assert!((0.0..1.0).contains(&threshold));
        Mask {
            dims: self.dims,
            data: self.data.iter().map(|&v| v > threshold).collect(),
        }
    }

    /// Extracts every aligned patch whose center voxel is masked true.
    /// See [`extract_core`] for the grid rule.
    pub fn extract_patches(
        &self,
        size: usize,
        stride: usize,
        mask: &Mask,
    ) -> Result<PatchSet<ScalarField>, FieldError> {
        let (origins, patches) = extract_core(self.dims, &self.data, size, stride, mask)?;
        let patches = patches
            .into_iter()
            .map(|data| ScalarField {
                dims: (size, size, size),
                spacing: self.spacing,
                data,
            })
            .collect();
        Ok(PatchSet { size, stride, origins, patches })
    }

    /// Trilinearly resamples by `factor` (voxel-center alignment, clamped at
    /// the borders). Output dims are `round(dims·factor)`, spacing divides
    /// by `factor`.
    pub fn resample_trilinear(&self, factor: f64) -> Result<ScalarField, FieldError> {
        let (dims, data) = resample_core(self.dims, &self.data, factor)?;
        Ok(ScalarField {
            dims,
            spacing: self.spacing.map(|s| s / factor),
            data,
        })
    }
}

impl TensorField {
    /// Builds a field, validating data length, finiteness, and — for
    /// Manifold-tagged fields — per-voxel SPD validity (an eigenvalue below
    /// the clamp rejection threshold fails construction).
    pub fn new(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        domain: Domain,
        data: Vec<SymMat3<f64>>,
    ) -> Result<Self, FieldError> {
        let n = check_dims(dims)?;
        if data.len() != n {
            return Err(FieldError::DataLength { want: n, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        if domain == Domain::Manifold {
            for (i, v) in data.iter().enumerate() {
                if let Err(e) = spd::log_id(v) {
                    let x = i % dims.0;
                    let y = (i / dims.0) % dims.1;
                    let z = i / (dims.0 * dims.1);
                    return Err(FieldError::NotSpd(x, y, z, e));
                }
            }
        }
        Ok(Self { dims, spacing, domain, data })
    }

    /// Constant-valued field. The caller vouches for `value` being valid for
    /// `domain`; used for identity/zero fills where that is trivially true.
    pub fn constant(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        domain: Domain,
        value: SymMat3<f64>,
    ) -> Self {
        let n = dims.0 * dims.1 * dims.2;
        Self { dims, spacing, domain, data: vec![value; n] }
    }

    /// Builds a field by evaluating `f` at every voxel coordinate, in
    /// row-major x-fastest order. Validates like [`TensorField::new`].
    pub fn from_fn(
        dims: (usize, usize, usize),
        spacing: [f64; 3],
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> SymMat3<f64>,
    ) -> Result<Self, FieldError> {
        let n = check_dims(dims)?;
        let mut data = Vec::with_capacity(n);
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, domain, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> &SymMat3<f64> {
        &self.data[lin_index(self.dims, x, y, z)]
    }

    pub fn data(&self) -> &[SymMat3<f64>] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [SymMat3<f64>] {
        &mut self.data
    }

    /// Projects every voxel onto the tangent plane (`log_id` per voxel).
    ///
    /// Fails with the offending voxel if any tensor is not recoverably SPD.
    pub fn log(&self) -> Result<TensorField, FieldError> {
        if self.domain != Domain::Manifold {
            return Err(FieldError::WrongDomain { want: Domain::Manifold, got: self.domain });
        }
        let mut out = Vec::with_capacity(self.data.len());
        for (i, v) in self.data.iter().enumerate() {
            out.push(spd::log_id(v).map_err(|e| {
                let x = i % self.dims.0;
                let y = (i / self.dims.0) % self.dims.1;
                let z = i / (self.dims.0 * self.dims.1);
                FieldError::NotSpd(x, y, z, e)
            })?);
        }
        Ok(TensorField {
            dims: self.dims,
            spacing: self.spacing,
            domain: Domain::Tangent,
            data: out,
        })
    }

    /// Maps every voxel back onto the manifold (`exp_id` per voxel).
    pub fn exp(&self) -> Result<TensorField, FieldError> {
        if self.domain != Domain::Tangent {
            return Err(FieldError::WrongDomain { want: Domain::Tangent, got: self.domain });
        }
        let mut out = Vec::with_capacity(self.data.len());
        for (i, v) in self.data.iter().enumerate() {
            out.push(spd::exp_id(v).map_err(|e| {
                let x = i % self.dims.0;
                let y = (i / self.dims.0) % self.dims.1;
                let z = i / (self.dims.0 * self.dims.1);
                FieldError::NotSpd(x, y, z, e)
            })?);
        }
        Ok(TensorField {
            dims: self.dims,
            spacing: self.spacing,
            domain: Domain::Manifold,
            data: out,
        })
    }

    /// Extracts every aligned patch whose center voxel is masked true.
    /// Patches inherit the parent's domain tag.
    pub fn extract_patches(
        &self,
        size: usize,
        stride: usize,
        mask: &Mask,
    ) -> Result<PatchSet<TensorField>, FieldError> {
        let (origins, patches) = extract_core(self.dims, &self.data, size, stride, mask)?;
        let patches = patches
            .into_iter()
            .map(|data| TensorField {
                dims: (size, size, size),
                spacing: self.spacing,
                domain: self.domain,
                data,
            })
            .collect();
        Ok(PatchSet { size, stride, origins, patches })
    }

    /// Trilinearly resamples by `factor` — tangent domain only.
    ///
    /// Interpolating manifold points entrywise leaves SPD(3); callers must
    /// project with [`TensorField::log`] first (and [`TensorField::exp`]
    /// back afterwards if manifold values are needed).
    pub fn resample_trilinear(&self, factor: f64) -> Result<TensorField, FieldError> {
        if self.domain != Domain::Tangent {
            return Err(FieldError::WrongDomain { want: Domain::Tangent, got: self.domain });
        }
        let (dims, data) = resample_core(self.dims, &self.data, factor)?;
        Ok(TensorField {
            dims,
            spacing: self.spacing.map(|s| s / factor),
            domain: Domain::Tangent,
            data,
        })
    }
}

/// A set of equally sized cubic patches cut from one parent volume.
///
/// `origins[i]` is the minimum corner of `patches[i]` in parent voxel
/// coordinates; origins are sorted lexicographically.
#[derive(Debug, Clone)]
pub struct PatchSet<F> {
    pub size: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize, usize)>,
    pub patches: Vec<F>,
}

impl<F> PatchSet<F> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

impl PatchSet<ScalarField> {
    /// Reassembles a volume of `dims`; every voxel must be covered by at
    /// least one patch and becomes the arithmetic mean of its covering
    /// patches.
    pub fn stitch(&self, dims: (usize, usize, usize)) -> Result<ScalarField, FieldError> {
        let spacing = self.common_spacing(|p| (p.dims, p.spacing))?;
        let (data, uncovered) = stitch_core(
            dims,
            self.size,
            &self.origins,
            self.patches.iter().map(|p| p.data.as_slice()),
        )?;
        fail_on_gap(dims, uncovered)?;
        Ok(ScalarField { dims, spacing, data })
    }
}

impl PatchSet<TensorField> {
    /// Reassembles a volume of `dims` by voxelwise averaging.
    ///
    /// Averaging is only meaningful for Tangent-domain patches (log-space
    /// values form a vector space; manifold points do not); Manifold input
    /// is refused.
    pub fn stitch(&self, dims: (usize, usize, usize)) -> Result<TensorField, FieldError> {
        let (data, uncovered) = self.stitch_tangent(dims)?;
        fail_on_gap(dims, uncovered)?;
        let spacing = self.common_spacing(|p| (p.dims, p.spacing))?;
        Ok(TensorField { dims, spacing, domain: Domain::Tangent, data })
    }

    /// Like [`stitch`](Self::stitch) but fills voxels no patch covers with
    /// the zero tangent vector (identity tensor after `exp`) and reports how
    /// many were filled, instead of failing.
    pub fn stitch_with_zero_fill(
        &self,
        dims: (usize, usize, usize),
    ) -> Result<(TensorField, usize), FieldError> {
        let (data, uncovered) = self.stitch_tangent(dims)?;
        let spacing = self.common_spacing(|p| (p.dims, p.spacing))?;
        Ok((
            TensorField { dims, spacing, domain: Domain::Tangent, data },
            uncovered.len(),
        ))
    }

    fn stitch_tangent(
        &self,
        dims: (usize, usize, usize),
    ) -> Result<(Vec<SymMat3<f64>>, Vec<usize>), FieldError> {
        for p in &self.patches {
            if p.domain != Domain::Tangent {
                return Err(FieldError::WrongDomain { want: Domain::Tangent, got: p.domain });
            }
        }
        stitch_core(
            dims,
            self.size,
            &self.origins,
            self.patches.iter().map(|p| p.data.as_slice()),
        )
    }
}

impl<F> PatchSet<F> {
    fn common_spacing(
        &self,
        info: impl Fn(&F) -> ((usize, usize, usize), [f64; 3]),
    ) -> Result<[f64; 3], FieldError> {
        if self.origins.len() != self.patches.len() {
            return Err(FieldError::BadPatchSet(format!(
                "{} origins but {} patches",
                self.origins.len(),
                self.patches.len()
            )));
        }
        let mut spacing = [1.0; 3];
        for (i, p) in self.patches.iter().enumerate() {
            let (dims, sp) = info(p);
            if dims != (self.size, self.size, self.size) {
                return Err(FieldError::BadPatchSet(format!(
                    "patch {i} has dims {dims:?}, expected cube of edge {}",
                    self.size
                )));
            }
            if i == 0 {
                spacing = sp;
            } else if sp != spacing {
                return Err(FieldError::BadPatchSet(format!(
                    "patch {i} spacing {sp:?} differs from {spacing:?}"
                )));
            }
        }
        Ok(spacing)
    }
}

fn fail_on_gap(dims: (usize, usize, usize), uncovered: Vec<usize>) -> Result<(), FieldError> {
    if uncovered.is_empty() {
        return Ok(());
    }
    let sample = uncovered
        .iter()
        .take(8)
        .map(|&i| {
            (
                i % dims.0,
                (i / dims.0) % dims.1,
                i / (dims.0 * dims.1),
            )
        })
        .collect();
    Err(FieldError::CoverageGap { count: uncovered.len(), sample })
}

/// Shared patch-extraction core. Origin grid per axis: `0, stride, 2·stride,
/// …` as long as `origin + size <= dim`; a candidate patch is kept when the
/// mask is true at its center voxel `origin + size/2`.
fn extract_core<V: Voxel>(
    dims: (usize, usize, usize),
    data: &[V],
    size: usize,
    stride: usize,
    mask: &Mask,
) -> Result<(Vec<(usize, usize, usize)>, Vec<Vec<V>>), FieldError> {
    if size == 0 || size > dims.0 || size > dims.1 || size > dims.2 {
        return Err(FieldError::PatchTooLarge { size, dims });
    }
    if stride == 0 || stride > size {
        return Err(FieldError::BadStride { stride, size });
    }
    if mask.dims != dims {
        return Err(FieldError::MaskMismatch { want: dims, got: mask.dims });
    }

    let axis_origins = |dim: usize| (0..=dim - size).step_by(stride).collect::<Vec<_>>();
    let (oxs, oys, ozs) = (axis_origins(dims.0), axis_origins(dims.1), axis_origins(dims.2));

    let mut origins = Vec::new();
    let mut patches = Vec::new();
    let half = size / 2;
    for &ox in &oxs {
        for &oy in &oys {
            for &oz in &ozs {
                if !mask.get(ox + half, oy + half, oz + half) {
                    continue;
                }
                let mut patch = Vec::with_capacity(size * size * size);
                for z in oz..oz + size {
                    for y in oy..oy + size {
                        let row = lin_index(dims, ox, y, z);
                        patch.extend_from_slice(&data[row..row + size]);
                    }
                }
                origins.push((ox, oy, oz));
                patches.push(patch);
            }
        }
    }
    Ok((origins, patches))
}

/// Shared stitching core: accumulates per-voxel sums and coverage counts in
/// patch order, then divides. Returns the stitched data and the (possibly
/// empty) list of uncovered linear indices, whose voxels are left at zero.
fn stitch_core<'a, V: Voxel + 'a>(
    dims: (usize, usize, usize),
    size: usize,
    origins: &[(usize, usize, usize)],
    patches: impl Iterator<Item = &'a [V]>,
) -> Result<(Vec<V>, Vec<usize>), FieldError> {
    let n = check_dims(dims)?;
    let mut sum = vec![V::vzero(); n];
    let mut count = vec![0u32; n];
    // First contribution per voxel, plus a flag that stays set while every
    // later contribution is bit-identical to it. Patches cut from one source
    // agree on overlaps, and the mean of identical values is that value —
    // returning it directly keeps such round trips exact, where a literal
    // sum/count would drift by an ulp once three or more addends pile up.
    let mut first = vec![V::vzero(); n];
    let mut all_equal = vec![true; n];

    for (pi, (&(ox, oy, oz), patch)) in origins.iter().zip(patches).enumerate() {
        if patch.len() != size * size * size {
            return Err(FieldError::BadPatchSet(format!(
                "patch {pi} length {} does not match size {size}³",
                patch.len()
            )));
        }
        if ox + size > dims.0 || oy + size > dims.1 || oz + size > dims.2 {
            return Err(FieldError::BadPatchSet(format!(
                "patch {pi} at origin ({ox}, {oy}, {oz}) exceeds volume dims {dims:?}"
            )));
        }
        for z in 0..size {
            for y in 0..size {
                let src = size * (y + size * z);
                let dst = lin_index(dims, ox, oy + y, oz + z);
                for x in 0..size {
                    let v = &patch[src + x];
                    sum[dst + x].vadd(v);
                    if count[dst + x] == 0 {
                        first[dst + x] = *v;
                    } else if !first[dst + x].vbits_eq(v) {
                        all_equal[dst + x] = false;
                    }
                    count[dst + x] += 1;
                }
            }
        }
    }
    let mut uncovered = Vec::new();
    for (i, v) in sum.iter_mut().enumerate() {
        if count[i] == 0 {
            uncovered.push(i);
        } else if all_equal[i] {
            *v = first[i];
        } else {
            *v = v.vscaled(1.0 / count[i] as f64);
        }
    }
    Ok((sum, uncovered))
}

/// Shared trilinear resampling core.
///
/// Voxel-center alignment: output voxel `u` back-projects to input
/// coordinate `(u + 0.5)/factor − 0.5`, clamped to the volume; the value is
/// the trilinear blend of the 8 surrounding voxels, computed as nested
/// linear interpolations (x, then y, then z) so constant fields reproduce
/// exactly.
fn resample_core<V: Voxel>(
    dims: (usize, usize, usize),
    data: &[V],
    factor: f64,
) -> Result<((usize, usize, usize), Vec<V>), FieldError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(FieldError::BadFactor {
            factor,
            reason: "factor must be finite and positive".into(),
        });
    }
    let out_dim = |d: usize| (d as f64 * factor).round() as usize;
    let odims = (out_dim(dims.0), out_dim(dims.1), out_dim(dims.2));
    if odims.0 < 2 || odims.1 < 2 || odims.2 < 2 {
        return Err(FieldError::BadFactor {
            factor,
            reason: format!("output dims {odims:?} fall below 2"),
        });
    }

    // Per-axis sample positions: lower index, fractional weight.
    let axis = |od: usize, id: usize| -> Vec<(usize, usize, f64)> {
        (0..od)
            .map(|u| {
                let s = ((u as f64 + 0.5) / factor - 0.5).clamp(0.0, (id - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(id - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let (ax, ay, az) = (axis(odims.0, dims.0), axis(odims.1, dims.1), axis(odims.2, dims.2));

    let lerp = |a: V, b: V, t: f64| -> V {
        let mut out = a;
        out.vadd(&V::vsub(&b, &a).vscaled(t));
        out
    };

    let mut out = Vec::with_capacity(odims.0 * odims.1 * odims.2);
    for &(z0, z1, tz) in &az {
        for &(y0, y1, ty) in &ay {
            for &(x0, x1, tx) in &ax {
                let at = |x: usize, y: usize, z: usize| data[lin_index(dims, x, y, z)];
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
                let c0 = lerp(c00, c10, ty);
                let c1 = lerp(c01, c11, ty);
                out.push(lerp(c0, c1, tz));
            }
        }
    }
    Ok((odims, out))
}
