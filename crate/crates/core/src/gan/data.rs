//! Data plumbing between [`field`](crate::field) volumes and the
//! [`nn`](crate::nn) tensor format: per-channel normalization, AoS↔SoA
//! conversion, and batch preparation for the three training modes.

use rand::Rng;

use crate::field::{Domain, ScalarField, TensorField};
use crate::nn::Tensor5;
use crate::spd::SymMat3;

use super::{GanError, Mode};

/// Per-channel affine map between physical tangent components and the
/// normalized range the networks operate in.
///
/// `normalized = (physical − shift) / scale`, channel by channel in the
/// `(m11, m22, m33, m12, m13, m23)` order. The identity map leaves values
/// untouched; [`NormMap::fit_or_identity`] widens a channel only when its
/// data range actually escapes `[-1, 1]`, so unit-scale tangent data trains
/// against an identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMap {
    pub scale: [f64; 6],
    pub shift: [f64; 6],
}

impl Default for NormMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl NormMap {
    /// The do-nothing map: scale 1, shift 0 on every channel.
    pub fn identity() -> Self {
        NormMap { scale: [1.0; 6], shift: [0.0; 6] }
    }

    /// Fits a map from the per-channel min/max over `fields`. Channels whose
    /// range already sits inside `[-1, 1]` keep the identity map; the rest
    /// map `[min, max]` onto `[-1, 1]` (shift = midpoint, scale =
    /// half-range). Constant out-of-range channels get scale 1 around their
    /// value.
    pub fn fit_or_identity(fields: &[&TensorField]) -> Self {
        let mut lo = [f64::INFINITY; 6];
        let mut hi = [f64::NEG_INFINITY; 6];
        for f in fields {
            for v in f.data() {
                for c in 0..6 {
                    lo[c] = lo[c].min(v.d[c]);
                    hi[c] = hi[c].max(v.d[c]);
                }
            }
        }
        let mut map = NormMap::identity();
        for c in 0..6 {
            if lo[c] > hi[c] {
                continue; // no data at all: stay identity
            }
            if lo[c] >= -1.0 && hi[c] <= 1.0 {
                continue; // already in the network's native range
            }
            let half = 0.5 * (hi[c] - lo[c]);
            map.shift[c] = 0.5 * (hi[c] + lo[c]);
            map.scale[c] = if half > 0.0 { half } else { 1.0 };
        }
        map
    }

    /// Physical → normalized, in place.
    pub fn normalize(&self, data: &mut [SymMat3<f64>]) {
        for v in data {
            for c in 0..6 {
                v.d[c] = (v.d[c] - self.shift[c]) / self.scale[c];
            }
        }
    }

    /// Normalized → physical, in place.
    pub fn denormalize(&self, data: &mut [SymMat3<f64>]) {
        for v in data {
            for c in 0..6 {
                v.d[c] = v.d[c] * self.scale[c] + self.shift[c];
            }
        }
    }

    /// Whether this is exactly the identity map.
    pub fn is_identity(&self) -> bool {
        self.scale == [1.0; 6] && self.shift == [0.0; 6]
    }
}

/// Stacks same-shaped scalar patches into a `(B, 1, nx, ny, nz)` tensor.
///
/// Scalar fields and tensors share the x-fastest memory layout, so each
/// patch contributes one contiguous block.
pub(crate) fn scalar_batch_to_tensor(batch: &[&ScalarField]) -> Result<Tensor5, GanError> {
    let (nx, ny, nz) = check_common_dims(batch.iter().map(|f| f.dims()))?;
    let mut data = Vec::with_capacity(batch.len() * nx * ny * nz);
    for f in batch {
        data.extend_from_slice(f.data());
    }
    Ok(Tensor5::from_vec([batch.len(), 1, nx, ny, nz], data).map_err(GanError::Nn)?)
}

/// Stacks same-shaped tensor patches into a `(B, 6, nx, ny, nz)` tensor,
/// splitting each voxel's six components onto separate channels.
pub(crate) fn tensor_batch_to_tensor(batch: &[&TensorField]) -> Result<Tensor5, GanError> {
    let (nx, ny, nz) = check_common_dims(batch.iter().map(|f| f.dims()))?;
    let vol = nx * ny * nz;
    let mut data = vec![0.0; batch.len() * 6 * vol];
    for (b, f) in batch.iter().enumerate() {
        let src = f.data();
        for c in 0..6 {
            let dst = &mut data[(b * 6 + c) * vol..(b * 6 + c + 1) * vol];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v.d[c];
            }
        }
    }
    Ok(Tensor5::from_vec([batch.len(), 6, nx, ny, nz], data).map_err(GanError::Nn)?)
}

/// Extracts batch element `b` of a `(B, 6, …)` tensor as a tangent-domain
/// field with the given spacing.
pub(crate) fn tensor_to_tangent_field(
    t: &Tensor5,
    b: usize,
    spacing: [f64; 3],
) -> Result<TensorField, GanError> {
    let s = t.shape();
    if s[1] != 6 || b >= s[0] {
        return Err(GanError::Shape(format!(
            "expected 6-channel tensor with batch > {b}, got shape {:?}",
            s
        )));
    }
    let (nx, ny, nz) = (s[2], s[3], s[4]);
    let vol = nx * ny * nz;
    let mut data = vec![SymMat3::zero(); vol];
    for c in 0..6 {
        let src = &t.data()[(b * 6 + c) * vol..(b * 6 + c + 1) * vol];
        for (v, x) in data.iter_mut().zip(src) {
            v.d[c] = *x;
        }
    }
    TensorField::new((nx, ny, nz), spacing, Domain::Tangent, data).map_err(GanError::Field)
}

/// Extracts batch element `b` of a `(B, 1, …)` tensor as a scalar field.
pub(crate) fn tensor_to_scalar_field(
    t: &Tensor5,
    b: usize,
    spacing: [f64; 3],
) -> Result<ScalarField, GanError> {
    let s = t.shape();
    if s[1] != 1 || b >= s[0] {
        return Err(GanError::Shape(format!(
            "expected 1-channel tensor with batch > {b}, got shape {:?}",
            s
        )));
    }
    let (nx, ny, nz) = (s[2], s[3], s[4]);
    let vol = nx * ny * nz;
    let data = t.data()[b * vol..(b + 1) * vol].to_vec();
    ScalarField::new((nx, ny, nz), spacing, data).map_err(GanError::Field)
}

/// Fits a normalization map on a diffusion volume as the networks will see
/// it: the log-projected components for the manifold-aware modes, the raw
/// components for `PLAIN_CYCLEGAN`. Returns the identity map whenever every
/// channel already fits inside the generators' [−1, 1] output range.
pub fn fit_norm(y: &TensorField, mode: Mode) -> Result<NormMap, GanError> {
    let seen = project(y, mode)?;
    Ok(NormMap::fit_or_identity(&[&seen]))
}

/// Projects a diffusion volume into the space the networks see: the matrix
/// logarithm for the manifold-aware modes, the raw components for
/// `PLAIN_CYCLEGAN` (which treats the six entries as ordinary channels).
pub(crate) fn project(y: &TensorField, mode: Mode) -> Result<TensorField, GanError> {
    match mode {
        Mode::MaCyclegan | Mode::MaGan => match y.domain() {
            Domain::Manifold => Ok(y.log()?),
            Domain::Tangent => Err(GanError::Domain {
                want: Domain::Manifold,
                got: Domain::Tangent,
            }),
        },
        Mode::PlainCyclegan => {
            // Entrywise passthrough: re-tag as tangent so downstream
            // resampling/averaging is allowed on the raw components.
            TensorField::new(y.dims(), y.spacing(), Domain::Tangent, y.data().to_vec())
                .map_err(GanError::Field)
        }
    }
}

/// One training batch, fully converted to network tensors.
///
/// * `x`: structural patches, `(B, 1, p, p, p)`, raw `[0, 1]` intensities.
/// * `y_lr`: projected + normalized diffusion patches at acquisition
///   resolution, `(B, 6, p/f, p/f, p/f)`.
/// * `y_up`: the same patches trilinearly upsampled to `(B, 6, p, p, p)`
///   (the backward-cycle anchor and the paired-pretraining target).
pub(crate) struct PreparedBatch {
    pub x: Tensor5,
    pub y_lr: Tensor5,
    pub y_up: Tensor5,
}

/// Projects, normalizes, upsamples, and stacks one unpaired batch.
pub(crate) fn prepare_batch(
    batch_x: &[&ScalarField],
    batch_y_lr: &[&TensorField],
    mode: Mode,
    norm: &NormMap,
    factor: usize,
) -> Result<PreparedBatch, GanError> {
    if batch_x.len() != batch_y_lr.len() || batch_x.is_empty() {
        return Err(GanError::Shape(format!(
            "batch sides must be equal and non-empty, got {} structural / {} diffusion",
            batch_x.len(),
            batch_y_lr.len()
        )));
    }
    let x = scalar_batch_to_tensor(batch_x)?;
    let mut lows = Vec::with_capacity(batch_y_lr.len());
    let mut ups = Vec::with_capacity(batch_y_lr.len());
    for y in batch_y_lr {
        let mut t = project(y, mode)?;
        let up = t.resample_trilinear(factor as f64)?;
        norm.normalize(t.data_mut());
        let mut up = up;
        norm.normalize(up.data_mut());
        lows.push(t);
        ups.push(up);
    }
    let y_lr = tensor_batch_to_tensor(&lows.iter().collect::<Vec<_>>())?;
    let y_up = tensor_batch_to_tensor(&ups.iter().collect::<Vec<_>>())?;
    Ok(PreparedBatch { x, y_lr, y_up })
}

/// Pool of training patches cut from source volumes, drawn from uniformly
/// at random (unpaired: the two sides are drawn independently).
pub struct PatchPool {
    pub x_patches: Vec<ScalarField>,
    pub y_patches: Vec<TensorField>,
    /// `(i, j)` pairs where `x_patches[i]` and `y_patches[j]` cover the same
    /// physical region; used only for supervised pre-training.
    pairs: Vec<(usize, usize)>,
}

impl PatchPool {
    /// Cuts all patches of edge `patch` (diffusion side at edge
    /// `patch / factor` from the low-resolution volume, half-overlapping
    /// grids on both sides).
    ///
    /// `x_hr` and `y_lr` cover the same physical volume: `x_hr` at full
    /// resolution, `y_lr` downsampled by `factor`. Pairs of co-located
    /// patches are indexed by matching origins (`o` on the structural grid ↔
    /// `o / factor` on the diffusion grid).
    pub fn build(
        x_hr: &ScalarField,
        y_lr: &TensorField,
        patch: usize,
        factor: usize,
    ) -> Result<Self, GanError> {
        if factor == 0 || patch % factor != 0 {
            return Err(GanError::Config(format!(
                "patch edge {patch} not divisible by resample factor {factor}"
            )));
        }
        let lr_patch = patch / factor;
        let mask_x = crate::field::Mask::full(x_hr.dims());
        let mask_y = crate::field::Mask::full(y_lr.dims());
        let xs = x_hr.extract_patches(patch, (patch / 2).max(1), &mask_x)?;
        let ys = y_lr.extract_patches(lr_patch, (lr_patch / 2).max(1), &mask_y)?;
        if xs.is_empty() || ys.is_empty() {
            return Err(GanError::Config(format!(
                "volume {:?} too small for {patch}-edge patches",
                x_hr.dims()
            )));
        }
        let y_by_origin: std::collections::BTreeMap<(usize, usize, usize), usize> =
            ys.origins.iter().enumerate().map(|(j, &o)| (o, j)).collect();
        let mut pairs = Vec::new();
        for (i, &(ox, oy, oz)) in xs.origins.iter().enumerate() {
            if ox % factor == 0 && oy % factor == 0 && oz % factor == 0 {
                if let Some(&j) = y_by_origin.get(&(ox / factor, oy / factor, oz / factor)) {
                    pairs.push((i, j));
                }
            }
        }
        Ok(PatchPool { x_patches: xs.patches, y_patches: ys.patches, pairs })
    }

    /// Draws `batch` structural and `batch` diffusion patches independently.
    pub fn draw<R: Rng>(
        &self,
        rng: &mut R,
        batch: usize,
    ) -> (Vec<&ScalarField>, Vec<&TensorField>) {
        let xs = (0..batch)
            .map(|_| &self.x_patches[rng.random_range(0..self.x_patches.len())])
            .collect();
        let ys = (0..batch)
            .map(|_| &self.y_patches[rng.random_range(0..self.y_patches.len())])
            .collect();
        (xs, ys)
    }

    /// Draws `batch` *paired* patches: structural and diffusion patches cut
    /// at the same physical location, for supervised pre-training.
    pub fn draw_paired<'a, R: Rng>(
        &'a self,
        rng: &mut R,
        batch: usize,
    ) -> Vec<(&'a ScalarField, &'a TensorField)> {
        (0..batch)
            .map(|_| {
                let (i, j) = self.pairs[rng.random_range(0..self.pairs.len())];
                (&self.x_patches[i], &self.y_patches[j])
            })
            .collect()
    }

    /// Number of physically co-located patch pairs available.
    pub fn paired_len(&self) -> usize {
        self.pairs.len()
    }

    /// All colocated `(x, y)` patch pairs, in deterministic grid order —
    /// the supervised data for paired pretraining.
    pub fn paired(&self) -> Vec<(&ScalarField, &TensorField)> {
        self.pairs
            .iter()
            .map(|&(i, j)| (&self.x_patches[i], &self.y_patches[j]))
            .collect()
    }
}

fn check_common_dims(
    mut dims: impl Iterator<Item = (usize, usize, usize)>,
) -> Result<(usize, usize, usize), GanError> {
    let first = dims
        .next()
        .ok_or_else(|| GanError::Shape("empty batch".into()))?;
    for d in dims {
        if d != first {
            return Err(GanError::Shape(format!(
                "mixed patch dims in one batch: {first:?} vs {d:?}"
            )));
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_tensor_field(dims: (usize, usize, usize)) -> TensorField {
        TensorField::from_fn(dims, [1.0; 3], Domain::Tangent, |x, y, z| {
            let base = (x + 2 * y + 3 * z) as f64 * 0.01;
            SymMat3::new(base, -base, 0.5 * base, base + 0.002, -0.003, 0.004)
        })
        .expect("ramp field is finite")
    }

    #[test]
    fn normalization_round_trips_and_identity_fits_unit_data() {
        let f = ramp_tensor_field((4, 4, 4));
        let fitted = NormMap::fit_or_identity(&[&f]);
        assert!(
            fitted.is_identity(),
            "data inside [-1,1] must fit to the identity map, got {fitted:?}"
        );

        // Push one channel out of range and check the fitted map brings it
        // back into [-1, 1] and round-trips exactly.
        let mut data = f.data().to_vec();
        for v in &mut data {
            v.d[0] = v.d[0] * 10.0 + 3.0;
        }
        let g = TensorField::new((4, 4, 4), [1.0; 3], Domain::Tangent, data).unwrap();
        let map = NormMap::fit_or_identity(&[&g]);
        assert!(!map.is_identity(), "out-of-range channel must widen the map");

        let mut norm = g.data().to_vec();
        map.normalize(&mut norm);
        for v in &norm {
            for c in 0..6 {
                assert!(
                    v.d[c] >= -1.0 - 1e-12 && v.d[c] <= 1.0 + 1e-12,
                    "normalized component {c} out of range: {}",
                    v.d[c]
                );
            }
        }
        map.denormalize(&mut norm);
        for (a, b) in norm.iter().zip(g.data()) {
            for c in 0..6 {
                assert!(
                    (a.d[c] - b.d[c]).abs() <= 1e-12 * b.d[c].abs().max(1.0),
                    "denormalize(normalize(v)) drifted on channel {c}: {} vs {}",
                    a.d[c],
                    b.d[c]
                );
            }
        }
    }

    #[test]
    fn batch_stacking_round_trips_both_field_kinds() {
        let s0 = ScalarField::from_fn((3, 3, 3), [1.0; 3], |x, y, z| (x + y + z) as f64);
        let s1 = ScalarField::from_fn((3, 3, 3), [1.0; 3], |x, y, z| (x * y * z) as f64 + 0.5);
        let t = scalar_batch_to_tensor(&[&s0, &s1]).unwrap();
        assert_eq!(t.shape(), [2, 1, 3, 3, 3]);
        let back0 = tensor_to_scalar_field(&t, 0, [1.0; 3]).unwrap();
        let back1 = tensor_to_scalar_field(&t, 1, [1.0; 3]).unwrap();
        assert_eq!(back0.data(), s0.data(), "batch 0 must round-trip exactly");
        assert_eq!(back1.data(), s1.data(), "batch 1 must round-trip exactly");

        let f = ramp_tensor_field((3, 3, 3));
        let t = tensor_batch_to_tensor(&[&f, &f]).unwrap();
        assert_eq!(t.shape(), [2, 6, 3, 3, 3]);
        let back = tensor_to_tangent_field(&t, 1, [1.0; 3]).unwrap();
        assert_eq!(back.data(), f.data(), "tensor batch must round-trip exactly");

        // Channel plane c holds component c of every voxel in field order.
        let vol = 27;
        for c in 0..6 {
            let plane = &t.data()[c * vol..(c + 1) * vol];
            for (i, v) in f.data().iter().enumerate() {
                assert_eq!(plane[i], v.d[c], "channel {c} voxel {i} misplaced");
            }
        }
    }

    #[test]
    fn mixed_dims_in_a_batch_are_rejected() {
        let a = ScalarField::constant((3, 3, 3), [1.0; 3], 0.0);
        let b = ScalarField::constant((4, 4, 4), [1.0; 3], 0.0);
        assert!(
            scalar_batch_to_tensor(&[&a, &b]).is_err(),
            "mixed dims must be refused"
        );
    }

    #[test]
    fn projection_logs_manifold_data_and_passes_plain_through() {
        let y = TensorField::constant(
            (2, 2, 2),
            [1.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(2.0, 1.0, 0.5),
        );
        let log = project(&y, Mode::MaCyclegan).unwrap();
        assert_eq!(log.domain(), Domain::Tangent);
        let v = log.get(0, 0, 0);
        assert!(
            (v.d[0] - 2.0f64.ln()).abs() < 1e-12,
            "log projection must take the matrix logarithm, got m11 = {}",
            v.d[0]
        );

        let plain = project(&y, Mode::PlainCyclegan).unwrap();
        assert_eq!(plain.domain(), Domain::Tangent, "plain mode re-tags as tangent");
        assert_eq!(
            plain.get(0, 0, 0).d,
            y.get(0, 0, 0).d,
            "plain projection must copy raw components"
        );

        // A tangent-tagged input cannot be log-projected again.
        assert!(project(&log, Mode::MaGan).is_err(), "double projection must fail");
    }

    #[test]
    fn prepared_batch_shapes_and_upsample_agree_with_field_resampling() {
        let x = ScalarField::from_fn((8, 8, 8), [1.0; 3], |x, _, _| x as f64 / 8.0);
        let y = TensorField::constant(
            (4, 4, 4),
            [2.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(1.5, 1.0, 0.8),
        );
        let norm = NormMap::identity();
        let prep = prepare_batch(&[&x], &[&y], Mode::MaCyclegan, &norm, 2).unwrap();
        assert_eq!(prep.x.shape(), [1, 1, 8, 8, 8]);
        assert_eq!(prep.y_lr.shape(), [1, 6, 4, 4, 4]);
        assert_eq!(prep.y_up.shape(), [1, 6, 8, 8, 8]);

        let oracle = y.log().unwrap().resample_trilinear(2.0).unwrap();
        let got = tensor_to_tangent_field(&prep.y_up, 0, [1.0; 3]).unwrap();
        for (a, b) in got.data().iter().zip(oracle.data()) {
            for c in 0..6 {
                assert!(
                    (a.d[c] - b.d[c]).abs() < 1e-15,
                    "prepared upsample must match field resampling"
                );
            }
        }
    }

    #[test]
    fn patch_pool_draws_are_seeded_and_in_range() {
        let x = ScalarField::constant((16, 16, 16), [1.0; 3], 0.4);
        let y = TensorField::constant(
            (8, 8, 8),
            [2.0; 3],
            Domain::Manifold,
            SymMat3::identity(),
        );
        let pool = PatchPool::build(&x, &y, 8, 2).unwrap();
        assert!(!pool.x_patches.is_empty() && !pool.y_patches.is_empty());
        for p in &pool.x_patches {
            assert_eq!(p.dims(), (8, 8, 8));
        }
        for p in &pool.y_patches {
            assert_eq!(p.dims(), (4, 4, 4));
        }

        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let (a, _) = pool.draw(&mut r1, 4);
        let (b, _) = pool.draw(&mut r2, 4);
        for (p, q) in a.iter().zip(&b) {
            assert!(std::ptr::eq(*p, *q), "same seed must draw the same patches");
        }

        let pairs = pool.draw_paired(&mut r1, 3);
        assert_eq!(pairs.len(), 3);
        assert!(pool.paired_len() > 0, "aligned grids must yield pairs");

        // Masked extraction sanity: a mask that kills everything yields an
        // empty patch set, which build reports as a config error.
        let m = Mask::from_parts((16, 16, 16), vec![false; 16 * 16 * 16]);
        assert!(x.extract_patches(8, 4, &m).unwrap().is_empty());
    }

    #[test]
    fn paired_draws_are_physically_colocated() {
        // Encode position into both volumes: the structural value is the HR
        // x-coordinate, the diffusion m11 the LR x-coordinate. A true pair
        // then satisfies x(0,0,0) == factor · m11(0,0,0).
        let x = ScalarField::from_fn((16, 16, 16), [1.0; 3], |x, _, _| x as f64);
        let y = TensorField::from_fn((8, 8, 8), [2.0; 3], Domain::Tangent, |x, _, _| {
            SymMat3::new(x as f64, 0.0, 0.0, 0.0, 0.0, 0.0)
        })
        .unwrap();
        let pool = PatchPool::build(&x, &y, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (xp, yp) in pool.draw_paired(&mut rng, 20) {
            assert_eq!(
                xp.get(0, 0, 0),
                2.0 * yp.get(0, 0, 0).d[0],
                "paired patches must share a physical origin"
            );
        }
    }
}
