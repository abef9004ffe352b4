//! DTI-derived scalar maps and the volume evaluation suite.
//!
//! Per-voxel quantities come from the symmetric eigensolver in [`crate::spd`]:
//! fractional anisotropy (FA), mean diffusivity (MD), and the principal
//! diffusion direction. On top of those, three volume metrics compare a
//! generated tensor field against its ground truth:
//!
//! * `fa_mse` — mean squared error between the two FA maps,
//! * `mean_le_distance` — mean per-voxel Log-Euclidean distance,
//! * `cosine_similarity_map` — mean |cos ∠| between principal directions,
//!   reported at ground-truth FA thresholds 0, 0.2, and 0.5.
//!
//! [`evaluate`] bundles all three into an [`EvalReport`] with a stable
//! plain-text serialization (one `key=value` line per metric, reals printed
//! with 17 significant digits so they round-trip bit-exactly).
//!
//! All means accumulate in a single fixed (row-major) order, so repeated runs
//! are bit-identical.

use std::fmt;

use thiserror::Error;

use crate::field::{Domain, Mask, ScalarField, TensorField};
use crate::spd::{eig_sym3, le_dist, SpdError, SymMat3};

/// Eigenvalue gap below which the principal direction is flagged as
/// ill-defined.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// FA thresholds used by [`evaluate`] and the report format.
pub const FA_THRESHOLDS: [f64; 3] = [0.0, 0.2, 0.5];

#[derive(Debug, Error)]
pub enum MetricsError {
    /// Eigensolver failure at a specific voxel.
    #[error("tensor at ({x}, {y}, {z}): {source}")]
    Voxel {
        x: usize,
        y: usize,
        z: usize,
        source: SpdError,
    },
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("expected a {want:?}-domain field, got {got:?}")]
    WrongDomain { want: Domain, got: Domain },
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("malformed report: {0}")]
    Report(String),
}

/// Fractional anisotropy, `sqrt(3/2) · ‖λ − mean(λ)‖ / ‖λ‖`, in [0, 1].
///
/// Computed in the equivalent pairwise-difference form
/// `sqrt(((λ1−λ2)² + (λ2−λ3)² + (λ3−λ1)²) / (2‖λ‖²))`, which is exactly
/// zero for isotropic tensors. Eigenvalues are floored at zero so that
/// near-null tensors degrade gracefully; an all-zero spectrum yields FA = 0
/// by convention.
pub fn fractional_anisotropy(p: &SymMat3<f64>) -> Result<f64, SpdError> {
    let eig = eig_sym3(p)?;
    Ok(fa_from_eigenvalues(&eig.eigenvalues))
}

/// Mean diffusivity, `(λ1 + λ2 + λ3) / 3` (equal to trace/3).
pub fn mean_diffusivity(p: &SymMat3<f64>) -> Result<f64, SpdError> {
    let eig = eig_sym3(p)?;
    Ok((eig.eigenvalues[0] + eig.eigenvalues[1] + eig.eigenvalues[2]) / 3.0)
}

/// Principal diffusion direction with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalDirection {
    /// Unit eigenvector of the largest eigenvalue, sign-canonicalized so the
    /// first nonzero component is positive.
    pub direction: [f64; 3],
    /// Set when λ1 − λ2 < [`DEGENERACY_GAP`]; the direction is then an
    /// arbitrary (but deterministic) basis vector of the leading eigenspace.
    pub degenerate: bool,
}

/// Unit eigenvector of the largest eigenvalue.
pub fn principal_direction(p: &SymMat3<f64>) -> Result<PrincipalDirection, SpdError> {
    let eig = eig_sym3(p)?;
    Ok(PrincipalDirection {
        direction: eig.eigenvector(0),
        degenerate: eig.eigenvalues[0] - eig.eigenvalues[1] < DEGENERACY_GAP,
    })
}

/// Convention for comparing principal directions, whose sign is arbitrary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CosineConvention {
    /// |cos ∠| — immune to eigenvector sign flips (the default).
    #[default]
    Absolute,
    /// Raw dot product of the sign-canonicalized eigenvectors.
    Signed,
}

/// Per-threshold summary of a cosine similarity comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdStat {
    pub threshold: f64,
    pub mean_cosine: f64,
    pub voxel_count: usize,
}

/// Result of [`cosine_similarity_map`]: a per-voxel cosine map plus means
/// over the voxels whose **ground-truth** FA meets each threshold.
#[derive(Debug, Clone)]
pub struct CosineSimilarity {
    pub map: ScalarField,
    pub by_threshold: Vec<ThresholdStat>,
}

/// Per-voxel cosine similarity between principal directions, with means at
/// the given ground-truth FA thresholds (absolute-value convention).
pub fn cosine_similarity_map(
    gen: &TensorField,
    gt: &TensorField,
    thresholds: &[f64],
) -> Result<CosineSimilarity, MetricsError> {
    cosine_similarity_map_with(gen, gt, thresholds, None, CosineConvention::Absolute)
}

/// [`cosine_similarity_map`] with an optional voxel mask and an explicit
/// sign convention.
pub fn cosine_similarity_map_with(
    gen: &TensorField,
    gt: &TensorField,
    thresholds: &[f64],
    mask: Option<&Mask>,
    convention: CosineConvention,
) -> Result<CosineSimilarity, MetricsError> {
    check_pair(gen, gt)?;
    check_mask(gt, mask)?;
    let dims = gt.dims();

    let mut map = vec![0.0f64; gen.data().len()];
    // (sum, count) accumulator per threshold, filled in row-major voxel order.
    let mut acc = vec![(0.0f64, 0usize); thresholds.len()];

    let mut i = 0usize;
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let at = |s: SpdError| MetricsError::Voxel { x, y, z, source: s };
                let eg = eig_sym3(&gen.data()[i]).map_err(at)?;
                let et = eig_sym3(&gt.data()[i]).map_err(at)?;
                let vg = eg.eigenvector(0);
                let vt = et.eigenvector(0);
                let dot = vg[0] * vt[0] + vg[1] * vt[1] + vg[2] * vt[2];
                let cos = match convention {
                    CosineConvention::Absolute => dot.abs().min(1.0),
                    CosineConvention::Signed => dot.clamp(-1.0, 1.0),
                };
                map[i] = cos;
                if mask.is_none_or(|m| m.get(x, y, z)) {
                    let fa = fa_from_eigenvalues(&et.eigenvalues);
                    for (t, a) in thresholds.iter().zip(acc.iter_mut()) {
                        if fa >= *t {
                            a.0 += cos;
                            a.1 += 1;
                        }
                    }
                }
                i += 1;
            }
        }
    }

    let by_threshold = thresholds
        .iter()
        .zip(acc)
        .map(|(&threshold, (sum, n))| ThresholdStat {
            threshold,
            mean_cosine: if n == 0 { f64::NAN } else { sum / n as f64 },
            voxel_count: n,
        })
        .collect();
    Ok(CosineSimilarity {
        map: ScalarField::new(dims, gt.spacing(), map).expect("cosines are finite"),
        by_threshold,
    })
}

/// Mean squared error between the FA maps of `gen` and `gt` over `mask`.
pub fn fa_mse(gen: &TensorField, gt: &TensorField, mask: &Mask) -> Result<f64, MetricsError> {
    masked_mean(gen, gt, mask, |g, t, at| {
        let a = fractional_anisotropy(g).map_err(at)?;
        let b = fractional_anisotropy(t).map_err(at)?;
        Ok((a - b) * (a - b))
    })
}

/// Mean per-voxel Log-Euclidean distance between `gen` and `gt` over `mask`.
pub fn mean_le_distance(
    gen: &TensorField,
    gt: &TensorField,
    mask: &Mask,
) -> Result<f64, MetricsError> {
    masked_mean(gen, gt, mask, |g, t, at| le_dist(g, t).map_err(at))
}

/// FA map of a whole tensor field.
pub fn fa_map(t: &TensorField) -> Result<ScalarField, MetricsError> {
    require_manifold(t)?;
    let dims = t.dims();
    let mut out = vec![0.0f64; t.data().len()];
    let mut i = 0usize;
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                out[i] = fractional_anisotropy(&t.data()[i])
                    .map_err(|source| MetricsError::Voxel { x, y, z, source })?;
                i += 1;
            }
        }
    }
    Ok(ScalarField::new(dims, t.spacing(), out).expect("FA values are finite"))
}

/// Mask of voxels whose mean diffusivity exceeds `md_threshold` — the
/// default evaluation region (threshold 0 keeps every non-null voxel).
pub fn md_foreground_mask(t: &TensorField, md_threshold: f64) -> Result<Mask, MetricsError> {
    require_manifold(t)?;
    let dims = t.dims();
    let mut bits = vec![false; t.data().len()];
    let mut i = 0usize;
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let md = mean_diffusivity(&t.data()[i])
                    .map_err(|source| MetricsError::Voxel { x, y, z, source })?;
                bits[i] = md > md_threshold;
                i += 1;
            }
        }
    }
    Ok(Mask::from_parts(dims, bits))
}

/// Full evaluation of a generated volume against its ground truth.
///
/// `fa_mse` and the mean log distance are averaged over `mask`; cosine
/// similarity is averaged over `mask` voxels whose ground-truth FA meets
/// each of [`FA_THRESHOLDS`].
pub fn evaluate(
    gen: &TensorField,
    gt: &TensorField,
    mask: &Mask,
) -> Result<EvalReport, MetricsError> {
    let fa = fa_mse(gen, gt, mask)?;
    let log_dist = mean_le_distance(gen, gt, mask)?;
    let cos = cosine_similarity_map_with(
        gen,
        gt,
        &FA_THRESHOLDS,
        Some(mask),
        CosineConvention::Absolute,
    )?;
    Ok(EvalReport {
        fa_mse: fa,
        mean_log_distance: log_dist,
        cosine: cos.by_threshold,
        metadata: Vec::new(),
    })
}

/// The Table-1-shaped evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fa_mse: f64,
    pub mean_log_distance: f64,
    /// One entry per FA threshold, in ascending threshold order.
    pub cosine: Vec<ThresholdStat>,
    /// Free-form provenance (seed, volume ids, …) carried as comment lines.
    pub metadata: Vec<(String, String)>,
}

impl EvalReport {
    /// Parses the `key=value` line format produced by `Display`.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let bad = |m: String| MetricsError::Report(m);
        let mut metadata = Vec::new();
        let mut fa_mse = None;
        let mut log_dist = None;
        let mut cos: Vec<(f64, f64)> = Vec::new();
        let mut counts: Vec<(f64, usize)> = Vec::new();

        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                match rest.split_once(':') {
                    Some((k, v)) => metadata.push((k.trim().into(), v.trim().into())),
                    None => metadata.push((rest.into(), String::new())),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            let fval = || -> Result<f64, MetricsError> {
                value
                    .parse::<f64>()
                    .map_err(|e| bad(format!("bad number in {line:?}: {e}")))
            };
            if key == "fa_mse" {
                fa_mse = Some(fval()?);
            } else if key == "log_dist" {
                log_dist = Some(fval()?);
            } else if let Some(t) = key.strip_prefix("cos_") {
                let t: f64 = t.parse().map_err(|e| bad(format!("bad threshold in {line:?}: {e}")))?;
                cos.push((t, fval()?));
            } else if let Some(t) = key.strip_prefix("n_") {
                let t: f64 = t.parse().map_err(|e| bad(format!("bad threshold in {line:?}: {e}")))?;
                let n: usize = value
                    .parse()
                    .map_err(|e| bad(format!("bad count in {line:?}: {e}")))?;
                counts.push((t, n));
            } else {
                return Err(bad(format!("unknown key {key:?}")));
            }
        }

        let fa_mse = fa_mse.ok_or_else(|| bad("missing fa_mse".into()))?;
        let mean_log_distance = log_dist.ok_or_else(|| bad("missing log_dist".into()))?;
        if cos.len() != counts.len() {
            return Err(bad(format!(
                "{} cos_* lines but {} n_* lines",
                cos.len(),
                counts.len()
            )));
        }
        let cosine = cos
            .into_iter()
            .zip(counts)
            .map(|((t, mean), (tn, n))| {
                if t != tn {
                    return Err(bad(format!("threshold order mismatch: cos_{t} vs n_{tn}")));
                }
                Ok(ThresholdStat { threshold: t, mean_cosine: mean, voxel_count: n })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalReport { fa_mse, mean_log_distance, cosine, metadata })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.metadata {
            if v.is_empty() {
                writeln!(f, "# {k}")?;
            } else {
                writeln!(f, "# {k}: {v}")?;
            }
        }
        writeln!(f, "fa_mse={}", fmt_real(self.fa_mse))?;
        writeln!(f, "log_dist={}", fmt_real(self.mean_log_distance))?;
        for s in &self.cosine {
            writeln!(f, "cos_{:.1}={}", s.threshold, fmt_real(s.mean_cosine))?;
        }
        for s in &self.cosine {
            writeln!(f, "n_{:.1}={}", s.threshold, s.voxel_count)?;
        }
        Ok(())
    }
}

/// 17 significant digits: enough to reproduce any f64 bit-exactly on parse.
fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fa_from_eigenvalues(l: &[f64; 3]) -> f64 {
    let l0 = l[0].max(0.0);
    let l1 = l[1].max(0.0);
    let l2 = l[2].max(0.0);
    let norm_sq = l0 * l0 + l1 * l1 + l2 * l2;
    if norm_sq == 0.0 {
        return 0.0;
    }
    let pair_sq = (l0 - l1).powi(2) + (l1 - l2).powi(2) + (l2 - l0).powi(2);
    (pair_sq / (2.0 * norm_sq)).sqrt().min(1.0)
}

fn require_manifold(t: &TensorField) -> Result<(), MetricsError> {
    if t.domain() != Domain::Manifold {
        return Err(MetricsError::WrongDomain { want: Domain::Manifold, got: t.domain() });
    }
    Ok(())
}

fn check_pair(gen: &TensorField, gt: &TensorField) -> Result<(), MetricsError> {
    require_manifold(gen)?;
    require_manifold(gt)?;
    if gen.dims() != gt.dims() {
        return Err(MetricsError::DimMismatch { a: gen.dims(), b: gt.dims() });
    }
    Ok(())
}

fn check_mask(gt: &TensorField, mask: Option<&Mask>) -> Result<(), MetricsError> {
    if let Some(m) = mask {
        if m.dims() != gt.dims() {
            return Err(MetricsError::DimMismatch { a: m.dims(), b: gt.dims() });
        }
    }
    Ok(())
}

/// Shared masked-mean driver: applies `f` per masked voxel in row-major
/// order and averages.
fn masked_mean(
    gen: &TensorField,
    gt: &TensorField,
    mask: &Mask,
    mut f: impl FnMut(
        &SymMat3<f64>,
        &SymMat3<f64>,
        &dyn Fn(SpdError) -> MetricsError,
    ) -> Result<f64, MetricsError>,
) -> Result<f64, MetricsError> {
    check_pair(gen, gt)?;
    check_mask(gt, Some(mask))?;
    let dims = gt.dims();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    let mut i = 0usize;
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                if mask.get(x, y, z) {
                    let at = move |s: SpdError| MetricsError::Voxel { x, y, z, source: s };
                    sum += f(&gen.data()[i], &gt.data()[i], &at)?;
                    n += 1;
                }
                i += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(sum / n as f64)
}
