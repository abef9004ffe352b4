//! One module per CLI verb, plus the file/volume helpers they share.

mod ablate;
mod evaluate;
mod gradcheck;
mod phantom;
mod synthesize;
mod train;

pub use ablate::cmd_ablate;
pub use evaluate::cmd_evaluate;
pub use gradcheck::cmd_gradcheck;
pub use phantom::cmd_phantom;
pub use synthesize::cmd_synthesize;
pub use train::cmd_train;

use std::path::Path;

use dtisynth_core::field::{io::read_tfv, Domain, ScalarField, TensorField};
use dtisynth_core::spd::{eig_sym3, symmetrize};
use dtisynth_core::SymMat3;

use crate::error::CliError;

pub(crate) fn read_scalar(path: &Path) -> Result<ScalarField, CliError> {
    read_tfv(path)
        .and_then(|f| f.into_scalar())
        .map_err(|e| annotate(path, e))
}

pub(crate) fn read_tensor(path: &Path) -> Result<TensorField, CliError> {
    read_tfv(path)
        .and_then(|f| f.into_tensor())
        .map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: dtisynth_core::field::FieldError) -> CliError {
    match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Shape(m) => CliError::Shape(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Smallest eigenvalue over a whole tensor volume — the SPD sweep reported
/// by `synthesize` and used to witness manifold closure.
pub(crate) fn min_eigenvalue(t: &TensorField) -> Result<f64, CliError> {
    let mut min = f64::INFINITY;
    for v in t.data() {
        let eig = eig_sym3(v).map_err(|e| CliError::Numeric(e.to_string()))?;
        min = min.min(eig.eigenvalues[2]);
    }
    Ok(min)
}

/// Eigenvalue floor used when a Tangent-tagged (unconstrained) volume must
/// be evaluated as if it were on the manifold.
pub(crate) const EIG_FLOOR: f64 = 1e-6;

/// Projects an unconstrained tensor volume onto the manifold by flooring
/// eigenvalues at [`EIG_FLOOR`]. Returns the Manifold-tagged volume and the
/// number of voxels that actually needed flooring — the honest way to run
/// manifold metrics (which take matrix logarithms) over the output of the
/// Euclidean ablation, whose tensors carry no positivity guarantee.
pub(crate) fn floor_to_spd(t: &TensorField) -> Result<(TensorField, usize), CliError> {
    let mut out = Vec::with_capacity(t.data().len());
    let mut floored = 0usize;
    for v in t.data() {
        let eig = eig_sym3(v).map_err(|e| CliError::Numeric(e.to_string()))?;
        if eig.eigenvalues[2] >= EIG_FLOOR {
            out.push(*v);
            continue;
        }
        floored += 1;
        let l: Vec<f64> = eig.eigenvalues.iter().map(|&x| x.max(EIG_FLOOR)).collect();
        let mut m = [[0.0f64; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3)
                    .map(|i| l[i] * eig.eigenvectors[r][i] * eig.eigenvectors[c][i])
                    .sum();
            }
        }
        let sym: SymMat3 = symmetrize(&m).map_err(|e| CliError::Numeric(e.to_string()))?;
        out.push(sym);
    }
    let field = TensorField::new(t.dims(), t.spacing(), Domain::Manifold, out)
        .map_err(CliError::from)?;
    Ok((field, floored))
}

/// Replicate-pads a structural volume to `dims` (per-axis clamp of the
/// source coordinate), leaving the original region untouched.
pub(crate) fn pad_replicate(x: &ScalarField, dims: (usize, usize, usize)) -> ScalarField {
    let (nx, ny, nz) = x.dims();
    ScalarField::from_fn(dims, x.spacing(), |i, j, k| {
        x.get(i.min(nx - 1), j.min(ny - 1), k.min(nz - 1))
    })
}

/// Crops a tensor volume back to `dims` from the origin corner.
pub(crate) fn crop_tensor(
    t: &TensorField,
    dims: (usize, usize, usize),
) -> Result<TensorField, CliError> {
    if t.dims() == dims {
        return Ok(t.clone());
    }
    let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                data.push(*t.get(x, y, z));
            }
        }
    }
    TensorField::new(dims, t.spacing(), t.domain(), data).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtisynth_core::spd;

    #[test]
    fn flooring_lifts_negative_eigenvalues_and_counts_them() {
        let bad = SymMat3::from_diag(1.0, 0.5, -0.25);
        let good = SymMat3::from_diag(2.0, 1.0, 0.5);
        let t = TensorField::new(
            (2, 1, 1),
            [1.0; 3],
            Domain::Tangent,
            vec![bad, good],
        )
        .unwrap();
        let (m, floored) = floor_to_spd(&t).unwrap();
        assert_eq!(floored, 1, "only the indefinite voxel needs projection");
        assert_eq!(m.domain(), Domain::Manifold);
        let eig = spd::eig_sym3(m.get(0, 0, 0)).unwrap();
        assert!(
            (eig.eigenvalues[2] - EIG_FLOOR).abs() < 1e-12,
            "the negative eigenvalue is floored, got {}",
            eig.eigenvalues[2]
        );
        assert!(
            (eig.eigenvalues[0] - 1.0).abs() < 1e-12,
            "positive eigenvalues are untouched"
        );
        assert_eq!(m.get(1, 0, 0), &good, "already-SPD voxels pass through bitwise");
    }

    #[test]
    fn replicate_padding_extends_edges_and_crop_inverts_it() {
        let x = ScalarField::from_fn((3, 3, 3), [1.0; 3], |i, j, k| {
            (i + 10 * j + 100 * k) as f64
        });
        let padded = pad_replicate(&x, (5, 4, 3));
        assert_eq!(padded.get(1, 2, 1), x.get(1, 2, 1), "interior is untouched");
        assert_eq!(padded.get(4, 0, 0), x.get(2, 0, 0), "x replicates its last plane");
        assert_eq!(padded.get(0, 3, 2), x.get(0, 2, 2), "y replicates its last plane");

        let t = TensorField::constant(
            (4, 4, 4),
            [1.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(1.0, 1.0, 1.0),
        );
        let c = crop_tensor(&t, (3, 2, 4)).unwrap();
        assert_eq!(c.dims(), (3, 2, 4));
    }
}
