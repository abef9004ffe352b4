//! `dtisynth evaluate` — the three-metric report plus optional slice dumps.

use std::path::Path;

use dtisynth_core::field::Domain;
use dtisynth_core::metrics::{
    self, CosineConvention, EvalReport, FA_THRESHOLDS,
};

use crate::config::Config;
use crate::error::CliError;
use crate::pgm::{self, SliceAxis};

/// Compares a generated tensor volume against its ground truth and writes
/// the `key=value` report to `report_path`.
///
/// Tangent-tagged generated volumes (the Euclidean ablation) are projected
/// onto the manifold by eigenvalue flooring first; the voxel count that
/// needed flooring is recorded in the report metadata. With `[eval]
/// slices = true`, mid-slice PGM dumps of the generated FA map and of the
/// voxelwise |cos ∠| map are written beside the report, one per axis. With
/// `check`, the written file is read back and must parse to identical
/// values.
pub fn cmd_evaluate(
    cfg: &Config,
    gen_path: &Path,
    gt_path: &Path,
    report_path: &Path,
    check: bool,
) -> Result<(), CliError> {
    let gen = super::read_tensor(gen_path)?;
    let gt = super::read_tensor(gt_path)?;
    if gen.dims() != gt.dims() {
        return Err(CliError::Shape(format!(
            "volume dims differ: generated {:?} vs ground truth {:?}",
            gen.dims(),
            gt.dims()
        )));
    }
    if gt.domain() != Domain::Manifold {
        return Err(CliError::Shape(format!(
            "ground truth must be a Manifold-tagged volume, got {:?}",
            gt.domain()
        )));
    }
    let (gen, floored) = match gen.domain() {
        Domain::Manifold => (gen, 0),
        Domain::Tangent => super::floor_to_spd(&gen)?,
    };

    let mask = metrics::md_foreground_mask(&gt, cfg.md_threshold)?;
    let mut report = metrics::evaluate(&gen, &gt, &mask)?;
    report.metadata.push(("generated".into(), gen_path.display().to_string()));
    report.metadata.push(("ground_truth".into(), gt_path.display().to_string()));
    if floored > 0 {
        report.metadata.push(("projected_non_spd_voxels".into(), floored.to_string()));
    }

    let text = report.to_string();
    std::fs::write(report_path, &text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", report_path.display())))?;

    if cfg.slices {
        let stem = report_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report")
            .to_string();
        let dir = report_path.parent().unwrap_or(Path::new("."));
        let fa = metrics::fa_map(&gen)?;
        let cos = metrics::cosine_similarity_map_with(
            &gen,
            &gt,
            &FA_THRESHOLDS,
            Some(&mask),
            CosineConvention::Absolute,
        )?;
        for axis in SliceAxis::ALL {
            let (w, h, pix) = pgm::mid_slice(&fa, axis);
            pgm::write_pgm(&dir.join(format!("{stem}_fa_{}.pgm", axis.name())), w, h, &pix)?;
            let (w, h, pix) = pgm::mid_slice(&cos.map, axis);
            pgm::write_pgm(&dir.join(format!("{stem}_cos_{}.pgm", axis.name())), w, h, &pix)?;
        }
    }

    if check {
        let back = std::fs::read_to_string(report_path)
            .map_err(|e| CliError::Io(format!("cannot re-read {}: {e}", report_path.display())))?;
        let parsed = EvalReport::parse(&back)?;
        if parsed.to_string() != text {
            return Err(CliError::Io(
                "report self-check failed: re-parsed values differ from the written ones".into(),
            ));
        }
        println!("evaluate: self-check passed, report parses to identical values");
    }
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtisynth_core::field::TensorField;
    use dtisynth_core::SymMat3;

    fn diag_volume(d: (f64, f64, f64), dims: (usize, usize, usize)) -> TensorField {
        TensorField::constant(
            dims,
            [1.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(d.0, d.1, d.2),
        )
    }

    #[test]
    fn identical_volumes_report_zero_fa_mse_and_pass_the_self_check() {
        let dir = tempfile::tempdir().unwrap();
        let v = diag_volume((2.0, 1.0, 1.0), (6, 6, 6));
        let gp = dir.path().join("gen.tfv");
        let tp = dir.path().join("gt.tfv");
        v.write_tfv(&gp).unwrap();
        v.write_tfv(&tp).unwrap();
        let rp = dir.path().join("report.txt");
        cmd_evaluate(&Config::default(), &gp, &tp, &rp, true).unwrap();
        let report = EvalReport::parse(&std::fs::read_to_string(&rp).unwrap()).unwrap();
        assert_eq!(report.fa_mse, 0.0, "identical volumes have zero FA error");
        assert_eq!(report.mean_log_distance, 0.0);
        assert_eq!(report.cosine[0].mean_cosine, 1.0);
    }

    #[test]
    fn dim_mismatch_exits_through_the_shape_code() {
        let dir = tempfile::tempdir().unwrap();
        let a = diag_volume((2.0, 1.0, 1.0), (6, 6, 6));
        let b = diag_volume((2.0, 1.0, 1.0), (4, 4, 4));
        let ap = dir.path().join("a.tfv");
        let bp = dir.path().join("b.tfv");
        a.write_tfv(&ap).unwrap();
        b.write_tfv(&bp).unwrap();
        let err = cmd_evaluate(
            &Config::default(),
            &ap,
            &bp,
            &dir.path().join("r.txt"),
            false,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 6);
    }

    #[test]
    fn tangent_generated_volumes_are_floored_and_noted() {
        let dir = tempfile::tempdir().unwrap();
        let gen = TensorField::constant(
            (4, 4, 4),
            [1.0; 3],
            Domain::Tangent,
            SymMat3::from_diag(1.0, 0.5, -0.75),
        );
        let gt = diag_volume((2.0, 1.0, 1.0), (4, 4, 4));
        let gp = dir.path().join("gen.tfv");
        let tp = dir.path().join("gt.tfv");
        gen.write_tfv(&gp).unwrap();
        gt.write_tfv(&tp).unwrap();
        let rp = dir.path().join("report.txt");
        cmd_evaluate(&Config::default(), &gp, &tp, &rp, true).unwrap();
        let text = std::fs::read_to_string(&rp).unwrap();
        assert!(
            text.contains("projected_non_spd_voxels: 64"),
            "every voxel needed flooring:\n{text}"
        );
    }

    #[test]
    fn slice_dumps_cover_both_maps_on_all_three_axes() {
        let dir = tempfile::tempdir().unwrap();
        let v = diag_volume((2.0, 1.0, 1.0), (6, 6, 6));
        let gp = dir.path().join("gen.tfv");
        let tp = dir.path().join("gt.tfv");
        v.write_tfv(&gp).unwrap();
        v.write_tfv(&tp).unwrap();
        let mut cfg = Config::default();
        cfg.slices = true;
        let rp = dir.path().join("report.txt");
        cmd_evaluate(&cfg, &gp, &tp, &rp, false).unwrap();
        for name in [
            "report_fa_axial.pgm",
            "report_fa_coronal.pgm",
            "report_fa_sagittal.pgm",
            "report_cos_axial.pgm",
            "report_cos_coronal.pgm",
            "report_cos_sagittal.pgm",
        ] {
            let p = dir.path().join(name);
            assert!(p.exists(), "missing slice dump {name}");
            let text = std::fs::read_to_string(&p).unwrap();
            assert!(text.starts_with("P2\n6 6\n255\n"), "bad PGM header in {name}");
        }
    }
}
