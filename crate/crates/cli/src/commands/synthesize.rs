//! `dtisynth synthesize` — full-volume inference through a checkpoint.

use std::path::Path;

use dtisynth_core::field::{Domain, Mask};
use dtisynth_core::gan::{self, synthesize_hr};

use crate::config::Config;
use crate::error::CliError;

/// Runs G_Y from `checkpoint` over the structural volume at `input` and
/// writes the synthesized tensor volume to `output`.
///
/// Volumes whose dims are not divisible by the patch stride are
/// replicate-padded internally; the output is cropped back, so its dims
/// always match the input. Manifold-aware checkpoints yield a
/// Manifold-tagged volume; `PLAIN_CYCLEGAN` checkpoints yield a
/// Tangent-tagged one (with a warning), because their tensors carry no
/// positivity guarantee. Either way the minimum eigenvalue over the volume
/// is reported.
pub fn cmd_synthesize(
    cfg: &Config,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
) -> Result<(), CliError> {
    let mut tc = cfg.train.clone();
    // The checkpoint is the authority on the normalization actually used.
    tc.norm = gan::NormMap::identity();
    let trainer = gan::load_checkpoint(checkpoint, &tc)?;
    let x = super::read_scalar(input)?;

    let patch = trainer.cfg.patch;
    let stride = (patch / 2).max(1);
    let pad = |d: usize| -> usize {
        let d = d.max(patch);
        d.div_ceil(stride) * stride
    };
    let dims = x.dims();
    let padded = (pad(dims.0), pad(dims.1), pad(dims.2));
    let x_run = if padded == dims { x.clone() } else { super::pad_replicate(&x, padded) };

    let synth = synthesize_hr(
        &trainer.models.gy,
        &x_run,
        &Mask::full(padded),
        patch,
        trainer.cfg.mode,
        &trainer.cfg.norm,
    )?;
    if synth.uncovered > 0 {
        eprintln!(
            "warning: {} voxels were covered by no patch and carry the identity tensor",
            synth.uncovered
        );
    }
    let volume = super::crop_tensor(&synth.volume, dims)?;
    let min_eig = super::min_eigenvalue(&volume)?;

    if volume.domain() == Domain::Tangent {
        eprintln!(
            "warning: {} outputs carry no manifold guarantee; writing a Tangent-tagged volume",
            trainer.cfg.mode
        );
    }
    volume.write_tfv(output)?;
    println!(
        "synthesize: {}x{}x{} {:?} volume, min eigenvalue over volume: {min_eig:.6e}",
        dims.0,
        dims.1,
        dims.2,
        volume.domain()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtisynth_core::field::ScalarField;
    use dtisynth_core::gan::{save_checkpoint, Mode, Trainer};

    fn small_config(mode: Mode) -> Config {
        let mut cfg = Config::default();
        cfg.train.mode = mode;
        cfg.train.patch = 8;
        cfg.train.gen_depth = 2;
        cfg.train.gen_base = 2;
        cfg.train.critic_stages = 1;
        cfg.train.critic_blocks = 1;
        cfg.train.critic_base = 2;
        cfg
    }

    fn checkpoint_for(cfg: &Config, dir: &Path) -> std::path::PathBuf {
        let trainer = Trainer::new(cfg.train.clone()).unwrap();
        let path = dir.join("ck.mack");
        save_checkpoint(&path, &trainer).unwrap();
        path
    }

    #[test]
    fn padding_makes_awkward_dims_work_and_output_dims_match_input() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(Mode::MaCyclegan);
        let ck = checkpoint_for(&cfg, dir.path());
        // 11 × 9 × 10: none divisible by the stride 4, one below the patch.
        let x = ScalarField::from_fn((11, 9, 10), [1.0; 3], |i, j, k| {
            ((i + j + k) as f64 * 0.37).sin().abs()
        });
        let xp = dir.path().join("x.tfv");
        x.write_tfv(&xp).unwrap();
        let out = dir.path().join("y.tfv");
        cmd_synthesize(&cfg, &ck, &xp, &out).unwrap();

        let y = super::super::read_tensor(&out).unwrap();
        assert_eq!(y.dims(), (11, 9, 10), "output dims must match the input");
        assert_eq!(y.domain(), Domain::Manifold);
        assert!(
            super::super::min_eigenvalue(&y).unwrap() > 0.0,
            "manifold-aware synthesis is SPD everywhere"
        );
    }

    #[test]
    fn plain_checkpoints_yield_a_tangent_tagged_volume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(Mode::PlainCyclegan);
        let ck = checkpoint_for(&cfg, dir.path());
        let x = ScalarField::constant((16, 16, 16), [1.0; 3], 0.4);
        let xp = dir.path().join("x.tfv");
        x.write_tfv(&xp).unwrap();
        let out = dir.path().join("y.tfv");
        cmd_synthesize(&cfg, &ck, &xp, &out).unwrap();
        let y = super::super::read_tensor(&out).unwrap();
        assert_eq!(
            y.domain(),
            Domain::Tangent,
            "the tool must refuse to tag unconstrained tensors as Manifold"
        );
    }

    #[test]
    fn missing_checkpoints_exit_through_the_checkpoint_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(Mode::MaCyclegan);
        let x = ScalarField::constant((8, 8, 8), [1.0; 3], 0.4);
        let xp = dir.path().join("x.tfv");
        x.write_tfv(&xp).unwrap();
        let err = cmd_synthesize(
            &cfg,
            &dir.path().join("missing.mack"),
            &xp,
            &dir.path().join("y.tfv"),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
