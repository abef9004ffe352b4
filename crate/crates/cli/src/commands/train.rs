//! `dtisynth train` — adversarial training with optional paired warm-start.

use std::io::Write;
use std::path::Path;

use dtisynth_core::gan::{self, PatchPool, Trainer};

use crate::config::{Config, Normalization};
use crate::error::CliError;

/// Trains the configured mode on `data_dir` (which must hold `x_hr.tfv` and
/// `y_lr.tfv`, as written by `phantom`) and writes `checkpoint.mack` (plus
/// its UTF-8 sidecar) and `train.log` into `out_dir`.
///
/// With `resume`, the trainer restarts from `out_dir/checkpoint.mack` and
/// runs a further `epochs × steps_per_epoch` steps. Each optimizer step
/// appends one log line; an epoch ends with a plateau-schedule observation
/// of the mean generator loss.
pub fn cmd_train(
    cfg: &Config,
    data_dir: &Path,
    out_dir: &Path,
    resume: bool,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let x_hr = super::read_scalar(&data_dir.join("x_hr.tfv"))?;
    let y_lr = super::read_tensor(&data_dir.join("y_lr.tfv"))?;

    let mut tc = cfg.train.clone();
    if cfg.normalization == Normalization::Fit {
        tc.norm = gan::fit_norm(&y_lr, tc.mode)?;
    }

    let ck_path = out_dir.join("checkpoint.mack");
    let mut trainer = if resume {
        gan::load_checkpoint(&ck_path, &tc)?
    } else {
        Trainer::new(tc)?
    };
    let pool = PatchPool::build(&x_hr, &y_lr, trainer.cfg.patch, trainer.cfg.resample_factor)?;

    let log_path = out_dir.join("train.log");
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", log_path.display())))?;
    let mut put = |line: String| -> Result<(), CliError> {
        writeln!(log, "{line}").map_err(|e| CliError::Io(format!("log write failed: {e}")))
    };
    put("# dtisynth training log".into())?;
    put(format!(
        "# mode={} seed={} start_step={} patches={} paired={}",
        trainer.cfg.mode,
        trainer.cfg.seed,
        trainer.step,
        pool.x_patches.len(),
        pool.paired_len()
    ))?;

    if cfg.pretrain_epochs > 0 {
        let pairs = pool.paired();
        if pairs.is_empty() {
            return Err(CliError::Config(
                "pretraining requested but the volumes yield no colocated patch pairs".into(),
            ));
        }
        let history = gan::pretrain_paired(&mut trainer, &pairs, cfg.pretrain_epochs)?;
        for (i, (gy_l1, gx_l1)) in history.iter().enumerate() {
            put(format!(
                "# pretrain epoch={} gy_l1={gy_l1:.9e} gx_l1={gx_l1:.9e}",
                i + 1
            ))?;
        }
    }

    for epoch in 0..trainer.cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let (bx, by) = trainer.draw_from(&pool);
            let losses = gan::train_step(&mut trainer, &bx, &by)?;
            total += losses.generator_total(&trainer.cfg);
            put(losses.log_line(trainer.step, trainer.cfg.mode, trainer.cfg.seed, trainer.lr))?;
        }
        if cfg.steps_per_epoch > 0 {
            let mean = total / cfg.steps_per_epoch as f64;
            if trainer.observe_epoch(mean) {
                put(format!(
                    "# plateau: lr reduced to {:.9e} after epoch {}",
                    trainer.lr,
                    epoch + 1
                ))?;
            }
        }
    }

    gan::save_checkpoint(&ck_path, &trainer)?;
    println!(
        "train: mode {} at step {}, checkpoint at {}",
        trainer.cfg.mode,
        trainer.step,
        ck_path.display()
    );
    Ok(())
}
