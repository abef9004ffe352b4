//! `dtisynth ablate` — the three-mode comparison sweep.

use std::fmt::Write as _;
use std::path::Path;

use dtisynth_core::field::{Mask, ScalarField, TensorField};
use dtisynth_core::gan::{
    self, synthesize_hr, Mode, PatchPool, Trainer,
};
use dtisynth_core::metrics::{self, EvalReport};
use dtisynth_core::phantom;

use crate::config::{Config, Normalization};
use crate::error::CliError;

/// One trained-and-evaluated arm of the sweep.
struct Arm {
    mode: Mode,
    seed: u64,
    outcome: Result<EvalReport, String>,
}

/// Trains every mode over the configured `[eval] seeds`, evaluates each
/// against a held-out phantom (same geometry, `holdout_seed`), and writes
/// the comparison table to `out_dir/ablation.txt` — per-seed rows plus a
/// median row per mode, with `FAILED` markers for arms whose training or
/// evaluation errored (the sweep itself carries on).
pub fn cmd_ablate(cfg: &Config, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    if cfg.seeds.is_empty() {
        return Err(CliError::Config("`[eval] seeds` must name at least one seed".into()));
    }

    let (x_train, _, y_lr_train) = phantom::generate(&cfg.phantom)?;
    let mut hold_spec = cfg.phantom.clone();
    hold_spec.seed = cfg.holdout_seed;
    let (x_hold, y_hold, _) = phantom::generate(&hold_spec)?;

    let mut arms = Vec::new();
    for mode in [Mode::MaCyclegan, Mode::MaGan, Mode::PlainCyclegan] {
        for &seed in &cfg.seeds {
            let outcome =
                run_arm(cfg, mode, seed, &x_train, &y_lr_train, &x_hold, &y_hold, out_dir)
                    .map_err(|e| e.to_string());
            if let Err(msg) = &outcome {
                eprintln!("ablate: arm {mode} seed {seed} FAILED: {msg}");
            } else {
                println!("ablate: arm {mode} seed {seed} done");
            }
            arms.push(Arm { mode, seed, outcome });
        }
    }

    let table = render_table(&arms);
    let path = out_dir.join("ablation.txt");
    std::fs::write(&path, &table)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    print!("{table}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    cfg: &Config,
    mode: Mode,
    seed: u64,
    x_train: &ScalarField,
    y_lr_train: &TensorField,
    x_hold: &ScalarField,
    y_hold: &TensorField,
    out_dir: &Path,
) -> Result<EvalReport, CliError> {
    let mut tc = cfg.train.clone();
    tc.mode = mode;
    tc.seed = seed;
    if cfg.normalization == Normalization::Fit {
        tc.norm = gan::fit_norm(y_lr_train, mode)?;
    }
    let mut trainer = Trainer::new(tc)?;
    let pool = PatchPool::build(x_train, y_lr_train, trainer.cfg.patch, trainer.cfg.resample_factor)?;

    if cfg.pretrain_epochs > 0 {
        let pairs = pool.paired();
        if pairs.is_empty() {
            return Err(CliError::Config(
                "pretraining requested but no colocated patch pairs exist".into(),
            ));
        }
        gan::pretrain_paired(&mut trainer, &pairs, cfg.pretrain_epochs)?;
    }
    for _ in 0..trainer.cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let (bx, by) = trainer.draw_from(&pool);
            let losses = gan::train_step(&mut trainer, &bx, &by)?;
            total += losses.generator_total(&trainer.cfg);
        }
        if cfg.steps_per_epoch > 0 {
            trainer.observe_epoch(total / cfg.steps_per_epoch as f64);
        }
    }

    let synth = synthesize_hr(
        &trainer.models.gy,
        x_hold,
        &Mask::full(x_hold.dims()),
        trainer.cfg.patch,
        mode,
        &trainer.cfg.norm,
    )?;
    let (gen, floored) = match synth.volume.domain() {
        dtisynth_core::field::Domain::Manifold => (synth.volume, 0),
        dtisynth_core::field::Domain::Tangent => super::floor_to_spd(&synth.volume)?,
    };
    let mask = metrics::md_foreground_mask(y_hold, cfg.md_threshold)?;
    let mut report = metrics::evaluate(&gen, y_hold, &mask)?;
    report.metadata.push(("mode".into(), mode.to_string()));
    report.metadata.push(("seed".into(), seed.to_string()));
    if floored > 0 {
        report.metadata.push(("projected_non_spd_voxels".into(), floored.to_string()));
    }
    let rp = out_dir.join(format!("report_{mode}_{seed}.txt"));
    std::fs::write(&rp, report.to_string())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", rp.display())))?;
    Ok(report)
}

/// Median with the even-count midpoint convention.
fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Renders the comparison table. Column names match the report keys
/// exactly; metric cells show `FAILED` for arms that errored.
fn render_table(arms: &[Arm]) -> String {
    // Column keys from an arbitrary successful report (they are identical
    // across reports by construction); fall back to the canonical set.
    let keys: Vec<String> = arms
        .iter()
        .find_map(|a| a.outcome.as_ref().ok())
        .map(|r| {
            let mut k = vec!["fa_mse".to_string(), "log_dist".to_string()];
            k.extend(r.cosine.iter().map(|s| format!("cos_{:.1}", s.threshold)));
            k
        })
        .unwrap_or_else(|| {
            vec!["fa_mse".into(), "log_dist".into(), "cos_0.0".into(), "cos_0.2".into(), "cos_0.5".into()]
        });

    let metric_values = |r: &EvalReport| -> Vec<f64> {
        let mut v = vec![r.fa_mse, r.mean_log_distance];
        v.extend(r.cosine.iter().map(|s| s.mean_cosine));
        v
    };

    let mut s = String::new();
    let _ = write!(s, "{:<16} {:<8}", "mode", "seed");
    for k in &keys {
        let _ = write!(s, " {k:>14}");
    }
    s.push('\n');

    for mode in [Mode::MaCyclegan, Mode::MaGan, Mode::PlainCyclegan] {
        let rows: Vec<&Arm> = arms.iter().filter(|a| a.mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        let mut per_metric: Vec<Vec<f64>> = vec![Vec::new(); keys.len()];
        for arm in &rows {
            let _ = write!(s, "{:<16} {:<8}", mode.to_string(), arm.seed);
            match &arm.outcome {
                Ok(r) => {
                    for (i, v) in metric_values(r).iter().enumerate() {
                        let _ = write!(s, " {v:>14.6e}");
                        per_metric[i].push(*v);
                    }
                }
                Err(_) => {
                    for _ in &keys {
                        let _ = write!(s, " {:>14}", "FAILED");
                    }
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<16} {:<8}", mode.to_string(), "median");
        for col in &mut per_metric {
            match median(col) {
                Some(m) => {
                    let _ = write!(s, " {m:>14.6e}");
                }
                None => {
                    let _ = write!(s, " {:>14}", "FAILED");
                }
            }
        }
        s.push('\n');
    }
    s
}
