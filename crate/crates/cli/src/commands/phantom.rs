//! `dtisynth phantom` — generate the paired synthetic volumes.

use std::path::Path;

use dtisynth_core::phantom;

use crate::config::Config;
use crate::error::CliError;

/// Generates the phantom described by `[data]` and writes `x_hr.tfv`
/// (structural), `y_hr.tfv` (ground-truth tensors), `y_lr.tfv`
/// (downsampled acquisition stand-in), and `phantom.conf` — an echo of the
/// full configuration that produced them.
pub fn cmd_phantom(cfg: &Config, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let (x_hr, y_hr, y_lr) = phantom::generate(&cfg.phantom)?;
    x_hr.write_tfv(&out_dir.join("x_hr.tfv"))?;
    y_hr.write_tfv(&out_dir.join("y_hr.tfv"))?;
    y_lr.write_tfv(&out_dir.join("y_lr.tfv"))?;
    std::fs::write(out_dir.join("phantom.conf"), cfg.to_text())
        .map_err(|e| CliError::Io(format!("cannot write phantom.conf: {e}")))?;
    println!(
        "phantom: {}x{}x{} volume (seed {}), wrote x_hr.tfv, y_hr.tfv, y_lr.tfv to {}",
        cfg.phantom.dims.0,
        cfg.phantom.dims.1,
        cfg.phantom.dims.2,
        cfg.phantom.seed,
        out_dir.display()
    );
    Ok(())
}
