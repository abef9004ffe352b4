//! `dtisynth gradcheck` — the finite-difference self-test, end to end.

use dtisynth_core::gan::composite_gradchecks;
use dtisynth_core::nn::{standard_primitive_checks, GradCheckConfig, GradCheckReport};

use crate::error::CliError;

/// Verifies every autodiff primitive and the composite training objectives
/// (built on 2-level generators and critics at 8³ patches) against central
/// differences, printing one table row per check.
///
/// `corrupt_sigmoid` is a test hook: it deliberately breaks the sigmoid
/// backward pass so the harness itself can be validated as a negative
/// control.
pub fn cmd_gradcheck(tolerance: f64, corrupt_sigmoid: bool) -> Result<(), CliError> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(CliError::Config(format!(
            "tolerance must be positive and finite, got {tolerance}"
        )));
    }
    let gc = GradCheckConfig {
        step: 1e-5,
        tolerance,
        samples: 256,
        seed: 0xc11c_8ec5,
        corrupt_sigmoid,
    };
    let mut reports: Vec<GradCheckReport> = standard_primitive_checks(&gc)?;
    reports.extend(composite_gradchecks(tolerance, corrupt_sigmoid)?);

    println!("{:<34} {:>7} {:>13}  result", "op", "coords", "max rel err");
    for r in &reports {
        println!(
            "{:<34} {:>7} {:>13.3e}  {}",
            r.name,
            r.coords_checked,
            r.max_rel_err,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failing: Vec<&str> =
        reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failing.is_empty() {
        println!("all {} gradient checks passed at tolerance {tolerance:e}", reports.len());
        Ok(())
    } else {
        Err(CliError::Gradcheck(format!(
            "gradient checks failed: {}",
            failing.join(", ")
        )))
    }
}
