//! Central-difference verification of the tape's analytic gradients.
//!
//! Every check builds a scalar loss from a parameter set, computes analytic
//! gradients with one backward pass, then perturbs sampled coordinates by ±h
//! and compares the finite-difference slope against the analytic value. The
//! relative error uses a floored denominator so near-zero gradients are judged
//! on the absolute scale where central differences are trustworthy.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Params;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor5;
use super::NnError;

/// Denominator floor for the relative error: below this scale the comparison
/// is effectively absolute, matching the ~1e-8 accuracy of central
/// differences on O(1) losses.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Coordinates to test per check (all of them when the model is smaller).
    pub samples: usize,
    pub seed: u64,
    /// Self-test hook: deliberately corrupt the sigmoid backward rule so the
    /// checker must report a failure.
    pub corrupt_sigmoid: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, samples: 256, seed: 0x5eed, corrupt_sigmoid: false }
    }
}

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    /// Parameter and flat coordinate where the worst error occurred.
    pub worst_coord: String,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} — {} coords, max rel err {:.3e} (at {})",
            self.name,
            if self.passed { "ok" } else { "FAILED" },
            self.coords_checked,
            self.max_rel_err,
            self.worst_coord
        )
    }
}

/// Checks the analytic gradient of the scalar loss `build` constructs from
/// `params`. The builder is called once per evaluation with a fresh tape and
/// the bound parameter ids, and must return the loss node.
pub fn check_graph<F>(
    name: &str,
    params: &Params,
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &BTreeMap<String, NodeId>) -> Result<NodeId, NnError>,
{
    let eval = |p: &Params| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        tape.set_sigmoid_corruption(cfg.corrupt_sigmoid);
        let ids = p.bind_trainable(&mut tape)?;
        let loss = build(&mut tape, &ids)?;
        tape.scalar_value(loss)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    tape.set_sigmoid_corruption(cfg.corrupt_sigmoid);
    let ids = params.bind_trainable(&mut tape)?;
    let loss = build(&mut tape, &ids)?;
    tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let coords = select_coords(params, cfg, name);
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    let mut worst = String::from("-");
    for (pname, idx) in &coords {
        let original = work.get(pname).expect("selected param exists").data()[*idx];
        let hi = original + cfg.step;
        let lo = original - cfg.step;
        let t = work.get_mut(pname).unwrap();
        t.data_mut()[*idx] = hi;
        let f_hi = eval(&work)?;
        let t = work.get_mut(pname).unwrap();
        t.data_mut()[*idx] = lo;
        let f_lo = eval(&work)?;
        let t = work.get_mut(pname).unwrap();
        t.data_mut()[*idx] = original;
        // Divide by the actually-representable interval, not the nominal 2h.
        let fd = (f_hi - f_lo) / (hi - lo);
        let analytic = grads.get(pname).map_or(0.0, |(_, g)| g[*idx]);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(REL_FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{pname}[{idx}] fd={fd:.6e} analytic={analytic:.6e}");
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        coords_checked: coords.len(),
        max_rel_err: max_rel,
        worst_coord: worst,
        passed: max_rel <= cfg.tolerance,
    })
}

/// Picks the coordinates to perturb: everything when the parameter count is
/// within budget, otherwise a seeded random subset that still touches the
/// first and last coordinate of every parameter tensor.
fn select_coords(params: &Params, cfg: &GradCheckConfig, name: &str) -> Vec<(String, usize)> {
    let total = params.numel();
    let mut all: Vec<(String, usize)> = Vec::with_capacity(total);
    for (pname, tensor) in params.iter() {
        for i in 0..tensor.numel() {
            all.push((pname.to_string(), i));
        }
    }
    if all.len() <= cfg.samples {
        return all;
    }

    let mut seed = cfg.seed;
    for b in name.bytes() {
        seed = seed.wrapping_mul(0x100000001b3).wrapping_add(u64::from(b));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut picked: Vec<(String, usize)> = Vec::with_capacity(cfg.samples + 2 * params.len());
    let mut taken = std::collections::BTreeSet::new();
    // Guarantee edge coverage of every tensor (first and last coefficient).
    let mut offset = 0usize;
    for (pname, tensor) in params.iter() {
        let n = tensor.numel();
        for flat in [offset, offset + n - 1] {
            if taken.insert(flat) {
                picked.push((pname.to_string(), flat - offset));
            }
        }
        offset += n;
    }
    while picked.len() < cfg.samples {
        let flat = rng.random_range(0..all.len());
        if taken.insert(flat) {
            picked.push(all[flat].clone());
        }
    }
    picked
}

/// Runs a gradient check for every differentiable primitive on seeded inputs
/// sized so each op sees at least the configured coordinate budget.
///
/// Activation inputs are sampled away from their kink points (0 for the
/// rectifier, ±1 for the clamp) by margins far larger than the
/// finite-difference step, so the subgradient convention never collides with
/// the numerical slope. Each op's output is contracted against a fixed random
/// cotangent so every output coordinate influences the scalar loss.
pub fn standard_primitive_checks(
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70f5);
    let mut reports = Vec::new();

    let sampler = |shape: [usize; 5], lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        Tensor5::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
            .expect("sampled tensor matches its shape")
    };

    // Contract `out` against a constant cotangent and reduce to a scalar.
    fn contracted(
        tape: &mut Tape,
        out: NodeId,
        cot: &Tensor5,
    ) -> Result<NodeId, NnError> {
        let c = tape.input(cot.clone())?;
        let prod = tape.mul(out, c)?;
        tape.mean_all(prod)
    }

    // conv3d: stride 1 and stride 2 with padding, and a 1×1×1 kernel, each
    // differentiated through input, weight, and bias together.
    for (label, k, stride, padding) in [
        ("conv3d_k3_s1_p1", 3usize, 1usize, 1usize),
        ("conv3d_k3_s2_p1", 3, 2, 1),
        ("conv3d_k1_s1_p0", 1, 1, 0),
    ] {
        let in_shape = [1, 2, 5, 5, 5];
        let oc = 3;
        let ox = (5 + 2 * padding - k) / stride + 1;
        let mut params = Params::new();
        params.insert("input", sampler(in_shape, -1.0, 1.0, &mut rng))?;
        params.insert("weight", sampler([oc, 2, k, k, k], -0.5, 0.5, &mut rng))?;
        params.insert("bias", sampler([1, oc, 1, 1, 1], -0.3, 0.3, &mut rng))?;
        let cot = sampler([1, oc, ox, ox, ox], -1.0, 1.0, &mut rng);
        reports.push(check_graph(label, &params, cfg, move |tape, ids| {
            let out = tape.conv3d(ids["input"], ids["weight"], ids["bias"], stride, padding)?;
            contracted(tape, out, &cot)
        })?);
    }

    // Resampling pair.
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 2, 10, 10, 10], -1.0, 1.0, &mut rng);
        reports.push(check_graph("upsample_nearest2", &params, cfg, move |tape, ids| {
            let out = tape.upsample_nearest2(ids["x"])?;
            contracted(tape, out, &cot)
        })?);

        let mut params = Params::new();
        params.insert("x", sampler([1, 2, 6, 6, 6], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 2, 3, 3, 3], -1.0, 1.0, &mut rng);
        reports.push(check_graph("downsample_avg2", &params, cfg, move |tape, ids| {
            let out = tape.downsample_avg2(ids["x"])?;
            contracted(tape, out, &cot)
        })?);
    }

    // Activations, sampled clear of their kinks.
    {
        let mut params = Params::new();
        let n = 6 * 6 * 6;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.05..1.0);
                if rng.random_range(0..2) == 0 {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        params.insert("x", Tensor5::from_vec([1, 1, 6, 6, 6], data)?)?;
        let cot = sampler([1, 1, 6, 6, 6], -1.0, 1.0, &mut rng);
        reports.push(check_graph("leaky_relu", &params, cfg, move |tape, ids| {
            let out = tape.leaky_relu(ids["x"], 0.2)?;
            contracted(tape, out, &cot)
        })?);
    }
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 1, 6, 6, 6], -2.0, 2.0, &mut rng))?;
        let cot = sampler([1, 1, 6, 6, 6], -1.0, 1.0, &mut rng);
        reports.push(check_graph("sigmoid", &params, cfg, move |tape, ids| {
            let out = tape.sigmoid(ids["x"])?;
            contracted(tape, out, &cot)
        })?);
    }
    {
        // Mix interior values with safely saturated ones so both branches of
        // the clamp derivative are exercised.
        let mut params = Params::new();
        let n = 6 * 6 * 6;
        let data: Vec<f64> = (0..n)
            .map(|i| {
                if i % 4 == 0 {
                    let mag = rng.random_range(1.1..2.0);
                    if i % 8 == 0 {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    rng.random_range(-0.9..0.9)
                }
            })
            .collect();
        params.insert("x", Tensor5::from_vec([1, 1, 6, 6, 6], data)?)?;
        let cot = sampler([1, 1, 6, 6, 6], -1.0, 1.0, &mut rng);
        reports.push(check_graph("hard_tanh", &params, cfg, move |tape, ids| {
            let out = tape.hard_tanh(ids["x"])?;
            contracted(tape, out, &cot)
        })?);
    }

    // Elementwise arithmetic.
    for label in ["add", "sub", "mul"] {
        let mut params = Params::new();
        params.insert("a", sampler([1, 2, 4, 4, 4], -1.0, 1.0, &mut rng))?;
        params.insert("b", sampler([1, 2, 4, 4, 4], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 2, 4, 4, 4], -1.0, 1.0, &mut rng);
        reports.push(check_graph(label, &params, cfg, move |tape, ids| {
            let out = match label {
                "add" => tape.add(ids["a"], ids["b"])?,
                "sub" => tape.sub(ids["a"], ids["b"])?,
                _ => tape.mul(ids["a"], ids["b"])?,
            };
            contracted(tape, out, &cot)
        })?);
    }
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng);
        reports.push(check_graph("scale", &params, cfg, move |tape, ids| {
            let out = tape.scale(ids["x"], -2.5)?;
            contracted(tape, out, &cot)
        })?);
    }

    // Structure ops.
    {
        let mut params = Params::new();
        params.insert("a", sampler([1, 2, 4, 4, 4], -1.0, 1.0, &mut rng))?;
        params.insert("b", sampler([1, 3, 4, 4, 4], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 5, 4, 4, 4], -1.0, 1.0, &mut rng);
        reports.push(check_graph("concat_channels", &params, cfg, move |tape, ids| {
            let out = tape.concat_channels(ids["a"], ids["b"])?;
            contracted(tape, out, &cot)
        })?);
    }
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng);
        reports.push(check_graph("affine_channel", &params, cfg, move |tape, ids| {
            let out = tape.affine_channel(ids["x"], &[1.5, -0.5], &[0.1, -0.2])?;
            contracted(tape, out, &cot)
        })?);
    }
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 9, 3, 3, 3], -1.0, 1.0, &mut rng))?;
        let cot = sampler([1, 6, 3, 3, 3], -1.0, 1.0, &mut rng);
        reports.push(check_graph("sym9to6", &params, cfg, move |tape, ids| {
            let out = tape.sym9to6(ids["x"])?;
            contracted(tape, out, &cot)
        })?);
    }
    {
        let mut params = Params::new();
        params.insert("x", sampler([2, 3, 4, 4, 4], -1.0, 1.0, &mut rng))?;
        let cot = sampler([2, 3, 1, 1, 1], -1.0, 1.0, &mut rng);
        reports.push(check_graph("global_mean_pool", &params, cfg, move |tape, ids| {
            let out = tape.global_mean_pool(ids["x"])?;
            contracted(tape, out, &cot)
        })?);
    }

    // Reductions.
    {
        let mut params = Params::new();
        params.insert("x", sampler([1, 2, 5, 5, 5], -1.0, 1.0, &mut rng))?;
        reports.push(check_graph("mean_all", &params, cfg, |tape, ids| {
            tape.mean_all(ids["x"])
        })?);
    }
    {
        // Keep |a − b| bounded away from zero so the absolute value has no
        // kink within the finite-difference step.
        let mut params = Params::new();
        let a = sampler([1, 2, 4, 4, 4], -0.4, 0.4, &mut rng);
        let mut b = a.clone();
        for v in b.data_mut() {
            let off = rng.random_range(0.5..1.5);
            *v += if rng.random_range(0..2) == 0 { off } else { -off };
        }
        params.insert("a", a)?;
        params.insert("b", b)?;
        reports.push(check_graph("l1_mean", &params, cfg, |tape, ids| {
            tape.l1_mean(ids["a"], ids["b"])
        })?);
    }

    Ok(reports)
}
