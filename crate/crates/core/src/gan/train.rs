//! Adversarial training: Wasserstein losses, the critic/generator update
//! step, supervised pre-training, checkpointing, and whole-objective
//! gradient verification.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::{ScalarField, TensorField};
use crate::nn::{
    adam_step, check_graph, clip_weights, read_mack, write_mack, AdamState, GradCheckConfig,
    GradCheckReport, MackEntry, NnError, NodeId, Params, PlateauSchedule, Tape, Tensor5,
};

use super::data::{prepare_batch, tensor_batch_to_tensor, NormMap, PatchPool, PreparedBatch};
use super::model::{Critic, Generator};
use super::{GanError, Mode, Models, TrainConfig};

/// The six scalar terms recorded at every training step.
///
/// `gan_x` / `gan_y` are the *generator-side* adversarial terms
/// (−E[D(fake)], what the generators minimize); `critic_x` / `critic_y` are
/// the Wasserstein estimates E[D(real)] − E[D(fake)] measured at the last
/// critic update of the step; the cycle terms are element-count-normalized
/// ℓ1 means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub gan_x: f64,
    pub gan_y: f64,
    pub cyc_forward: f64,
    pub cyc_backward: f64,
    pub critic_x: f64,
    pub critic_y: f64,
}

impl LossBreakdown {
    /// The total generator objective under `cfg`, composed exactly as the
    /// training graph composes it:
    /// `((λ_ganX·gan_x + λ_ganY·gan_y) + λ_cycX·cyc_forward) + λ_cycY·cyc_backward`.
    pub fn generator_total(&self, cfg: &TrainConfig) -> f64 {
        ((cfg.lambda_gan_x * self.gan_x + cfg.lambda_gan_y * self.gan_y)
            + cfg.lambda_cyc_x * self.cyc_forward)
            + cfg.lambda_cyc_y * self.cyc_backward
    }

    /// One append-only training-log line.
    pub fn log_line(&self, step: u64, mode: Mode, seed: u64, lr: f64) -> String {
        format!(
            "step={step} mode={mode} seed={seed} gan_x={:.9e} gan_y={:.9e} \
             cyc_forward={:.9e} cyc_backward={:.9e} critic_x={:.9e} critic_y={:.9e} lr={:.9e}",
            self.gan_x, self.gan_y, self.cyc_forward, self.cyc_backward, self.critic_x,
            self.critic_y, lr
        )
    }
}

/// Wraps tape errors with the loss term and step they occurred in, turning
/// non-finite values into the dedicated abort diagnostic.
fn finite_ctx(e: NnError, term: &str, step: u64) -> GanError {
    match e {
        NnError::NonFinite { op } => GanError::NonFiniteLoss {
            term: format!("{term} ({op})"),
            step,
        },
        other => GanError::Nn(other),
    }
}

fn finite_gan(e: GanError, term: &str, step: u64) -> GanError {
    match e {
        GanError::Nn(nn) => finite_ctx(nn, term, step),
        other => other,
    }
}

/// Input nodes of one prepared batch.
struct BatchNodes {
    x: NodeId,
    y_lr: NodeId,
    y_up: NodeId,
}

fn batch_nodes(tape: &mut Tape, prep: &PreparedBatch) -> Result<BatchNodes, NnError> {
    Ok(BatchNodes {
        x: tape.input(prep.x.clone())?,
        y_lr: tape.input(prep.y_lr.clone())?,
        y_up: tape.input(prep.y_up.clone())?,
    })
}

/// Value nodes of the generator objective.
struct GenGraph {
    loss: NodeId,
    gan_x: NodeId,
    gan_y: NodeId,
    cyc_forward: NodeId,
    cyc_backward: NodeId,
}

/// Builds the full generator objective on `tape`.
///
/// `ids` must contain the bound parameters of all four models (the caller
/// decides which are trainable). All diffusion quantities stay in the
/// normalized tangent space end to end; `D_Y` scores `G_Y`'s tangent output
/// downsampled to acquisition resolution directly — the exp∘log round trip
/// that would nominally sit between the generator and the critic is the
/// identity, so it is skipped rather than paid for.
fn build_generator_objective(
    tape: &mut Tape,
    models: &Models,
    ids: &BTreeMap<String, NodeId>,
    nodes: &BatchNodes,
    cfg: &TrainConfig,
) -> Result<GenGraph, GanError> {
    // fake_y = G_Y(x): high-resolution normalized tangent channels.
    let fake_y = models.gy.apply(tape, ids, nodes.x)?;
    // The critic judges it at acquisition resolution.
    let fake_y_lr = tape.downsample_avg2(fake_y)?;
    let dy_fake = models.dy.mean_score(tape, ids, fake_y_lr)?;
    let gan_y = tape.scale(dy_fake, -1.0)?;

    // fake_x = G_X(ŷ) from the upsampled real diffusion batch.
    let fake_x = models.gx.apply(tape, ids, nodes.y_up)?;
    let dx_fake = models.dx.mean_score(tape, ids, fake_x)?;
    let gan_x = tape.scale(dx_fake, -1.0)?;

    let (cyc_forward, cyc_backward) = if cfg.mode.uses_cycle() {
        let back_x = models.gx.apply(tape, ids, fake_y)?;
        let f = tape.l1_mean(back_x, nodes.x)?;
        let back_y = models.gy.apply(tape, ids, fake_x)?;
        let b = tape.l1_mean(back_y, nodes.y_up)?;
        (f, b)
    } else {
        let zf = tape.input(Tensor5::zeros([1, 1, 1, 1, 1]))?;
        let zb = tape.input(Tensor5::zeros([1, 1, 1, 1, 1]))?;
        (zf, zb)
    };

    // Weighted sum with a fixed association so the logged breakdown
    // recomposes to the exact total.
    let t_gx = tape.scale(gan_x, cfg.lambda_gan_x)?;
    let t_gy = tape.scale(gan_y, cfg.lambda_gan_y)?;
    let t_cf = tape.scale(cyc_forward, cfg.lambda_cyc_x)?;
    let t_cb = tape.scale(cyc_backward, cfg.lambda_cyc_y)?;
    let s1 = tape.add(t_gx, t_gy)?;
    let s2 = tape.add(s1, t_cf)?;
    let loss = tape.add(s2, t_cb)?;
    Ok(GenGraph { loss, gan_x, gan_y, cyc_forward, cyc_backward })
}

/// Evaluates the structural-domain Wasserstein estimate
/// `E[D_X(x)] − E[D_X(G_X(↑proj(y)))]` on one batch (no gradients).
pub fn loss_gan_x(
    gx: &Generator,
    dx: &Critic,
    batch_y_lr: &[&TensorField],
    batch_x_hr: &[&ScalarField],
    cfg: &TrainConfig,
) -> Result<f64, GanError> {
    let prep = prepare_batch(batch_x_hr, batch_y_lr, cfg.mode, &cfg.norm, cfg.resample_factor)?;
    let mut tape = Tape::new();
    let mut ids = gx.params.bind_frozen(&mut tape)?;
    ids.append(&mut dx.params.bind_frozen(&mut tape)?);
    let nodes = batch_nodes(&mut tape, &prep)?;
    let fake_x = gx.apply(&mut tape, &ids, nodes.y_up)?;
    let real = dx.mean_score(&mut tape, &ids, nodes.x)?;
    let fake = dx.mean_score(&mut tape, &ids, fake_x)?;
    let diff = tape.sub(real, fake)?;
    Ok(tape.scalar_value(diff)?)
}

/// Evaluates the diffusion-domain Wasserstein estimate
/// `E[D_Y(proj(y))] − E[D_Y(↓G_Y(x))]` on one batch (no gradients).
pub fn loss_gan_y(
    gy: &Generator,
    dy: &Critic,
    batch_x_hr: &[&ScalarField],
    batch_y_lr: &[&TensorField],
    cfg: &TrainConfig,
) -> Result<f64, GanError> {
    let prep = prepare_batch(batch_x_hr, batch_y_lr, cfg.mode, &cfg.norm, cfg.resample_factor)?;
    let mut tape = Tape::new();
    let mut ids = gy.params.bind_frozen(&mut tape)?;
    ids.append(&mut dy.params.bind_frozen(&mut tape)?);
    let nodes = batch_nodes(&mut tape, &prep)?;
    let fake_y = gy.apply(&mut tape, &ids, nodes.x)?;
    let fake_y_lr = tape.downsample_avg2(fake_y)?;
    let real = dy.mean_score(&mut tape, &ids, nodes.y_lr)?;
    let fake = dy.mean_score(&mut tape, &ids, fake_y_lr)?;
    let diff = tape.sub(real, fake)?;
    Ok(tape.scalar_value(diff)?)
}

/// Evaluates both cycle-consistency terms on one batch (no gradients):
/// forward `ℓ1(G_X(G_Y(x)), x)` and backward `ℓ1(G_Y(G_X(ŷ)), ŷ)`, each the
/// mean absolute difference over every element.
pub fn loss_cycle(
    gy: &Generator,
    gx: &Generator,
    batch_x_hr: &[&ScalarField],
    batch_y_lr: &[&TensorField],
    cfg: &TrainConfig,
) -> Result<(f64, f64), GanError> {
    let prep = prepare_batch(batch_x_hr, batch_y_lr, cfg.mode, &cfg.norm, cfg.resample_factor)?;
    let mut tape = Tape::new();
    let mut ids = gy.params.bind_frozen(&mut tape)?;
    ids.append(&mut gx.params.bind_frozen(&mut tape)?);
    let nodes = batch_nodes(&mut tape, &prep)?;
    let fake_y = gy.apply(&mut tape, &ids, nodes.x)?;
    let back_x = gx.apply(&mut tape, &ids, fake_y)?;
    let forward = tape.l1_mean(back_x, nodes.x)?;
    let fake_x = gx.apply(&mut tape, &ids, nodes.y_up)?;
    let back_y = gy.apply(&mut tape, &ids, fake_x)?;
    let backward = tape.l1_mean(back_y, nodes.y_up)?;
    Ok((tape.scalar_value(forward)?, tape.scalar_value(backward)?))
}

/// Full training state of a run: the four models, their Adam accumulators,
/// the learning-rate schedule, and the batch-draw RNG.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub models: Models,
    pub(crate) opt_gy: AdamState,
    pub(crate) opt_gx: AdamState,
    pub(crate) opt_dy: AdamState,
    pub(crate) opt_dx: AdamState,
    pub(crate) plateau: PlateauSchedule,
    /// Current learning rate (starts at `cfg.lr`, halves on plateaus).
    pub lr: f64,
    /// Completed training steps.
    pub step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Validates the config and initializes all four networks from
    /// `cfg.seed` (fixed draw order: G_Y, G_X, D_Y, D_X).
    pub fn new(cfg: TrainConfig) -> Result<Self, GanError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let gy = Generator::init(cfg.gy_spec(), "gy.", &mut rng)?;
        let gx = Generator::init(cfg.gx_spec(), "gx.", &mut rng)?;
        let dy = Critic::init(cfg.dy_spec(), "dy.", &mut rng)?;
        let dx = Critic::init(cfg.dx_spec(), "dx.", &mut rng)?;
        let lr = cfg.lr;
        Ok(Trainer {
            models: Models { gy, gx, dy, dx },
            opt_gy: AdamState::new(lr),
            opt_gx: AdamState::new(lr),
            opt_dy: AdamState::new(lr),
            opt_dx: AdamState::new(lr),
            plateau: PlateauSchedule::default(),
            lr,
            step: 0,
            rng,
            cfg,
        })
    }

    /// Draws one unpaired batch from `pool` with the trainer's RNG.
    pub fn draw_from<'a>(
        &mut self,
        pool: &'a PatchPool,
    ) -> (Vec<&'a ScalarField>, Vec<&'a TensorField>) {
        pool.draw(&mut self.rng, self.cfg.batch)
    }

    /// Draws one paired batch from `pool` with the trainer's RNG.
    pub fn draw_paired_from<'a>(
        &mut self,
        pool: &'a PatchPool,
    ) -> Vec<(&'a ScalarField, &'a TensorField)> {
        pool.draw_paired(&mut self.rng, self.cfg.batch)
    }

    /// Feeds the epoch-mean generator loss to the plateau schedule;
    /// returns whether the learning rate was reduced.
    pub fn observe_epoch(&mut self, mean_generator_loss: f64) -> bool {
        self.plateau.observe(mean_generator_loss, &mut self.lr)
    }
}

/// One optimizer update of a critic on fixed real/fake batches. Returns the
/// Wasserstein estimate `E[D(real)] − E[D(fake)]` from the forward pass.
fn critic_update(
    critic: &mut Critic,
    opt: &mut AdamState,
    real: &Tensor5,
    fake: &Tensor5,
    clip: f64,
    lr: f64,
    term: &str,
    step: u64,
) -> Result<f64, GanError> {
    let mut tape = Tape::new();
    let ids = critic.params.bind_trainable(&mut tape).map_err(|e| finite_ctx(e, term, step))?;
    let r = tape.input(real.clone()).map_err(|e| finite_ctx(e, term, step))?;
    let f = tape.input(fake.clone()).map_err(|e| finite_ctx(e, term, step))?;
    let mean_real =
        critic.mean_score(&mut tape, &ids, r).map_err(|e| finite_gan(e, term, step))?;
    let mean_fake =
        critic.mean_score(&mut tape, &ids, f).map_err(|e| finite_gan(e, term, step))?;
    // The critic maximizes real − fake; Adam minimizes, so the graph loss is
    // fake − real.
    let loss = tape.sub(mean_fake, mean_real).map_err(|e| finite_ctx(e, term, step))?;
    let estimate = -tape.scalar_value(loss)?;
    let grads = tape.backward(loss).map_err(|e| finite_ctx(e, term, step))?;
    opt.lr = lr;
    adam_step(&mut critic.params, &grads, opt)?;
    clip_weights(&mut critic.params, clip);
    Ok(estimate)
}

/// One full training step on one unpaired batch: `n_critic` critic updates
/// (weight-clipped after each) followed by one generator update.
///
/// The fake batches fed to the critics are computed once up front — the
/// generators stay frozen throughout the critic updates, so recomputing
/// them would burn time without changing a single value. In `MA_GAN` mode
/// the cycle terms are omitted from the graph (recorded as zero) and `G_X`
/// receives no gradient.
pub fn train_step(
    trainer: &mut Trainer,
    batch_x: &[&ScalarField],
    batch_y_lr: &[&TensorField],
) -> Result<LossBreakdown, GanError> {
    let cfg = trainer.cfg.clone();
    let step = trainer.step + 1;
    let prep = prepare_batch(batch_x, batch_y_lr, cfg.mode, &cfg.norm, cfg.resample_factor)?;

    // Fakes for the critic updates, computed once with frozen generators.
    let (fake_x_val, fake_y_lr_val) = {
        let mut tape = Tape::new();
        let mut ids = trainer.models.gy.params.bind_frozen(&mut tape)?;
        ids.append(&mut trainer.models.gx.params.bind_frozen(&mut tape)?);
        let x = tape.input(prep.x.clone())?;
        let y_up = tape.input(prep.y_up.clone())?;
        let fake_y = trainer
            .models
            .gy
            .apply(&mut tape, &ids, x)
            .map_err(|e| finite_gan(e, "fake synthesis", step))?;
        let fake_y_lr = tape
            .downsample_avg2(fake_y)
            .map_err(|e| finite_ctx(e, "fake synthesis", step))?;
        let fake_x = trainer
            .models
            .gx
            .apply(&mut tape, &ids, y_up)
            .map_err(|e| finite_gan(e, "fake synthesis", step))?;
        (tape.value(fake_x).clone(), tape.value(fake_y_lr).clone())
    };

    let mut critic_x = 0.0;
    let mut critic_y = 0.0;
    for _ in 0..cfg.n_critic {
        critic_y = critic_update(
            &mut trainer.models.dy,
            &mut trainer.opt_dy,
            &prep.y_lr,
            &fake_y_lr_val,
            cfg.clip,
            trainer.lr,
            "critic_y update",
            step,
        )?;
        critic_x = critic_update(
            &mut trainer.models.dx,
            &mut trainer.opt_dx,
            &prep.x,
            &fake_x_val,
            cfg.clip,
            trainer.lr,
            "critic_x update",
            step,
        )?;
    }

    // Generator update against the freshly updated, frozen critics.
    let mut tape = Tape::new();
    let mut ids = trainer.models.gy.params.bind_trainable(&mut tape)?;
    let mut gx_ids = if cfg.mode.uses_cycle() {
        trainer.models.gx.params.bind_trainable(&mut tape)?
    } else {
        trainer.models.gx.params.bind_frozen(&mut tape)?
    };
    ids.append(&mut gx_ids);
    ids.append(&mut trainer.models.dy.params.bind_frozen(&mut tape)?);
    ids.append(&mut trainer.models.dx.params.bind_frozen(&mut tape)?);
    let nodes = batch_nodes(&mut tape, &prep)?;
    let g = build_generator_objective(&mut tape, &trainer.models, &ids, &nodes, &cfg)
        .map_err(|e| finite_gan(e, "generator update", step))?;

    let breakdown = LossBreakdown {
        gan_x: tape.scalar_value(g.gan_x)?,
        gan_y: tape.scalar_value(g.gan_y)?,
        cyc_forward: tape.scalar_value(g.cyc_forward)?,
        cyc_backward: tape.scalar_value(g.cyc_backward)?,
        critic_x,
        critic_y,
    };
    let grads =
        tape.backward(g.loss).map_err(|e| finite_ctx(e, "generator update", step))?;
    trainer.opt_gy.lr = trainer.lr;
    adam_step(&mut trainer.models.gy.params, &grads, &mut trainer.opt_gy)?;
    if cfg.mode.uses_cycle() {
        trainer.opt_gx.lr = trainer.lr;
        adam_step(&mut trainer.models.gx.params, &grads, &mut trainer.opt_gx)?;
    }
    trainer.step = step;
    Ok(breakdown)
}

/// Supervised warm start on co-located patch pairs: two *independent* ℓ1
/// regressions, `G_Y(x) → ŷ` and `G_X(ŷ) → x`, where `ŷ` is the upsampled
/// projection of the acquired diffusion patch. Runs `epochs` passes over
/// `pairs` in batches of `cfg.batch`; returns the per-epoch mean ℓ1 of each
/// regression. Zero epochs leave every parameter untouched.
pub fn pretrain_paired(
    trainer: &mut Trainer,
    pairs: &[(&ScalarField, &TensorField)],
    epochs: usize,
) -> Result<Vec<(f64, f64)>, GanError> {
    if pairs.is_empty() && epochs > 0 {
        return Err(GanError::Config("pretraining needs at least one pair".into()));
    }
    let cfg = trainer.cfg.clone();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut sum_gy = 0.0;
        let mut sum_gx = 0.0;
        let mut batches = 0usize;
        for chunk in pairs.chunks(cfg.batch) {
            let xs: Vec<&ScalarField> = chunk.iter().map(|(x, _)| *x).collect();
            let ys: Vec<&TensorField> = chunk.iter().map(|(_, y)| *y).collect();
            let prep = prepare_batch(&xs, &ys, cfg.mode, &cfg.norm, cfg.resample_factor)?;
            let step = trainer.step + 1;

            // G_Y regression.
            let mut tape = Tape::new();
            let ids = trainer.models.gy.params.bind_trainable(&mut tape)?;
            let x = tape.input(prep.x.clone())?;
            let target = tape.input(prep.y_up.clone())?;
            let out = trainer
                .models
                .gy
                .apply(&mut tape, &ids, x)
                .map_err(|e| finite_gan(e, "paired G_Y regression", step))?;
            let loss = tape
                .l1_mean(out, target)
                .map_err(|e| finite_ctx(e, "paired G_Y regression", step))?;
            sum_gy += tape.scalar_value(loss)?;
            let grads = tape
                .backward(loss)
                .map_err(|e| finite_ctx(e, "paired G_Y regression", step))?;
            trainer.opt_gy.lr = trainer.lr;
            adam_step(&mut trainer.models.gy.params, &grads, &mut trainer.opt_gy)?;

            // G_X regression, independent of the G_Y update above.
            let mut tape = Tape::new();
            let ids = trainer.models.gx.params.bind_trainable(&mut tape)?;
            let y_up = tape.input(prep.y_up.clone())?;
            let target = tape.input(prep.x.clone())?;
            let out = trainer
                .models
                .gx
                .apply(&mut tape, &ids, y_up)
                .map_err(|e| finite_gan(e, "paired G_X regression", step))?;
            let loss = tape
                .l1_mean(out, target)
                .map_err(|e| finite_ctx(e, "paired G_X regression", step))?;
            sum_gx += tape.scalar_value(loss)?;
            let grads = tape
                .backward(loss)
                .map_err(|e| finite_ctx(e, "paired G_X regression", step))?;
            trainer.opt_gx.lr = trainer.lr;
            adam_step(&mut trainer.models.gx.params, &grads, &mut trainer.opt_gx)?;

            trainer.step = step;
            batches += 1;
        }
        history.push((sum_gy / batches as f64, sum_gx / batches as f64));
    }
    Ok(history)
}

// ---- checkpointing -----------------------------------------------------

fn u64_entry(name: &str, v: u64) -> MackEntry {
    let lo = (v & 0xffff_ffff) as f64;
    let hi = (v >> 32) as f64;
    MackEntry::new(name, vec![2], vec![lo, hi])
}

fn read_u64(e: &MackEntry) -> Result<u64, GanError> {
    if e.data.len() != 2 {
        return Err(GanError::Checkpoint(format!("{} must hold two halves", e.name)));
    }
    Ok((e.data[0] as u64) | ((e.data[1] as u64) << 32))
}

fn f64_entry(name: &str, v: f64) -> MackEntry {
    MackEntry::new(name, vec![1], vec![v])
}

fn opt_entries(entries: &mut Vec<MackEntry>, tag: &str, opt: &AdamState) {
    entries.push(u64_entry(&format!("opt.{tag}.step"), opt.step_count()));
    let (m, v) = opt.moments();
    for (name, vals) in m {
        entries.push(MackEntry::new(&format!("opt.m.{name}"), vec![vals.len()], vals.clone()));
    }
    for (name, vals) in v {
        entries.push(MackEntry::new(&format!("opt.v.{name}"), vec![vals.len()], vals.clone()));
    }
}

/// Writes the complete training state to `path` in the MACK container and a
/// human-readable config echo beside it (`<path>.txt`, UTF-8 `key = value`
/// lines). Identical state produces identical bytes.
pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<(), GanError> {
    let mut entries = Vec::new();
    for model_params in [
        &trainer.models.gy.params,
        &trainer.models.gx.params,
        &trainer.models.dy.params,
        &trainer.models.dx.params,
    ] {
        for (name, t) in model_params.iter() {
            entries.push(MackEntry::new(
                &format!("model.{name}"),
                t.shape().to_vec(),
                t.data().to_vec(),
            ));
        }
    }
    opt_entries(&mut entries, "gy", &trainer.opt_gy);
    opt_entries(&mut entries, "gx", &trainer.opt_gx);
    opt_entries(&mut entries, "dy", &trainer.opt_dy);
    opt_entries(&mut entries, "dx", &trainer.opt_dx);

    entries.push(u64_entry("meta.step", trainer.step));
    entries.push(u64_entry("meta.seed", trainer.cfg.seed));
    entries.push(f64_entry("meta.lr", trainer.lr));
    entries.push(f64_entry("meta.mode", match trainer.cfg.mode {
        Mode::MaCyclegan => 0.0,
        Mode::MaGan => 1.0,
        Mode::PlainCyclegan => 2.0,
    }));
    entries.push(MackEntry::new(
        "meta.norm.scale",
        vec![6],
        trainer.cfg.norm.scale.to_vec(),
    ));
    entries.push(MackEntry::new(
        "meta.norm.shift",
        vec![6],
        trainer.cfg.norm.shift.to_vec(),
    ));
    let (best, stale) = trainer.plateau.state();
    entries.push(f64_entry("meta.plateau.best", best));
    entries.push(f64_entry("meta.plateau.stale", stale as f64));

    entries.sort_by(|a, b| a.name.cmp(&b.name));
    write_mack(path, &entries)?;

    let sidecar = path.with_extension(match path.extension() {
        Some(e) => format!("{}.txt", e.to_string_lossy()),
        None => "txt".to_string(),
    });
    std::fs::write(&sidecar, config_echo(trainer)).map_err(NnError::Io)?;
    Ok(())
}

/// The sidecar text: every config field plus the mutable run state.
fn config_echo(trainer: &Trainer) -> String {
    let c = &trainer.cfg;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("mode", c.mode.to_string());
    kv("seed", c.seed.to_string());
    kv("lambda_cyc_x", c.lambda_cyc_x.to_string());
    kv("lambda_cyc_y", c.lambda_cyc_y.to_string());
    kv("lambda_gan_x", c.lambda_gan_x.to_string());
    kv("lambda_gan_y", c.lambda_gan_y.to_string());
    kv("clip", c.clip.to_string());
    kv("n_critic", c.n_critic.to_string());
    kv("batch", c.batch.to_string());
    kv("epochs", c.epochs.to_string());
    kv("lr_initial", c.lr.to_string());
    kv("lr_current", trainer.lr.to_string());
    kv("patch", c.patch.to_string());
    kv("resample_factor", c.resample_factor.to_string());
    kv("gen_depth", c.gen_depth.to_string());
    kv("gen_base", c.gen_base.to_string());
    kv("critic_stages", c.critic_stages.to_string());
    kv("critic_blocks", c.critic_blocks.to_string());
    kv("critic_base", c.critic_base.to_string());
    kv("norm_scale", format!("{:?}", c.norm.scale));
    kv("norm_shift", format!("{:?}", c.norm.shift));
    kv("step", trainer.step.to_string());
    s
}

fn take_u64(
    map: &mut BTreeMap<String, MackEntry>,
    name: &str,
) -> Result<u64, GanError> {
    let e = map
        .remove(name)
        .ok_or_else(|| GanError::Checkpoint(format!("missing entry {name}")))?;
    read_u64(&e)
}

fn take_f64(map: &mut BTreeMap<String, MackEntry>, name: &str) -> Result<f64, GanError> {
    let e = map
        .remove(name)
        .ok_or_else(|| GanError::Checkpoint(format!("missing entry {name}")))?;
    if e.data.len() != 1 {
        return Err(GanError::Checkpoint(format!("{name} must be a single value")));
    }
    Ok(e.data[0])
}

fn restore_opt(
    map: &mut BTreeMap<String, MackEntry>,
    tag: &str,
    params: &Params,
    opt: &mut AdamState,
) -> Result<(), GanError> {
    let step = take_u64(map, &format!("opt.{tag}.step"))?;
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, t) in params.iter() {
        for (prefix, store) in [("opt.m.", &mut m), ("opt.v.", &mut v)] {
            let key = format!("{prefix}{name}");
            if let Some(e) = map.remove(&key) {
                if e.data.len() != t.numel() {
                    return Err(GanError::Checkpoint(format!(
                        "{key} holds {} values for a {}-element parameter",
                        e.data.len(),
                        t.numel()
                    )));
                }
                store.insert(name.to_string(), e.data);
            }
        }
    }
    opt.restore(step, m, v);
    Ok(())
}

/// Reads a checkpoint back into a full [`Trainer`].
///
/// `cfg` must describe the same architecture and mode the checkpoint was
/// written with — parameter names/shapes and the stored mode are validated —
/// while the normalization map, learning rate, step count, and optimizer
/// state are restored from the file (the checkpoint is the authority on
/// learned state). The batch RNG is reseeded deterministically from
/// `(seed, step)`.
pub fn load_checkpoint(path: &Path, cfg: &TrainConfig) -> Result<Trainer, GanError> {
    let entries = read_mack(path)?;
    let mut map: BTreeMap<String, MackEntry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();

    let mode = match take_f64(&mut map, "meta.mode")? as i64 {
        0 => Mode::MaCyclegan,
        1 => Mode::MaGan,
        2 => Mode::PlainCyclegan,
        other => {
            return Err(GanError::Checkpoint(format!("unknown stored mode tag {other}")));
        }
    };
    if mode != cfg.mode {
        return Err(GanError::Checkpoint(format!(
            "checkpoint was trained in {mode} but the config asks for {}",
            cfg.mode
        )));
    }
    let seed = take_u64(&mut map, "meta.seed")?;
    if seed != cfg.seed {
        return Err(GanError::Checkpoint(format!(
            "checkpoint seed {seed} does not match configured seed {}",
            cfg.seed
        )));
    }

    let mut trainer = Trainer::new(cfg.clone())?;
    let scale = map
        .remove("meta.norm.scale")
        .ok_or_else(|| GanError::Checkpoint("missing entry meta.norm.scale".into()))?;
    let shift = map
        .remove("meta.norm.shift")
        .ok_or_else(|| GanError::Checkpoint("missing entry meta.norm.shift".into()))?;
    if scale.data.len() != 6 || shift.data.len() != 6 {
        return Err(GanError::Checkpoint("norm entries must hold six channels".into()));
    }
    let mut norm = NormMap::identity();
    norm.scale.copy_from_slice(&scale.data);
    norm.shift.copy_from_slice(&shift.data);
    trainer.cfg.norm = norm;

    trainer.step = take_u64(&mut map, "meta.step")?;
    trainer.lr = take_f64(&mut map, "meta.lr")?;
    let best = take_f64(&mut map, "meta.plateau.best")?;
    let stale = take_f64(&mut map, "meta.plateau.stale")? as u32;
    trainer.plateau.restore(best, stale);
    trainer.rng = ChaCha8Rng::seed_from_u64(seed ^ trainer.step.rotate_left(17));

    for model_params in [
        &mut trainer.models.gy.params,
        &mut trainer.models.gx.params,
        &mut trainer.models.dy.params,
        &mut trainer.models.dx.params,
    ] {
        let names: Vec<String> = model_params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let key = format!("model.{name}");
            let e = map
                .remove(&key)
                .ok_or_else(|| GanError::Checkpoint(format!("missing parameter {key}")))?;
            let t = model_params.get_mut(&name).expect("name enumerated above");
            if e.dims != t.shape().to_vec() {
                return Err(GanError::Checkpoint(format!(
                    "{key} has dims {:?}, architecture expects {:?}",
                    e.dims,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&e.data);
        }
    }

    restore_opt(&mut map, "gy", &trainer.models.gy.params, &mut trainer.opt_gy)?;
    restore_opt(&mut map, "gx", &trainer.models.gx.params, &mut trainer.opt_gx)?;
    restore_opt(&mut map, "dy", &trainer.models.dy.params, &mut trainer.opt_dy)?;
    restore_opt(&mut map, "dx", &trainer.models.dx.params, &mut trainer.opt_dx)?;

    if let Some((name, _)) = map.iter().next() {
        return Err(GanError::Checkpoint(format!(
            "checkpoint holds {} entries the architecture does not expect, e.g. {name}",
            map.len()
        )));
    }
    Ok(trainer)
}

// ---- whole-objective gradient verification ------------------------------

/// Builds a deterministic small-scale setup (2-level generators and critics
/// on 8³ patches) and checks the analytic gradient of the complete
/// generator objective and of both critic objectives against central
/// differences.
///
/// The step is shortened to 1e−6: the composite graphs contain thousands of
/// piecewise-linear activations, and the expected finite-difference error
/// from probes that straddle a kink shrinks linearly with the step, while
/// the rounding noise — losses here are O(1), so the difference quotient
/// loses roughly `ε / (2·step) ≈ 5e−11` — stays far below the tolerance.
pub fn composite_gradchecks(
    tolerance: f64,
    corrupt_sigmoid: bool,
) -> Result<Vec<GradCheckReport>, GanError> {
    let cfg = TrainConfig {
        patch: 8,
        batch: 2,
        gen_depth: 2,
        gen_base: 4,
        critic_stages: 2,
        critic_blocks: 2,
        critic_base: 4,
        seed: 0x9e1a,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(cfg.clone())?;
    let models = &trainer.models;

    // Deterministic synthetic batch, kept well away from activation
    // saturation.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b57ac1e);
    let mut x = Tensor5::zeros([2, 1, 8, 8, 8]);
    for v in x.data_mut() {
        *v = rand::Rng::random_range(&mut rng, 0.05..0.95);
    }
    let mut y_fields = Vec::new();
    for _ in 0..2 {
        let f = TensorField::from_fn((4, 4, 4), [2.0; 3], crate::field::Domain::Tangent, |_, _, _| {
            crate::spd::SymMat3::new(
                rand::Rng::random_range(&mut rng, -0.6..0.6),
                rand::Rng::random_range(&mut rng, -0.6..0.6),
                rand::Rng::random_range(&mut rng, -0.6..0.6),
                rand::Rng::random_range(&mut rng, -0.3..0.3),
                rand::Rng::random_range(&mut rng, -0.3..0.3),
                rand::Rng::random_range(&mut rng, -0.3..0.3),
            )
        })
        .expect("synthetic tangent field is finite");
        y_fields.push(f);
    }
    let ups: Vec<TensorField> = y_fields
        .iter()
        .map(|f| f.resample_trilinear(2.0))
        .collect::<Result<_, _>>()?;
    let prep = PreparedBatch {
        x,
        y_lr: tensor_batch_to_tensor(&y_fields.iter().collect::<Vec<_>>())?,
        y_up: tensor_batch_to_tensor(&ups.iter().collect::<Vec<_>>())?,
    };

    let gc = GradCheckConfig {
        step: 1e-6,
        tolerance,
        samples: 256,
        seed: 0x5eed_c0de,
        corrupt_sigmoid,
    };
    let as_nn = |e: GanError| NnError::Graph(e.to_string());
    let mut reports = Vec::new();

    // 1) Full generator objective, differentiated through both generators
    //    (critics frozen inside the builder).
    let mut gen_params = Params::new();
    for (n, t) in models.gy.params.iter().chain(models.gx.params.iter()) {
        gen_params.insert(n, t.clone())?;
    }
    reports.push(check_graph("composite_generator_objective", &gen_params, &gc, |tape, ids| {
        let mut all = ids.clone();
        all.append(&mut models.dy.params.bind_frozen(tape)?);
        all.append(&mut models.dx.params.bind_frozen(tape)?);
        let nodes = batch_nodes(tape, &prep)?;
        let g = build_generator_objective(tape, models, &all, &nodes, &cfg).map_err(as_nn)?;
        Ok(g.loss)
    })?);

    // Fixed fake batches for the critic objectives.
    let fake_y = models.gy.eval_frozen(prep.x.clone())?;
    let fake_y_lr = {
        let mut tape = Tape::new();
        let n = tape.input(fake_y)?;
        let d = tape.downsample_avg2(n)?;
        tape.value(d).clone()
    };
    let fake_x = models.gx.eval_frozen(prep.y_up.clone())?;

    // 2) Critic objective on the diffusion domain.
    let dy = &models.dy;
    let prep_ref = &prep;
    reports.push(check_graph("composite_critic_y_objective", &dy.params, &gc, {
        let fake_y_lr = fake_y_lr.clone();
        move |tape, ids| {
            let real = tape.input(prep_ref.y_lr.clone())?;
            let fake = tape.input(fake_y_lr.clone())?;
            let mr = dy.mean_score(tape, ids, real).map_err(as_nn)?;
            let mf = dy.mean_score(tape, ids, fake).map_err(as_nn)?;
            tape.sub(mf, mr)
        }
    })?);

    // 3) Critic objective on the structural domain.
    let dx = &models.dx;
    reports.push(check_graph("composite_critic_x_objective", &dx.params, &gc, {
        let fake_x = fake_x.clone();
        move |tape, ids| {
            let real = tape.input(prep_ref.x.clone())?;
            let fake = tape.input(fake_x.clone())?;
            let mr = dx.mean_score(tape, ids, real).map_err(as_nn)?;
            let mf = dx.mean_score(tape, ids, fake).map_err(as_nn)?;
            tape.sub(mf, mr)
        }
    })?);

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Domain, Mask, ScalarField, TensorField};
    use crate::gan::model::{probe_channel_mean_critic, zero_head};
    use crate::spd::SymMat3;

    fn tiny_cfg(mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            patch: 8,
            batch: 2,
            n_critic: 2,
            gen_depth: 2,
            gen_base: 2,
            critic_stages: 1,
            critic_blocks: 1,
            critic_base: 2,
            seed,
            mode,
            ..TrainConfig::default()
        }
    }

    /// Small synthetic training volumes: smooth structural intensities and
    /// mildly anisotropic SPD tensors.
    fn tiny_volumes() -> (ScalarField, TensorField) {
        let x = ScalarField::from_fn((12, 12, 12), [1.0; 3], |x, y, z| {
            0.2 + 0.6 * ((x as f64 * 0.4).sin().abs() + (y + z) as f64 / 24.0) / 2.0
        });
        let y = TensorField::from_fn((6, 6, 6), [2.0; 3], Domain::Manifold, |x, y, z| {
            let a = 0.1 * ((x + 2 * y + 3 * z) as f64 * 0.7).sin();
            SymMat3::new(1.2 + a, 0.9 - 0.5 * a, 1.0, 0.1 * a, -0.05 * a, 0.02)
        })
        .expect("synthetic tensors are SPD");
        (x, y)
    }

    fn tiny_pool() -> PatchPool {
        let (x, y) = tiny_volumes();
        PatchPool::build(&x, &y, 8, 2).unwrap()
    }

    #[test]
    fn zeroed_critics_score_every_gan_loss_zero() {
        let cfg = tiny_cfg(Mode::MaCyclegan, 31);
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        for critic in [&mut trainer.models.dy, &mut trainer.models.dx] {
            let names: Vec<String> = critic.params.iter().map(|(n, _)| n.to_string()).collect();
            for n in names {
                critic.params.get_mut(&n).unwrap().data_mut().fill(0.0);
            }
        }
        let pool = tiny_pool();
        let (bx, by) = trainer.draw_from(&pool);
        let lx = loss_gan_x(&trainer.models.gx, &trainer.models.dx, &by, &bx, &cfg).unwrap();
        let ly = loss_gan_y(&trainer.models.gy, &trainer.models.dy, &bx, &by, &cfg).unwrap();
        assert_eq!(lx, 0.0, "a constant critic sees no Wasserstein gap");
        assert_eq!(ly, 0.0, "a constant critic sees no Wasserstein gap");
    }

    #[test]
    fn probe_critic_reduces_loss_gan_x_to_a_difference_of_means() {
        let cfg = tiny_cfg(Mode::MaCyclegan, 32);
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        zero_head(&mut trainer.models.gx); // G_X ≡ 0.5
        let dx = probe_channel_mean_critic(1, 0, "dx.");
        let pool = tiny_pool();
        let (bx, by) = trainer.draw_from(&pool);

        let got = loss_gan_x(&trainer.models.gx, &dx, &by, &bx, &cfg).unwrap();
        let mean_x: f64 =
            bx.iter().map(|p| p.data().iter().sum::<f64>() / p.data().len() as f64).sum::<f64>()
                / bx.len() as f64;
        let want = mean_x - 0.5;
        assert!(
            (got - want).abs() < 1e-12,
            "mean-intensity probe must yield E[mean(x)] − 0.5: got {got}, want {want}"
        );
    }

    #[test]
    fn probe_critic_reduces_loss_gan_y_to_the_m11_channel_mean() {
        let cfg = tiny_cfg(Mode::MaCyclegan, 33);
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        zero_head(&mut trainer.models.gy); // ↓G_Y(x) ≡ 0 in tangent space
        let dy = probe_channel_mean_critic(6, 0, "dy.");

        // Real diffusion data: constant diag(e, 1, 1), whose log has
        // m11 = 1 and every other component 0.
        let y = TensorField::constant(
            (4, 4, 4),
            [2.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(std::f64::consts::E, 1.0, 1.0),
        );
        let x = ScalarField::constant((8, 8, 8), [1.0; 3], 0.5);
        let got = loss_gan_y(&trainer.models.gy, &dy, &[&x, &x], &[&y, &y], &cfg).unwrap();
        assert!(
            (got - 1.0).abs() < 1e-12,
            "m11-probe on log(diag(e,1,1)) against a zero fake must give 1.0, got {got}"
        );
    }

    #[test]
    fn cycle_losses_match_a_hand_loop_oracle() {
        let cfg = tiny_cfg(Mode::MaCyclegan, 34);
        let trainer = Trainer::new(cfg.clone()).unwrap();
        let pool = tiny_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (bx, by) = pool.draw(&mut rng, 2);

        let (got_f, got_b) =
            loss_cycle(&trainer.models.gy, &trainer.models.gx, &bx, &by, &cfg).unwrap();

        // Oracle: compose the public single-volume passes and take plain
        // loops over the data.
        let norm = &cfg.norm;
        let mut sum_f = 0.0;
        let mut n_f = 0usize;
        for x in &bx {
            let fake_y = super::super::model::gy_forward(&trainer.models.gy, x, norm).unwrap();
            let back = super::super::model::gx_forward(&trainer.models.gx, &fake_y, norm).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                sum_f += (a - b).abs();
                n_f += 1;
            }
        }
        let want_f = sum_f / n_f as f64;

        let mut sum_b = 0.0;
        let mut n_b = 0usize;
        for y in &by {
            let up = y.log().unwrap().resample_trilinear(2.0).unwrap();
            let sx = super::super::model::gx_forward(&trainer.models.gx, &up, norm).unwrap();
            let back = super::super::model::gy_forward(&trainer.models.gy, &sx, norm).unwrap();
            for (a, b) in back.data().iter().zip(up.data()) {
                for c in 0..6 {
                    sum_b += (a.d[c] - b.d[c]).abs();
                    n_b += 1;
                }
            }
        }
        let want_b = sum_b / n_b as f64;

        assert!(
            (got_f - want_f).abs() <= 1e-12,
            "forward cycle ℓ1 must match the loop oracle: got {got_f}, want {want_f}"
        );
        assert!(
            (got_b - want_b).abs() <= 1e-12,
            "backward cycle ℓ1 must match the loop oracle: got {got_b}, want {want_b}"
        );
    }

    #[test]
    fn breakdown_recomposes_to_the_exact_graph_total() {
        let cfg = TrainConfig {
            lambda_cyc_x: 2.5,
            lambda_cyc_y: 0.7,
            lambda_gan_x: 1.3,
            lambda_gan_y: 0.4,
            ..tiny_cfg(Mode::MaCyclegan, 35)
        };
        let trainer = Trainer::new(cfg.clone()).unwrap();
        let pool = tiny_pool();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (bx, by) = pool.draw(&mut rng, 2);
        let prep = prepare_batch(&bx, &by, cfg.mode, &cfg.norm, cfg.resample_factor).unwrap();

        let mut tape = Tape::new();
        let mut ids = trainer.models.gy.params.bind_trainable(&mut tape).unwrap();
        ids.append(&mut trainer.models.gx.params.bind_trainable(&mut tape).unwrap());
        ids.append(&mut trainer.models.dy.params.bind_frozen(&mut tape).unwrap());
        ids.append(&mut trainer.models.dx.params.bind_frozen(&mut tape).unwrap());
        let nodes = batch_nodes(&mut tape, &prep).unwrap();
        let g = build_generator_objective(&mut tape, &trainer.models, &ids, &nodes, &cfg).unwrap();

        let breakdown = LossBreakdown {
            gan_x: tape.scalar_value(g.gan_x).unwrap(),
            gan_y: tape.scalar_value(g.gan_y).unwrap(),
            cyc_forward: tape.scalar_value(g.cyc_forward).unwrap(),
            cyc_backward: tape.scalar_value(g.cyc_backward).unwrap(),
            critic_x: 0.0,
            critic_y: 0.0,
        };
        let total = tape.scalar_value(g.loss).unwrap();
        assert_eq!(
            breakdown.generator_total(&cfg),
            total,
            "the recorded terms must recompose bit-exactly to the graph total"
        );
    }

    #[test]
    fn zero_lambdas_leave_generators_bitwise_untouched() {
        let cfg = TrainConfig {
            lambda_cyc_x: 0.0,
            lambda_cyc_y: 0.0,
            lambda_gan_x: 0.0,
            lambda_gan_y: 0.0,
            ..tiny_cfg(Mode::MaCyclegan, 36)
        };
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let before_gy: Vec<Vec<f64>> =
            trainer.models.gy.params.iter().map(|(_, t)| t.data().to_vec()).collect();
        let before_gx: Vec<Vec<f64>> =
            trainer.models.gx.params.iter().map(|(_, t)| t.data().to_vec()).collect();

        let pool = tiny_pool();
        let (bx, by) = trainer.draw_from(&pool);
        train_step(&mut trainer, &bx, &by).unwrap();

        for ((_, t), before) in trainer.models.gy.params.iter().zip(&before_gy) {
            assert_eq!(t.data(), before.as_slice(), "zero-weight objective must not move G_Y");
        }
        for ((_, t), before) in trainer.models.gx.params.iter().zip(&before_gx) {
            assert_eq!(t.data(), before.as_slice(), "zero-weight objective must not move G_X");
        }
        // Critics still trained on their own loss, but stay inside the clip
        // bound.
        for critic in [&trainer.models.dy, &trainer.models.dx] {
            for (name, t) in critic.params.iter() {
                for v in t.data() {
                    assert!(
                        v.abs() <= cfg.clip + 1e-15,
                        "{name} escaped the clip bound: {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn ma_gan_mode_freezes_gx_and_skips_cycle_terms() {
        let cfg = tiny_cfg(Mode::MaGan, 37);
        let mut trainer = Trainer::new(cfg).unwrap();
        let before_gx: Vec<Vec<f64>> =
            trainer.models.gx.params.iter().map(|(_, t)| t.data().to_vec()).collect();
        let before_gy: Vec<Vec<f64>> =
            trainer.models.gy.params.iter().map(|(_, t)| t.data().to_vec()).collect();

        let pool = tiny_pool();
        let (bx, by) = trainer.draw_from(&pool);
        let losses = train_step(&mut trainer, &bx, &by).unwrap();

        assert_eq!(losses.cyc_forward, 0.0, "MA_GAN drops the forward cycle");
        assert_eq!(losses.cyc_backward, 0.0, "MA_GAN drops the backward cycle");
        for ((_, t), before) in trainer.models.gx.params.iter().zip(&before_gx) {
            assert_eq!(t.data(), before.as_slice(), "MA_GAN must not update G_X");
        }
        let gy_moved = trainer
            .models
            .gy
            .params
            .iter()
            .zip(&before_gy)
            .any(|((_, t), b)| t.data() != b.as_slice());
        assert!(gy_moved, "G_Y must still receive adversarial gradient in MA_GAN");
    }

    #[test]
    fn nan_poisoned_weights_abort_with_a_named_term() {
        let cfg = tiny_cfg(Mode::MaCyclegan, 38);
        let mut trainer = Trainer::new(cfg).unwrap();
        trainer.models.dy.params.get_mut("dy.stem.w").unwrap().data_mut()[0] = f64::NAN;
        let pool = tiny_pool();
        let (bx, by) = trainer.draw_from(&pool);
        match train_step(&mut trainer, &bx, &by) {
            Err(GanError::NonFiniteLoss { term, step }) => {
                assert!(
                    term.contains("critic_y"),
                    "diagnostic must name the poisoned term, got {term:?}"
                );
                assert_eq!(step, 1, "the abort happens on the first step");
            }
            other => panic!("poisoned weights must abort training, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let run = |tag: &str| -> (Vec<LossBreakdown>, Vec<u8>) {
            let cfg = tiny_cfg(Mode::MaCyclegan, 39);
            let mut trainer = Trainer::new(cfg).unwrap();
            let pool = tiny_pool();
            let mut losses = Vec::new();
            for _ in 0..3 {
                let (bx, by) = trainer.draw_from(&pool);
                losses.push(train_step(&mut trainer, &bx, &by).unwrap());
            }
            let path = dir.path().join(format!("{tag}.mack"));
            save_checkpoint(&path, &trainer).unwrap();
            (losses, std::fs::read(&path).unwrap())
        };
        let (la, ba) = run("a");
        let (lb, bb) = run("b");
        assert_eq!(la, lb, "equal seeds must reproduce every loss bit-for-bit");
        assert_eq!(ba, bb, "equal seeds must reproduce identical checkpoint bytes");
    }

    #[test]
    fn checkpoints_round_trip_and_resume_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(Mode::MaCyclegan, 40);
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let pool = tiny_pool();
        for _ in 0..2 {
            let (bx, by) = trainer.draw_from(&pool);
            train_step(&mut trainer, &bx, &by).unwrap();
        }
        let a = dir.path().join("ck.mack");
        save_checkpoint(&a, &trainer).unwrap();
        assert!(
            a.with_extension("mack.txt").exists(),
            "a UTF-8 config echo must sit beside the checkpoint"
        );

        let mut loaded = load_checkpoint(&a, &cfg).unwrap();
        assert_eq!(loaded.step, trainer.step);
        let b = dir.path().join("ck2.mack");
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "write → read → write must be bit-identical"
        );

        // Both trainers produce the same losses on the same explicit batch.
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let (bx, by) = pool.draw(&mut rng, 2);
        let l_orig = train_step(&mut trainer, &bx, &by).unwrap();
        let l_load = train_step(&mut loaded, &bx, &by).unwrap();
        assert_eq!(l_orig, l_load, "a loaded trainer must continue identically");

        // Mode mismatch is refused.
        let wrong = TrainConfig { mode: Mode::PlainCyclegan, ..cfg.clone() };
        assert!(matches!(load_checkpoint(&a, &wrong), Err(GanError::Checkpoint(_))));
        // Architecture mismatch is refused.
        let narrower = TrainConfig { critic_base: 4, ..cfg };
        assert!(matches!(load_checkpoint(&a, &narrower), Err(GanError::Checkpoint(_))));
    }

    #[test]
    fn pretraining_overfits_one_pair_and_zero_epochs_change_nothing() {
        let cfg = TrainConfig { lr: 3e-3, batch: 1, ..tiny_cfg(Mode::MaCyclegan, 41) };
        let mut trainer = Trainer::new(cfg).unwrap();

        let x = ScalarField::constant((8, 8, 8), [1.0; 3], 0.6);
        let y = TensorField::constant(
            (4, 4, 4),
            [2.0; 3],
            Domain::Manifold,
            SymMat3::from_diag(1.2, 0.9, 1.1),
        );
        let pairs = vec![(&x, &y)];

        let before: Vec<Vec<f64>> =
            trainer.models.gy.params.iter().map(|(_, t)| t.data().to_vec()).collect();
        let none = pretrain_paired(&mut trainer, &pairs, 0).unwrap();
        assert!(none.is_empty());
        for ((_, t), b) in trainer.models.gy.params.iter().zip(&before) {
            assert_eq!(t.data(), b.as_slice(), "zero epochs must not touch parameters");
        }

        let history = pretrain_paired(&mut trainer, &pairs, 400).unwrap();
        let (gy0, gx0) = history[0];
        let (gy_end, gx_end) = *history.last().unwrap();
        assert!(
            gy_end <= 0.05 * gy0,
            "400 supervised epochs must overfit G_Y on one pair: {gy0} → {gy_end}"
        );
        assert!(
            gx_end <= 0.05 * gx0,
            "400 supervised epochs must overfit G_X on one pair: {gx0} → {gx_end}"
        );
    }

    #[test]
    fn log_lines_carry_every_field() {
        let l = LossBreakdown {
            gan_x: 0.5,
            gan_y: -0.25,
            cyc_forward: 0.125,
            cyc_backward: 0.0625,
            critic_x: 1.0,
            critic_y: -1.0,
        };
        let line = l.log_line(42, Mode::MaCyclegan, 7, 1e-4);
        for needle in [
            "step=42",
            "mode=MA_CYCLEGAN",
            "seed=7",
            "gan_x=",
            "gan_y=",
            "cyc_forward=",
            "cyc_backward=",
            "critic_x=",
            "critic_y=",
            "lr=",
        ] {
            assert!(line.contains(needle), "log line must contain {needle:?}: {line}");
        }
    }

    #[test]
    fn whole_objective_gradients_match_central_differences() {
        let reports = composite_gradchecks(1e-4, false).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!(
                r.coords_checked >= 200,
                "{} must sample at least 200 coordinates, got {}",
                r.name,
                r.coords_checked
            );
            assert!(
                r.passed,
                "{} failed: max rel err {:.3e} at {:?}",
                r.name, r.max_rel_err, r.worst_coord
            );
        }
    }

    #[test]
    fn corrupted_backward_is_caught_by_the_composite_check() {
        let reports = composite_gradchecks(1e-4, true).unwrap();
        assert!(
            reports.iter().any(|r| !r.passed),
            "a deliberately corrupted sigmoid backward must fail at least one composite check"
        );
    }
}
