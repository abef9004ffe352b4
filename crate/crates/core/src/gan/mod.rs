//! Wasserstein CycleGAN for unpaired structural-to-diffusion synthesis.
//!
//! Two generators translate between domains — `G_Y` maps a structural patch
//! to a tangent-space diffusion tensor patch at twice the input resolution
//! of the acquired data, `G_X` maps an (upsampled) tangent patch back to a
//! structural patch — while two weight-clipped critics score each domain.
//! In the manifold-aware modes all diffusion data passes through the matrix
//! logarithm first, so every linear operation (resampling, averaging,
//! network arithmetic) happens in a vector space and the matrix exponential
//! returns results to SPD(3) by construction. `PLAIN_CYCLEGAN` skips the
//! log/exp projections and treats the six tensor components as ordinary
//! image channels, which is exactly the baseline that loses positive
//! definiteness.
//!
//! The module is organized as:
//! * [`data`]: normalization and field↔tensor batch plumbing,
//! * [`model`]: U-Net generators and residual critics built on the
//!   reverse-mode tape, plus single-volume forward passes,
//! * [`train`]: the adversarial losses, `train_step`, paired pre-training,
//!   and checkpointing,
//! * [`synth`]: patch-wise full-volume synthesis.

mod data;
mod model;
mod synth;
mod train;

pub use data::{fit_norm, NormMap, PatchPool};
pub use model::{gx_forward, gy_forward, Critic, CriticSpec, Generator, GeneratorRole, GeneratorSpec, Head};
pub use synth::{synthesize_hr, Synthesis};
pub use train::{
    composite_gradchecks, load_checkpoint, loss_cycle, loss_gan_x, loss_gan_y, pretrain_paired,
    save_checkpoint, train_step, LossBreakdown, Trainer,
};

use crate::field::{Domain, FieldError};
use crate::nn::NnError;
use crate::spd::SpdError;

/// Errors from model construction, training, and synthesis.
#[derive(Debug, thiserror::Error)]
pub enum GanError {
    /// Tensor or batch shapes that cannot be wired together.
    #[error("shape error: {0}")]
    Shape(String),

    /// A field arrived in the wrong domain (e.g. manifold data where a
    /// tangent projection was required).
    #[error("domain error: expected {want:?} data, got {got:?}")]
    Domain { want: Domain, got: Domain },

    /// A loss evaluated to NaN/∞. Training aborts rather than continuing
    /// with poisoned weights; the diagnostic names the term and step.
    #[error("non-finite loss in {term} at step {step}: training aborted")]
    NonFiniteLoss { term: String, step: u64 },

    /// Invalid configuration (weights, patch sizes, factors).
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint contents that don't match the expected architecture.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Field(#[from] FieldError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Spd(#[from] SpdError),
}

/// Training mode: the two manifold-aware variants and the naive baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full manifold-aware Wasserstein CycleGAN (log/exp projections, both
    /// cycle terms).
    MaCyclegan,
    /// Manifold-aware adversarial training without cycle consistency: the
    /// cycle terms and `G_X`'s generator gradient are dropped.
    MaGan,
    /// CycleGAN on raw tensor components without any manifold projection.
    PlainCyclegan,
}

impl Mode {
    /// Canonical config/log spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MaCyclegan => "MA_CYCLEGAN",
            Mode::MaGan => "MA_GAN",
            Mode::PlainCyclegan => "PLAIN_CYCLEGAN",
        }
    }

    /// Whether diffusion data is projected through log/exp.
    pub fn manifold_aware(self) -> bool {
        !matches!(self, Mode::PlainCyclegan)
    }

    /// Whether the cycle-consistency terms are part of the objective.
    pub fn uses_cycle(self) -> bool {
        !matches!(self, Mode::MaGan)
    }
}

impl std::str::FromStr for Mode {
    type Err = GanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MA_CYCLEGAN" => Ok(Mode::MaCyclegan),
            "MA_GAN" => Ok(Mode::MaGan),
            "PLAIN_CYCLEGAN" => Ok(Mode::PlainCyclegan),
            other => Err(GanError::Config(format!(
                "unknown mode {other:?}; expected MA_CYCLEGAN, MA_GAN, or PLAIN_CYCLEGAN"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a training run needs to know, with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the forward cycle ‖G_X(G_Y(x)) − x‖₁.
    pub lambda_cyc_x: f64,
    /// Weight of the backward cycle ‖G_Y(G_X(ŷ)) − ŷ‖₁.
    pub lambda_cyc_y: f64,
    /// Weight of the adversarial term on the structural domain.
    pub lambda_gan_x: f64,
    /// Weight of the adversarial term on the diffusion domain.
    pub lambda_gan_y: f64,
    /// Critic weight-clipping bound `c` (weights live in `[-c, c]`).
    pub clip: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Patches per batch.
    pub batch: usize,
    /// Passes over the patch pool (drives the plateau scheduler cadence).
    pub epochs: usize,
    /// Adam learning rate for all four networks.
    pub lr: f64,
    /// Structural patch edge; must be divisible by `2^gen_depth`.
    pub patch: usize,
    /// Super-resolution factor between acquired diffusion and structural
    /// grids. Only 2 is supported.
    pub resample_factor: usize,
    /// Which objective variant to train.
    pub mode: Mode,
    /// Seed for parameter initialization and batch draws.
    pub seed: u64,
    /// Tangent-component normalization (see [`NormMap`]).
    pub norm: NormMap,
    /// Generator U-Net depth (number of downsamplings).
    pub gen_depth: usize,
    /// Generator channels at the first encoder level.
    pub gen_base: usize,
    /// Critic stage count (each stage halves resolution).
    pub critic_stages: usize,
    /// Residual blocks per critic stage.
    pub critic_blocks: usize,
    /// Critic channels after the stem.
    pub critic_base: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_cyc_x: 3.0,
            lambda_cyc_y: 1.0,
            lambda_gan_x: 1.0,
            lambda_gan_y: 1.0,
            clip: 0.01,
            n_critic: 5,
            batch: 4,
            epochs: 4,
            lr: 1e-4,
            patch: 16,
            resample_factor: 2,
            mode: Mode::MaCyclegan,
            seed: 7,
            norm: NormMap::identity(),
            gen_depth: 3,
            gen_base: 4,
            critic_stages: 3,
            critic_blocks: 2,
            critic_base: 4,
        }
    }
}

impl TrainConfig {
    /// Checks the invariants every other entry point relies on.
    pub fn validate(&self) -> Result<(), GanError> {
        for (name, v) in [
            ("lambda_cyc_x", self.lambda_cyc_x),
            ("lambda_cyc_y", self.lambda_cyc_y),
            ("lambda_gan_x", self.lambda_gan_x),
            ("lambda_gan_y", self.lambda_gan_y),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(GanError::Config(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(GanError::Config(format!(
                "clip must be finite and > 0, got {}",
                self.clip
            )));
        }
        if self.n_critic == 0 {
            return Err(GanError::Config("n_critic must be ≥ 1".into()));
        }
        if self.batch == 0 {
            return Err(GanError::Config("batch must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(GanError::Config(format!(
                "lr must be finite and > 0, got {}",
                self.lr
            )));
        }
        if self.resample_factor != 2 {
            return Err(GanError::Config(format!(
                "resample_factor must be 2, got {}",
                self.resample_factor
            )));
        }
        if self.gen_depth == 0 || self.gen_base == 0 {
            return Err(GanError::Config(
                "generator depth and base channels must be ≥ 1".into(),
            ));
        }
        if self.critic_stages == 0 || self.critic_blocks == 0 || self.critic_base == 0 {
            return Err(GanError::Config(
                "critic stages, blocks, and base channels must be ≥ 1".into(),
            ));
        }
        let div = 1usize << self.gen_depth;
        if self.patch == 0 || self.patch % div != 0 {
            return Err(GanError::Config(format!(
                "patch edge {} must be divisible by 2^depth = {div}",
                self.patch
            )));
        }
        // The diffusion-side patch must itself survive the U-Net (the
        // backward cycle runs G_Y on upsampled G_X output at full patch
        // size, so only the structural edge constrains depth) and the
        // resampling.
        if self.patch % (2 * self.resample_factor) != 0 {
            return Err(GanError::Config(format!(
                "patch edge {} must be divisible by 2·resample_factor = {}",
                self.patch,
                2 * self.resample_factor
            )));
        }
        Ok(())
    }

    /// Generator specification for `G_Y` under this config.
    pub fn gy_spec(&self) -> GeneratorSpec {
        GeneratorSpec::struct_to_dti(self.gen_depth, self.gen_base)
    }

    /// Generator specification for `G_X` under this config.
    pub fn gx_spec(&self) -> GeneratorSpec {
        GeneratorSpec::dti_to_struct(self.gen_depth, self.gen_base)
    }

    /// Critic specification for `D_X` (structural domain).
    pub fn dx_spec(&self) -> CriticSpec {
        CriticSpec::for_structural(self.critic_stages, self.critic_blocks, self.critic_base)
    }

    /// Critic specification for `D_Y` (tangent diffusion domain).
    pub fn dy_spec(&self) -> CriticSpec {
        CriticSpec::for_tangent(self.critic_stages, self.critic_blocks, self.critic_base)
    }
}

/// The four networks of one run.
#[derive(Debug, Clone)]
pub struct Models {
    /// Structural → tangent-diffusion generator.
    pub gy: Generator,
    /// Tangent-diffusion → structural generator.
    pub gx: Generator,
    /// Critic on the tangent diffusion domain.
    pub dy: Critic,
    /// Critic on the structural domain.
    pub dx: Critic,
}
