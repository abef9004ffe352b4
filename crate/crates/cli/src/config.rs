//! The `key = value` configuration document.
//!
//! A config file has four sections — `[data]`, `[model]`, `[train]`,
//! `[eval]` — holding every phantom, architecture, optimization, and
//! evaluation knob. Blank lines and `#` comments are ignored. Keys may be
//! omitted (their defaults apply), but unknown keys, unknown sections,
//! duplicate keys, and malformed values are rejected with the line and
//! column of the offending token.
//!
//! [`Config::to_text`] emits the canonical serialized form: every key with
//! its current value, one comment line of documentation each. Parsing a
//! serialized document reproduces the `Config` exactly — floats print with
//! shortest-round-trip formatting — so `parse → serialize → parse` is the
//! identity.

use std::fmt;
use std::str::FromStr;

use dtisynth_core::gan::{Mode, TrainConfig};
use dtisynth_core::phantom::{Bundle, PhantomSpec};

use crate::error::CliError;

/// How the tangent-space normalization map is chosen before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Leave components as they are (the generators' native [−1, 1] range
    /// must already cover the data).
    Identity,
    /// Fit a per-channel affine map on the training diffusion volume; stays
    /// the exact identity when the data already fits in [−1, 1].
    #[default]
    Fit,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Identity => "identity",
            Normalization::Fit => "fit",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Normalization::Identity),
            "fit" => Ok(Normalization::Fit),
            other => Err(format!("expected identity or fit, got {other:?}")),
        }
    }
}

/// Everything the CLI commands need, with [`Default`] as the desk-scale
/// reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// `[data]` — the synthetic phantom.
    pub phantom: PhantomSpec,
    /// `[model]` + `[train]` — architecture and optimization.
    pub train: TrainConfig,
    /// Optimizer steps per epoch (the plateau scheduler observes once per
    /// epoch); total steps = `epochs × steps_per_epoch`.
    pub steps_per_epoch: usize,
    /// Supervised warm-start epochs over the colocated patch pairs before
    /// adversarial training (0 = none).
    pub pretrain_epochs: usize,
    /// Normalization policy applied to the diffusion volume.
    pub normalization: Normalization,
    /// `[eval]` — mean-diffusivity threshold defining the evaluation mask
    /// (0 keeps every voxel with positive MD).
    pub md_threshold: f64,
    /// Write mid-slice PGM dumps of the FA and cosine maps alongside
    /// evaluation reports.
    pub slices: bool,
    /// Training seeds swept by the ablation command.
    pub seeds: Vec<u64>,
    /// Phantom seed for the held-out evaluation volume.
    pub holdout_seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            phantom: PhantomSpec::default(),
            train: TrainConfig::default(),
            steps_per_epoch: 50,
            pretrain_epochs: 0,
            normalization: Normalization::Fit,
            md_threshold: 0.0,
            slices: false,
            seeds: vec![1, 2, 3],
            holdout_seed: 1007,
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Canonical serialized form: all four sections, every key, one
    /// documentation comment per key.
    pub fn to_text(&self) -> String {
        let p = &self.phantom;
        let t = &self.train;
        let mut s = String::new();
        let mut line = |text: &str| {
            s.push_str(text);
            s.push('\n');
        };

        line("[data]");
        line("# Phantom volume dims, voxels.");
        line(&format!("dims = {},{},{}", p.dims.0, p.dims.1, p.dims.2));
        line("# Seed for the structural noise.");
        line(&format!("seed = {}", p.seed));
        line("# Fiber bundles: line(px,py,pz,dx,dy,dz,radius,fa,md) or");
        line("# arc(cx,cy,cz,r,theta0,theta1,radius,fa,md); repeat the key for");
        line("# several bundles, or write `bundle = none` for an empty phantom.");
        if p.bundles.is_empty() {
            line("bundle = none");
        } else {
            for b in &p.bundles {
                line(&format!("bundle = {b}"));
            }
        }
        line("# Mean diffusivity of the isotropic background.");
        line(&format!("background_md = {}", p.background_md));
        line("# Structural intensity of background tissue, in [0, 1].");
        line(&format!("background_intensity = {}", p.background_intensity));
        line("# Structural intensity inside bundles, in [0, 1].");
        line(&format!("bundle_intensity = {}", p.bundle_intensity));
        line("# Standard deviation of the additive structural noise.");
        line(&format!("noise_sigma = {}", p.noise_sigma));
        line("");

        line("[model]");
        line("# Generator U-Net depth (downsampling levels).");
        line(&format!("gen_depth = {}", t.gen_depth));
        line("# Generator channels at the first encoder level.");
        line(&format!("gen_base_channels = {}", t.gen_base));
        line("# Critic stages (each halves resolution).");
        line(&format!("critic_stages = {}", t.critic_stages));
        line("# Residual blocks per critic stage.");
        line(&format!("critic_blocks = {}", t.critic_blocks));
        line("# Critic channels after the stem.");
        line(&format!("critic_base_channels = {}", t.critic_base));
        line("");

        line("[train]");
        line("# Objective variant: MA_CYCLEGAN | MA_GAN | PLAIN_CYCLEGAN.");
        line(&format!("mode = {}", t.mode));
        line("# Seed for parameter initialization and batch draws.");
        line(&format!("seed = {}", t.seed));
        line("# Forward-cycle weight.");
        line(&format!("lambda_cyc_x = {}", t.lambda_cyc_x));
        line("# Backward-cycle weight.");
        line(&format!("lambda_cyc_y = {}", t.lambda_cyc_y));
        line("# Adversarial weight, structural domain.");
        line(&format!("lambda_gan_x = {}", t.lambda_gan_x));
        line("# Adversarial weight, diffusion domain.");
        line(&format!("lambda_gan_y = {}", t.lambda_gan_y));
        line("# Critic weight-clipping bound.");
        line(&format!("clip = {}", t.clip));
        line("# Critic updates per generator update.");
        line(&format!("n_critic = {}", t.n_critic));
        line("# Patches per batch.");
        line(&format!("batch = {}", t.batch));
        line("# Adam learning rate for all four networks.");
        line(&format!("lr = {}", t.lr));
        line("# Structural patch edge, divisible by 2^gen_depth.");
        line(&format!("patch = {}", t.patch));
        line("# Structural-to-diffusion grid factor (only 2 is supported).");
        line(&format!("resample_factor = {}", t.resample_factor));
        line("# Epochs (the plateau scheduler observes once per epoch).");
        line(&format!("epochs = {}", t.epochs));
        line("# Optimizer steps per epoch.");
        line(&format!("steps_per_epoch = {}", self.steps_per_epoch));
        line("# Supervised warm-start epochs over paired patches (0 = none).");
        line(&format!("pretrain_epochs = {}", self.pretrain_epochs));
        line("# Tangent-component normalization: identity | fit.");
        line(&format!("normalization = {}", self.normalization));
        line("");

        line("[eval]");
        line("# Mean-diffusivity threshold for the evaluation mask.");
        line(&format!("md_threshold = {}", self.md_threshold));
        line("# Write PGM mid-slice dumps next to evaluation reports.");
        line(&format!("slices = {}", self.slices));
        line("# Training seeds swept by `ablate`.");
        line(&format!("seeds = {}", join(&self.seeds)));
        line("# Phantom seed for the held-out evaluation volume.");
        line(&format!("holdout_seed = {}", self.holdout_seed));
        s
    }

    /// Parses a config document on top of the defaults.
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        let mut section: Option<&str> = None;
        let mut seen: Vec<(String, String)> = Vec::new();
        let mut bundles_replaced = false;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let col_of = |needle: &str| raw.find(needle).unwrap_or(0) + 1;
            let fail = |col: usize, msg: String| -> CliError {
                CliError::Config(format!("config line {lineno}, column {col}: {msg}"))
            };

            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| fail(col_of("["), "unterminated section header".into()))?;
                match name {
                    "data" | "model" | "train" | "eval" => {
                        section = Some(match name {
                            "data" => "data",
                            "model" => "model",
                            "train" => "train",
                            _ => "eval",
                        });
                    }
                    other => {
                        return Err(fail(col_of("["), format!("unknown section [{other}]")));
                    }
                }
                continue;
            }

            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| fail(col_of(trimmed), "expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim();
            let key_col = col_of(key);
            let value_col = if value.is_empty() { raw.len() + 1 } else { col_of(value) };
            let sec = section
                .ok_or_else(|| fail(key_col, format!("key `{key}` before any [section]")))?;

            if key != "bundle" {
                if seen.iter().any(|(s, k)| s == sec && k == key) {
                    return Err(fail(key_col, format!("duplicate key `{key}` in [{sec}]")));
                }
                seen.push((sec.to_string(), key.to_string()));
            }

            // Typed value parsers, all reporting the value's column.
            macro_rules! val {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| {
                        fail(value_col, format!("bad value for `{key}`: {e}"))
                    })
                };
            }
            let list_u64 = || -> Result<Vec<u64>, CliError> {
                value
                    .split(',')
                    .map(|t| t.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| fail(value_col, format!("bad value for `{key}`: {e}")))
            };
            let triple = || -> Result<(usize, usize, usize), CliError> {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| fail(value_col, format!("bad value for `{key}`: {e}")))?;
                if parts.len() != 3 {
                    return Err(fail(
                        value_col,
                        format!("`{key}` needs three comma-separated values"),
                    ));
                }
                Ok((parts[0], parts[1], parts[2]))
            };

            match (sec, key) {
                ("data", "dims") => cfg.phantom.dims = triple()?,
                ("data", "seed") => cfg.phantom.seed = val!(u64)?,
                ("data", "bundle") => {
                    if !bundles_replaced {
                        cfg.phantom.bundles.clear();
                        bundles_replaced = true;
                    }
                    if value != "none" {
                        let b: Bundle = value.parse().map_err(|e| {
                            fail(value_col, format!("bad value for `bundle`: {e}"))
                        })?;
                        cfg.phantom.bundles.push(b);
                    } else if !cfg.phantom.bundles.is_empty() {
                        return Err(fail(
                            value_col,
                            "`bundle = none` cannot be mixed with bundle descriptors".into(),
                        ));
                    }
                }
                ("data", "background_md") => cfg.phantom.background_md = val!(f64)?,
                ("data", "background_intensity") => {
                    cfg.phantom.background_intensity = val!(f64)?
                }
                ("data", "bundle_intensity") => cfg.phantom.bundle_intensity = val!(f64)?,
                ("data", "noise_sigma") => cfg.phantom.noise_sigma = val!(f64)?,

                ("model", "gen_depth") => cfg.train.gen_depth = val!(usize)?,
                ("model", "gen_base_channels") => cfg.train.gen_base = val!(usize)?,
                ("model", "critic_stages") => cfg.train.critic_stages = val!(usize)?,
                ("model", "critic_blocks") => cfg.train.critic_blocks = val!(usize)?,
                ("model", "critic_base_channels") => cfg.train.critic_base = val!(usize)?,

                ("train", "mode") => {
                    cfg.train.mode = value.parse::<Mode>().map_err(|e| {
                        fail(value_col, format!("bad value for `mode`: {e}"))
                    })?
                }
                ("train", "seed") => cfg.train.seed = val!(u64)?,
                ("train", "lambda_cyc_x") => cfg.train.lambda_cyc_x = val!(f64)?,
                ("train", "lambda_cyc_y") => cfg.train.lambda_cyc_y = val!(f64)?,
                ("train", "lambda_gan_x") => cfg.train.lambda_gan_x = val!(f64)?,
                ("train", "lambda_gan_y") => cfg.train.lambda_gan_y = val!(f64)?,
                ("train", "clip") => cfg.train.clip = val!(f64)?,
                ("train", "n_critic") => cfg.train.n_critic = val!(usize)?,
                ("train", "batch") => cfg.train.batch = val!(usize)?,
                ("train", "lr") => cfg.train.lr = val!(f64)?,
                ("train", "patch") => cfg.train.patch = val!(usize)?,
                ("train", "resample_factor") => cfg.train.resample_factor = val!(usize)?,
                ("train", "epochs") => cfg.train.epochs = val!(usize)?,
                ("train", "steps_per_epoch") => cfg.steps_per_epoch = val!(usize)?,
                ("train", "pretrain_epochs") => cfg.pretrain_epochs = val!(usize)?,
                ("train", "normalization") => {
                    cfg.normalization = value.parse::<Normalization>().map_err(|e| {
                        fail(value_col, format!("bad value for `normalization`: {e}"))
                    })?
                }

                ("eval", "md_threshold") => cfg.md_threshold = val!(f64)?,
                ("eval", "slices") => cfg.slices = val!(bool)?,
                ("eval", "seeds") => cfg.seeds = list_u64()?,
                ("eval", "holdout_seed") => cfg.holdout_seed = val!(u64)?,

                (sec, key) => {
                    return Err(fail(key_col, format!("unknown key `{key}` in [{sec}]")));
                }
            }
        }
        Ok(cfg)
    }

    /// Reads and parses a config file; `None` yields the defaults.
    pub fn load(path: Option<&std::path::Path>) -> Result<Config, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Io(format!("cannot read config {}: {e}", p.display()))
                })?;
                Config::parse(&text)
            }
        }
    }
}
