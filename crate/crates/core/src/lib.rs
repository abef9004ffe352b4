//! Manifold-aware synthesis of diffusion-tensor volumes from structural MRI.
//!
//! This crate implements the full pipeline behind the `dtisynth` CLI:
//!
//! - [`spd`] — Log-Euclidean SPD(3) math: a cyclic Jacobi eigensolver and the
//!   `log_id`/`exp_id` maps between the tensor manifold and its tangent plane
//!   at the identity. Generic over the scalar type; the rest of the crate
//!   uses the `f64` aliases exported below.
//! - [`field`] — volumetric containers for scalar and tensor data, tangent-
//!   space trilinear resampling, patch extraction/stitching, and the TFV file
//!   format.
//! - [`metrics`] — fractional anisotropy, mean diffusivity, principal
//!   directions, and the three-metric evaluation report.
//! - [`nn`] — a minimal reverse-mode autodiff tape with the 3D layer set
//!   needed here (convolution, resampling, activations), Adam, weight
//!   clipping, a reduce-on-plateau schedule, and the MACK checkpoint format.
//! - [`gan`] — generators, critics, the Wasserstein + cycle-consistency
//!   objective with its ablation modes, paired pretraining, the training
//!   loop, and full-volume synthesis.
//! - [`phantom`] — seeded synthetic fiber phantoms with analytically known
//!   geometry, used as ground truth throughout the test suite.
//!
//! Everything is deterministic by construction: all randomness flows from
//! explicit seeds, and repeated runs produce bit-identical artifacts.

pub mod field;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod scalar;
pub mod spd;

/// Symmetric 3×3 matrix at the crate's working precision.
pub type SymMat3 = spd::SymMat3<f64>;
/// Eigendecomposition of a [`SymMat3`].
pub type EigDecomp3 = spd::EigDecomp3<f64>;
/// Dense 3×3 matrix at the crate's working precision.
pub type Mat3 = spd::Mat3<f64>;
