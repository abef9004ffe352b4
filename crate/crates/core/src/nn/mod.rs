//! Minimal dependency-free neural-network stack: a 5-D tensor container,
//! reverse-mode autodiff over a fixed op set, Adam with weight clipping and
//! plateau scheduling, deterministic checkpoints, and a finite-difference
//! gradient checker.
//!
//! Tensors are `(batch, channels, x, y, z)` in f64 with x fastest, matching
//! the volume layout in [`crate::field`], so a `(1, 1, nx, ny, nz)` tensor
//! and a scalar field share bytes. Everything is seeded and single-threaded:
//! two runs with the same seed produce bit-identical parameters, losses, and
//! checkpoint files.

mod checkpoint;
mod conv;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{read_mack, write_mack, MackEntry};
pub use gradcheck::{check_graph, standard_primitive_checks, GradCheckConfig, GradCheckReport};
pub use optim::{adam_step, clip_weights, AdamState, Params, PlateauSchedule};
pub use tape::{Grads, NodeId, Tape};
pub use tensor::{Shape5, Tensor5};

use rand::Rng;

/// Errors from graph construction, training numerics, or checkpoint I/O.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    /// Operand shapes are incompatible with the requested op.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Factor-2 downsampling needs even spatial extents.
    #[error("{op} requires even spatial dims, got {dims:?}")]
    OddDimension { op: &'static str, dims: (usize, usize, usize) },
    /// `backward` was asked to differentiate a non-scalar node.
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalarLoss { shape: Shape5 },
    /// An op produced NaN or ±∞ — reported at the first bad intermediate.
    #[error("non-finite values in {op}")]
    NonFinite { op: String },
    /// Graph misuse (duplicate parameter names and similar).
    #[error("graph error: {0}")]
    Graph(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed checkpoint bytes.
    #[error("checkpoint format error: {0}")]
    Format(String),
}

/// He-uniform initialization for a conv kernel: uniform on ±√(6 / fan_in)
/// with fan_in = in_channels · k³.
pub fn he_uniform_conv<R: Rng>(
    rng: &mut R,
    out_channels: usize,
    in_channels: usize,
    k: usize,
) -> Tensor5 {
    let fan_in = (in_channels * k * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let shape = [out_channels, in_channels, k, k, k];
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor5::from_vec(shape, data).expect("generated data matches shape")
}

/// Zero bias tensor for `out_channels` output channels.
pub fn zero_bias(out_channels: usize) -> Tensor5 {
    Tensor5::zeros([1, out_channels, 1, 1, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_uniform_respects_its_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = he_uniform_conv(&mut rng, 8, 4, 3);
        assert_eq!(w.shape(), [8, 4, 3, 3, 3]);
        let bound = (6.0f64 / (4.0 * 27.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        // Same seed, same weights — bit for bit.
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let w2 = he_uniform_conv(&mut rng2, 8, 4, 3);
        assert_eq!(w.data(), w2.data());
        // Spread should fill a good part of the interval, not cluster at 0.
        let max = w.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max > 0.8 * bound, "max |w| = {max}, bound = {bound}");
    }

    #[test]
    fn zero_bias_shape() {
        let b = zero_bias(5);
        assert_eq!(b.shape(), [1, 5, 1, 1, 1]);
        assert!(b.data().iter().all(|&v| v == 0.0));
    }
}
