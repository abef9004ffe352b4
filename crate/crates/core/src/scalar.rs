//! Floating-point scalar abstraction for the math kernel.
//!
//! The SPD(3) routines in [`crate::spd`] are written against this trait so
//! they can be instantiated at `f32` or `f64`. The rest of the toolkit —
//! volumes, file formats, networks — deliberately works at `f64` only (file
//! payloads are 64-bit and the advertised tolerances assume it); concrete
//! aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the SPD(3) kernel.
///
/// The associated constants pin the numerical envelope per precision; they
/// are part of each implementation's contract rather than free parameters.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + 'static
{
    /// Convergence threshold for the cyclic Jacobi eigensolver, applied to
    /// the off-diagonal norm of the max-abs-scaled matrix.
    const JACOBI_TOL: Self;

    /// Floor applied to eigenvalues before taking logarithms. Fitted tensor
    /// data routinely carries tiny negative eigenvalues from noise; anything
    /// in `[-EIG_REJECT_TOL, EIG_CLAMP_FLOOR]` is clamped up to this floor.
    const EIG_CLAMP_FLOOR: Self;

    /// Eigenvalues below `-EIG_REJECT_TOL` mark a tensor as grossly invalid
    /// rather than merely noisy; the log map refuses them.
    const EIG_REJECT_TOL: Self;

    /// Largest eigenvalue accepted by the exponential map before the result
    /// would overflow this precision.
    const EXP_OVERFLOW_LIMIT: Self;

    /// Shorthand for converting an `f64` literal into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }
}

macro_rules! impl_real {
    ($t:ty, $jacobi:expr, $clamp:expr, $reject:expr, $overflow:expr) => {
        impl Real for $t {
            const JACOBI_TOL: $t = $jacobi;
            const EIG_CLAMP_FLOOR: $t = $clamp;
            const EIG_REJECT_TOL: $t = $reject;
            const EXP_OVERFLOW_LIMIT: $t = $overflow;
        }
    };
}

impl_real!(f64, 1e-12, 1e-6, 1e-4, 700.0);
// f32::MAX is ~3.4e38, so exp overflows just above 88; the Jacobi threshold
// sits a little above f32 machine epsilon for the same relative meaning.
impl_real!(f32, 1e-6, 1e-6, 1e-4, 80.0);
