//! Symmetric 3×3 linear algebra and the Log-Euclidean manifold maps.
//!
//! Diffusion tensors are symmetric positive-definite (SPD) 3×3 matrices.
//! The SPD(3) set is not a vector space — averaging or interpolating tensors
//! entrywise can leave it — but it carries the Log-Euclidean structure of
//! Arsigny et al.: the matrix logarithm maps SPD(3) bijectively onto the
//! vector space of symmetric matrices (the tangent plane at the identity),
//! where ordinary linear operations are safe, and the matrix exponential maps
//! back. Both maps diagonalize their argument:
//!
//! ```text
//! log_id(P) = U ln(Σ) Uᵀ      exp_id(S) = U exp(Σ) Uᵀ      with  M = U Σ Uᵀ
//! ```
//!
//! and the Log-Euclidean distance is the Frobenius norm of the difference of
//! logarithms. Everything here is closed-form 3×3 work built on a cyclic
//! Jacobi eigensolver, chosen over analytic root formulas because it stays
//! fully accurate for the near-degenerate spectra of isotropic tensors.
//!
//! All functions are pure and deterministic: identical input bits produce
//! identical output bits, with no dependence on threading or global state.

use thiserror::Error;

use crate::scalar::Real;

/// Dense 3×3 matrix used at the API boundary of [`symmetrize`] and for
/// eigenvector bases.
pub type Mat3<T> = [[T; 3]; 3];

/// Errors raised by the SPD(3) kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpdError {
    /// An input component is NaN or infinite.
    #[error("input contains a non-finite component")]
    NonFinite,
    /// An eigenvalue is too negative to be attributed to numerical noise;
    /// the tensor is not recoverably positive-definite.
    #[error("eigenvalue {0:.6e} is below the clamp rejection threshold; input is not recoverably SPD")]
    NotClampablePD(f64),
    /// An eigenvalue of the exponential-map argument is so large that
    /// `exp` would overflow the scalar type.
    #[error("eigenvalue {0:.6e} exceeds the exponential overflow limit")]
    Overflow(f64),
}

/// Symmetric 3×3 matrix stored as its 6 unique components.
///
/// Component order is `(m11, m22, m33, m12, m13, m23)` — diagonal first,
/// then the upper triangle row by row. The same value type represents both
/// manifold points (SPD tensors) and tangent vectors (arbitrary symmetric
/// matrices); which of the two a value means is tracked by the containing
/// volume's domain tag, not here.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3<T> {
    /// Components in the documented order `(m11, m22, m33, m12, m13, m23)`.
    pub d: [T; 6],
}

/// Index of `m11` in [`SymMat3::d`].
pub const M11: usize = 0;
/// Index of `m22` in [`SymMat3::d`].
pub const M22: usize = 1;
/// Index of `m33` in [`SymMat3::d`].
pub const M33: usize = 2;
/// Index of `m12` in [`SymMat3::d`].
pub const M12: usize = 3;
/// Index of `m13` in [`SymMat3::d`].
pub const M13: usize = 4;
/// Index of `m23` in [`SymMat3::d`].
pub const M23: usize = 5;

impl<T: Real> SymMat3<T> {
    /// Builds a matrix from its six unique components.
    pub fn new(m11: T, m22: T, m33: T, m12: T, m13: T, m23: T) -> Self {
        Self { d: [m11, m22, m33, m12, m13, m23] }
    }

    /// The zero matrix (origin of the tangent plane).
    pub fn zero() -> Self {
        Self { d: [T::zero(); 6] }
    }

    /// The identity matrix (base point of the log/exp maps).
    pub fn identity() -> Self {
        let mut m = Self::zero();
        m.d[M11] = T::one();
        m.d[M22] = T::one();
        m.d[M33] = T::one();
        m
    }

    /// Diagonal matrix `diag(a, b, c)`.
    pub fn from_diag(a: T, b: T, c: T) -> Self {
        let mut m = Self::zero();
        m.d[M11] = a;
        m.d[M22] = b;
        m.d[M33] = c;
        m
    }

    /// Expands to a dense 3×3 matrix, mirroring the off-diagonals.
    pub fn to_mat3(&self) -> Mat3<T> {
        let [m11, m22, m33, m12, m13, m23] = self.d;
        [[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]]
    }

    /// `true` when every component is finite.
    pub fn is_finite(&self) -> bool {
        self.d.iter().all(|x| x.is_finite())
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> T {
        self.d.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
    }

    /// Trace of the matrix.
    pub fn trace(&self) -> T {
        self.d[M11] + self.d[M22] + self.d[M33]
    }

    /// Frobenius norm of the full 3×3 matrix. The off-diagonal components
    /// appear twice in the dense matrix, so they are counted twice here —
    /// a plain 6-vector norm would undercount them.
    pub fn frob_norm(&self) -> T {
        let [m11, m22, m33, m12, m13, m23] = self.d;
        let two = T::of(2.0);
        (m11 * m11
            + m22 * m22
            + m33 * m33
            + two * (m12 * m12 + m13 * m13 + m23 * m23))
            .sqrt()
    }
}

impl<T: Real> std::ops::Add for SymMat3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for (o, r) in out.d.iter_mut().zip(rhs.d.iter()) {
            *o += *r;
        }
        out
    }
}

impl<T: Real> std::ops::Sub for SymMat3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        for (o, r) in out.d.iter_mut().zip(rhs.d.iter()) {
            *o -= *r;
        }
        out
    }
}

impl<T: Real> std::ops::Mul<T> for SymMat3<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        let mut out = self;
        for o in out.d.iter_mut() {
            *o *= rhs;
        }
        out
    }
}

/// Eigendecomposition `M = V Σ Vᵀ` of a symmetric 3×3 matrix.
///
/// Eigenvalues are sorted descending; `eigenvectors` is the orthonormal
/// matrix whose **column** `i` (`eigenvectors[row][i]`) pairs with
/// `eigenvalues[i]`. Output is deterministic: ties are broken by ordering
/// the tied columns lexicographically, and every column's sign is fixed so
/// its first nonzero component is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigDecomp3<T> {
    /// Eigenvalues, `λ1 ≥ λ2 ≥ λ3`.
    pub eigenvalues: [T; 3],
    /// Orthonormal eigenvector matrix; column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Mat3<T>,
}

impl<T: Real> EigDecomp3<T> {
    /// Eigenvector column `i` as a 3-vector.
    pub fn eigenvector(&self, i: usize) -> [T; 3] {
        [
            self.eigenvectors[0][i],
            self.eigenvectors[1][i],
            self.eigenvectors[2][i],
        ]
    }

    /// Reassembles `V f(Σ) Vᵀ` for eigenvalues mapped through `f`. The result
    /// is exactly symmetric by construction.
    fn reassemble(&self, mapped: [T; 3]) -> SymMat3<T> {
        let v = &self.eigenvectors;
        let entry = |r: usize, c: usize| {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += mapped[k] * v[r][k] * v[c][k];
            }
            acc
        };
        SymMat3::new(
            entry(0, 0),
            entry(1, 1),
            entry(2, 2),
            entry(0, 1),
            entry(0, 2),
            entry(1, 2),
        )
    }
}

/// Off-diagonal norm used as the Jacobi convergence measure.
fn off_diagonal_norm<T: Real>(a: &Mat3<T>) -> T {
    (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt()
}

/// Eigendecomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
///
/// Each sweep annihilates the three off-diagonal entries in turn with Givens
/// rotations; the process converges quadratically and, unlike closed-form
/// characteristic-polynomial solvers, loses no accuracy on the nearly
/// degenerate spectra that isotropic tensors produce. The input is scaled by
/// its largest absolute entry first so the convergence threshold
/// ([`Real::JACOBI_TOL`], reached in well under the 50-sweep cap in practice)
/// is relative to the matrix magnitude.
///
/// # Errors
///
/// [`SpdError::NonFinite`] if any component is NaN or infinite.
pub fn eig_sym3<T: Real>(m: &SymMat3<T>) -> Result<EigDecomp3<T>, SpdError> {
    if !m.is_finite() {
        return Err(SpdError::NonFinite);
    }

    let scale = m.max_abs();
    if scale == T::zero() {
        return Ok(EigDecomp3 {
            eigenvalues: [T::zero(); 3],
            eigenvectors: identity3(),
        });
    }

    let mut a = m.to_mat3();
    for row in a.iter_mut() {
        for x in row.iter_mut() {
            *x = *x / scale;
        }
    }
    let mut v = identity3();

    const MAX_SWEEPS: usize = 50;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= T::JACOBI_TOL {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            jacobi_rotate(&mut a, &mut v, p, q);
        }
    }

    let mut pairs: [(T, [T; 3]); 3] = [
        (a[0][0] * scale, canonical_column(&v, 0)),
        (a[1][1] * scale, canonical_column(&v, 1)),
        (a[2][2] * scale, canonical_column(&v, 2)),
    ];
    // Descending by eigenvalue; exact ties ordered lexicographically by the
    // sign-canonicalized eigenvector so degenerate spectra stay deterministic.
    pairs.sort_by(|x, y| y.0.ptcmp(&x.0).then_with(|| lex_cmp(&x.1, &y.1)));

    let eigenvalues = [pairs[0].0, pairs[1].0, pairs[2].0];
    let mut eigenvectors = identity3();
    for (i, (_, col)) in pairs.iter().enumerate() {
        for r in 0..3 {
            eigenvectors[r][i] = col[r];
        }
    }
    Ok(EigDecomp3 { eigenvalues, eigenvectors })
}

fn identity3<T: Real>() -> Mat3<T> {
    let mut v = [[T::zero(); 3]; 3];
    v[0][0] = T::one();
    v[1][1] = T::one();
    v[2][2] = T::one();
    v
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn jacobi_rotate<T: Real>(a: &mut Mat3<T>, v: &mut Mat3<T>, p: usize, q: usize) {
    let apq = a[p][q];
    if apq == T::zero() {
        return;
    }
    // Symmetric Schur 2×2: pick the rotation angle that zeroes a[p][q],
    // taking the smaller root for numerical stability.
    let tau = (a[q][q] - a[p][p]) / (T::of(2.0) * apq);
    let t = if tau >= T::zero() {
        T::one() / (tau + (T::one() + tau * tau).sqrt())
    } else {
        -T::one() / (-tau + (T::one() + tau * tau).sqrt())
    };
    let c = T::one() / (T::one() + t * t).sqrt();
    let s = t * c;

    let app = a[p][p];
    let aqq = a[q][q];
    a[p][p] = app - t * apq;
    a[q][q] = aqq + t * apq;
    a[p][q] = T::zero();
    a[q][p] = T::zero();

    let r = 3 - p - q; // the remaining index
    let arp = a[r][p];
    let arq = a[r][q];
    a[r][p] = c * arp - s * arq;
    a[p][r] = a[r][p];
    a[r][q] = s * arp + c * arq;
    a[q][r] = a[r][q];

    for row in v.iter_mut() {
        let vp = row[p];
        let vq = row[q];
        row[p] = c * vp - s * vq;
        row[q] = s * vp + c * vq;
    }
}

/// Extracts column `i` of `v` with its sign fixed so the first nonzero
/// component is positive.
fn canonical_column<T: Real>(v: &Mat3<T>, i: usize) -> [T; 3] {
    let mut col = [v[0][i], v[1][i], v[2][i]];
    for &x in col.iter() {
        if x != T::zero() {
            if x < T::zero() {
                for y in col.iter_mut() {
                    *y = -*y;
                }
            }
            break;
        }
    }
    col
}

fn lex_cmp<T: Real>(x: &[T; 3], y: &[T; 3]) -> std::cmp::Ordering {
    for k in 0..3 {
        match x[k].ptcmp(&y[k]) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Total-order comparison helper for scalars that are known finite here.
trait PartialTotal {
    fn ptcmp(&self, other: &Self) -> std::cmp::Ordering;
}

impl<T: Real> PartialTotal for T {
    fn ptcmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("finite comparison")
    }
}

/// Matrix logarithm at the identity: `log_id(P) = U ln(Σ) Uᵀ`.
///
/// Maps an SPD tensor onto the tangent plane at the identity. Eigenvalues
/// are clamped up to [`Real::EIG_CLAMP_FLOOR`] first, absorbing the tiny
/// negative values that tensor fitting produces from noise; an eigenvalue
/// below `-`[`Real::EIG_REJECT_TOL`] means the input is not a noisy SPD
/// tensor but a genuinely invalid one.
///
/// # Errors
///
/// [`SpdError::NonFinite`] on NaN/Inf input, [`SpdError::NotClampablePD`]
/// when an eigenvalue is below the rejection threshold.
pub fn log_id<T: Real>(p: &SymMat3<T>) -> Result<SymMat3<T>, SpdError> {
    let eig = eig_sym3(p)?;
    let mut mapped = [T::zero(); 3];
    for (out, &lambda) in mapped.iter_mut().zip(eig.eigenvalues.iter()) {
        if lambda < -T::EIG_REJECT_TOL {
            return Err(SpdError::NotClampablePD(
                lambda.to_f64().unwrap_or(f64::NAN),
            ));
        }
        *out = lambda.max(T::EIG_CLAMP_FLOOR).ln();
    }
    Ok(eig.reassemble(mapped))
}

/// Matrix exponential at the identity: `exp_id(S) = U exp(Σ) Uᵀ`.
///
/// Maps any finite symmetric matrix back onto SPD(3): every output
/// eigenvalue is `exp(λ) > 0`, which is what makes tangent-space processing
/// safe. Exponentials that would underflow to zero are raised to the
/// smallest positive normal value so the output stays strictly positive
/// definite; closure then holds as long as the eigenvalue spread satisfies
/// `exp(λmax − λmin)` well below `1/ε`, far beyond any tensor this toolkit
/// produces.
///
/// # Errors
///
/// [`SpdError::NonFinite`] on NaN/Inf input, [`SpdError::Overflow`] when an
/// eigenvalue exceeds [`Real::EXP_OVERFLOW_LIMIT`].
pub fn exp_id<T: Real>(s: &SymMat3<T>) -> Result<SymMat3<T>, SpdError> {
    let eig = eig_sym3(s)?;
    let mut mapped = [T::zero(); 3];
    for (out, &lambda) in mapped.iter_mut().zip(eig.eigenvalues.iter()) {
        if lambda > T::EXP_OVERFLOW_LIMIT {
            return Err(SpdError::Overflow(lambda.to_f64().unwrap_or(f64::NAN)));
        }
        *out = lambda.exp().max(T::min_positive_value());
    }
    Ok(eig.reassemble(mapped))
}

/// Log-Euclidean distance: `‖log_id(P1) − log_id(P2)‖_F`.
///
/// The norm is the Frobenius norm of the full 3×3 difference (off-diagonal
/// components counted twice). Exactly symmetric in its arguments and zero
/// for bitwise-identical inputs.
///
/// # Errors
///
/// Propagates [`log_id`] errors for either argument.
pub fn le_dist<T: Real>(p1: &SymMat3<T>, p2: &SymMat3<T>) -> Result<T, SpdError> {
    let l1 = log_id(p1)?;
    let l2 = log_id(p2)?;
    Ok((l1 - l2).frob_norm())
}

/// Symmetric part `½(Y + Yᵀ)` of a dense 3×3 matrix.
///
/// This is the orthogonal projection onto symmetric matrices under the
/// Frobenius inner product — the closest symmetric matrix to `Y` — and is
/// the operation that turns a raw 9-channel network output into a valid
/// tangent vector. Idempotent on symmetric input.
///
/// # Errors
///
/// [`SpdError::NonFinite`] on NaN/Inf input.
pub fn symmetrize<T: Real>(y: &Mat3<T>) -> Result<SymMat3<T>, SpdError> {
    if y.iter().flatten().any(|x| !x.is_finite()) {
        return Err(SpdError::NonFinite);
    }
    let half = T::of(0.5);
    Ok(SymMat3::new(
        y[0][0],
        y[1][1],
        y[2][2],
        half * (y[0][1] + y[1][0]),
        half * (y[0][2] + y[2][0]),
        half * (y[1][2] + y[2][1]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type S = SymMat3<f64>;

    fn assert_sym_close(a: &S, b: &S, tol: f64) {
        for (x, y) in a.d.iter().zip(b.d.iter()) {
            assert!(
                (x - y).abs() <= tol,
                "components differ beyond {tol:e}: {a:?} vs {b:?}"
            );
        }
    }

    /// Dense multiply helper for oracles.
    fn matmul(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..3 {
                    out[r][c] += a[r][k] * b[k][c];
                }
            }
        }
        out
    }

    fn transpose(a: &Mat3<f64>) -> Mat3<f64> {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = a[c][r];
            }
        }
        out
    }

    /// Random rotation from a seeded RNG via Gram-Schmidt on random vectors.
    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3<f64> {
        loop {
            let mut cols = [[0.0f64; 3]; 2];
            for col in cols.iter_mut() {
                for x in col.iter_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
            }
            let n0 = (cols[0].iter().map(|x| x * x).sum::<f64>()).sqrt();
            if n0 < 1e-3 {
                continue;
            }
            let u: Vec<f64> = cols[0].iter().map(|x| x / n0).collect();
            let dot: f64 = u.iter().zip(cols[1].iter()).map(|(a, b)| a * b).sum();
            let w: Vec<f64> = cols[1]
                .iter()
                .zip(u.iter())
                .map(|(b, a)| b - dot * a)
                .collect();
            let nw = (w.iter().map(|x| x * x).sum::<f64>()).sqrt();
            if nw < 1e-3 {
                continue;
            }
            let v: Vec<f64> = w.iter().map(|x| x / nw).collect();
            // Third column = u × v keeps the basis right-handed.
            let cx = u[1] * v[2] - u[2] * v[1];
            let cy = u[2] * v[0] - u[0] * v[2];
            let cz = u[0] * v[1] - u[1] * v[0];
            return [[u[0], v[0], cx], [u[1], v[1], cy], [u[2], v[2], cz]];
        }
    }

    /// `R diag(l) Rᵀ` as a SymMat3, for building SPD fixtures.
    fn from_rotated_diag(r: &Mat3<f64>, l: [f64; 3]) -> S {
        let d = [[l[0], 0.0, 0.0], [0.0, l[1], 0.0], [0.0, 0.0, l[2]]];
        let full = matmul(r, &matmul(&d, &transpose(r)));
        symmetrize(&full).unwrap()
    }

    #[test]
    fn eig_identity() {
        let e = eig_sym3(&S::identity()).unwrap();
        for &l in &e.eigenvalues {
            assert!((l - 1.0).abs() <= 1e-15);
        }
        // Orthonormality.
        let v = e.eigenvectors;
        let vtv = matmul(&transpose(&v), &v);
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((vtv[r][c] - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eig_diagonal_is_exact() {
        let e = eig_sym3(&S::from_diag(3.0, 2.0, 1.0)).unwrap();
        assert_eq!(e.eigenvalues, [3.0, 2.0, 1.0]);
        // Diagonal input triggers no rotations: eigenvectors are exactly the
        // standard basis (a signed permutation of the identity in general).
        assert_eq!(e.eigenvectors, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn eig_block_example() {
        // [[2,1,0],[1,2,0],[0,0,5]]: the upper 2×2 block has characteristic
        // polynomial (2−λ)² − 1 = (λ−1)(λ−3), the third axis decouples with
        // eigenvalue 5, so the spectrum is (5, 3, 1).
        let m = S::new(2.0, 2.0, 5.0, 1.0, 0.0, 0.0);
        let e = eig_sym3(&m).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvalues[0] - 5.0).abs() <= 1e-12);
        assert!((e.eigenvalues[1] - 3.0).abs() <= 1e-12);
        assert!((e.eigenvalues[2] - 1.0).abs() <= 1e-12);
        let want = [
            [0.0, 0.0, 1.0],                      // λ = 5
            [inv_sqrt2, inv_sqrt2, 0.0],          // λ = 3
            [inv_sqrt2, -inv_sqrt2, 0.0],         // λ = 1
        ];
        for (i, w) in want.iter().enumerate() {
            let got = e.eigenvector(i);
            for k in 0..3 {
                assert!(
                    (got[k] - w[k]).abs() <= 1e-12,
                    "eigenvector {i}: got {got:?}, want {w:?}"
                );
            }
        }
    }

    #[test]
    fn eig_reconstruction_and_orthonormality_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let mut m = S::zero();
            for x in m.d.iter_mut() {
                *x = rng.random_range(-3.0..3.0);
            }
            let e = eig_sym3(&m).unwrap();
            assert!(e.eigenvalues[0] >= e.eigenvalues[1]);
            assert!(e.eigenvalues[1] >= e.eigenvalues[2]);

            let v = e.eigenvectors;
            let vtv = matmul(&transpose(&v), &v);
            for r in 0..3 {
                for c in 0..3 {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((vtv[r][c] - want).abs() <= 1e-10, "VᵀV drift");
                }
            }

            let recon = e.reassemble(e.eigenvalues);
            let tol = 1e-9 * 1.0f64.max(m.max_abs());
            assert_sym_close(&recon, &m, tol);
        }
    }

    #[test]
    fn eig_degenerate_spectrum_is_deterministic() {
        // Isotropic input: all eigenvalues tie; the decomposition must still
        // be byte-stable and orthonormal.
        let m = S::from_diag(2.0, 2.0, 2.0);
        let a = eig_sym3(&m).unwrap();
        let b = eig_sym3(&m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.eigenvalues, [2.0, 2.0, 2.0]);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let l = log_id(&S::identity()).unwrap();
        assert_sym_close(&l, &S::zero(), 0.0);
    }

    #[test]
    fn log_diagonal_commutes_componentwise() {
        let e = std::f64::consts::E;
        let l = log_id(&S::from_diag(e * e, e, 1.0)).unwrap();
        assert_sym_close(&l, &S::from_diag(2.0, 1.0, 0.0), 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let a = rng.random_range(1e-3..1e3);
            let b = rng.random_range(1e-3..1e3);
            let c = rng.random_range(1e-3..1e3);
            let l = log_id(&S::from_diag(a, b, c)).unwrap();
            assert_sym_close(&l, &S::from_diag(a.ln(), b.ln(), c.ln()), 1e-12);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_id(&S::zero()).unwrap();
        assert_sym_close(&p, &S::identity(), 0.0);
    }

    #[test]
    fn exp_diagonal_commutes_componentwise() {
        let e = std::f64::consts::E;
        let p = exp_id(&S::from_diag(1.0, 0.0, -1.0)).unwrap();
        assert_sym_close(&p, &S::from_diag(e, 1.0, 1.0 / e), 1e-12);
    }

    #[test]
    fn exp_overflow_is_rejected() {
        let err = exp_id(&S::from_diag(800.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, SpdError::Overflow(_)));
    }

    #[test]
    fn log_clamps_noise_but_rejects_invalid() {
        // A tiny negative eigenvalue is treated as fitting noise and clamped
        // up to the floor before the log.
        let noisy = S::from_diag(1.0, 1.0, -1e-5);
        let l = log_id(&noisy).unwrap();
        assert!((l.d[M33] - 1e-6f64.ln()).abs() <= 1e-9);

        let invalid = S::from_diag(1.0, 1.0, -1e-3);
        assert!(matches!(log_id(&invalid), Err(SpdError::NotClampablePD(_))));
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let mut m = S::identity();
        m.d[M12] = f64::NAN;
        assert_eq!(eig_sym3(&m).unwrap_err(), SpdError::NonFinite);
        assert_eq!(log_id(&m).unwrap_err(), SpdError::NonFinite);
        assert_eq!(exp_id(&m).unwrap_err(), SpdError::NonFinite);
        let y = [[0.0, f64::INFINITY, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(symmetrize(&y).unwrap_err(), SpdError::NonFinite);
    }

    #[test]
    fn manifold_closure_sweep() {
        // Any finite symmetric input maps to a strictly positive-definite
        // output. Entries in [-3,3] bound the eigenvalues well inside the
        // safe range.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10_000 {
            let mut s = S::zero();
            for x in s.d.iter_mut() {
                *x = rng.random_range(-3.0..3.0);
            }
            let p = exp_id(&s).unwrap();
            let min_eig = eig_sym3(&p).unwrap().eigenvalues[2];
            assert!(min_eig > 0.0, "closure violated: min eigenvalue {min_eig:e}");
        }
    }

    #[test]
    fn log_exp_round_trip_sweep() {
        // SPD inputs with condition number ≤ 1e4 reconstruct through
        // exp∘log within 1e-8 relative to the largest component.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let base: f64 = 10.0f64.powf(rng.random_range(-2.0..2.0));
            let l = [
                base * rng.random_range(1.0..100.0),
                base * rng.random_range(1.0..100.0),
                base * rng.random_range(0.01..1.0),
            ];
            let p = from_rotated_diag(&r, l);
            let s = log_id(&p).unwrap();
            let back = exp_id(&s).unwrap();
            let tol = 1e-8 * p.max_abs();
            assert_sym_close(&back, &p, tol);
        }
    }

    #[test]
    fn exp_log_round_trip_sweep() {
        // Tangent vectors with ‖S‖_max ≤ 10 and eigenvalue spread ≤ ln(1e4)
        // (so exp(S) stays condition-bounded like the SPD sweep above).
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let lo = rng.random_range(-8.0..1.0);
            let spread = rng.random_range(0.0..9.0);
            let l = [
                lo + spread,
                lo + rng.random_range(0.0..1.0) * spread,
                lo,
            ];
            let s = from_rotated_diag(&r, l);
            if s.max_abs() > 10.0 {
                continue;
            }
            let p = exp_id(&s).unwrap();
            let back = log_id(&p).unwrap();
            let tol = 1e-8 * 1.0f64.max(s.max_abs());
            assert_sym_close(&back, &s, tol);
        }
    }

    #[test]
    fn rotation_equivariance_of_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..500 {
            let rp = random_rotation(&mut rng);
            let l = [
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
            ];
            let p = from_rotated_diag(&rp, l);

            let r = random_rotation(&mut rng);
            let rotated = {
                let full = matmul(&r, &matmul(&p.to_mat3(), &transpose(&r)));
                symmetrize(&full).unwrap()
            };
            let lhs = log_id(&rotated).unwrap();
            let rhs = {
                let lg = log_id(&p).unwrap();
                let full = matmul(&r, &matmul(&lg.to_mat3(), &transpose(&r)));
                symmetrize(&full).unwrap()
            };
            assert_sym_close(&lhs, &rhs, 1e-9);
        }
    }

    #[test]
    fn le_dist_examples_and_axioms() {
        let e = std::f64::consts::E;
        let p = S::from_diag(2.0, 0.5, 1.0);
        assert_eq!(le_dist(&p, &p).unwrap(), 0.0);
        let d = le_dist(&S::from_diag(e, 1.0, 1.0), &S::identity()).unwrap();
        assert!((d - 1.0).abs() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let mut sample = || {
                let r = random_rotation(&mut rng);
                let l = [
                    rng.random_range(0.05..20.0),
                    rng.random_range(0.05..20.0),
                    rng.random_range(0.05..20.0),
                ];
                from_rotated_diag(&r, l)
            };
            let (p1, p2, p3) = (sample(), sample(), sample());
            let d12 = le_dist(&p1, &p2).unwrap();
            let d21 = le_dist(&p2, &p1).unwrap();
            let d13 = le_dist(&p1, &p3).unwrap();
            let d23 = le_dist(&p2, &p3).unwrap();
            assert!(d12 >= 0.0);
            // Bitwise symmetry: the difference only changes sign.
            assert_eq!(d12.to_bits(), d21.to_bits());
            assert!(le_dist(&p1, &p1).unwrap() <= 1e-10);
            assert!(d13 <= d12 + d23 + 1e-9, "triangle inequality violated");
        }
    }

    #[test]
    fn symmetrize_examples() {
        let m = S::new(1.0, 2.0, 3.0, 0.5, -0.25, 0.125);
        let again = symmetrize(&m.to_mat3()).unwrap();
        assert_sym_close(&again, &m, 0.0);

        let y = [[0.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let s = symmetrize(&y).unwrap();
        assert_eq!(s.d, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn symmetrize_is_the_frobenius_projection() {
        // ½(Y+Yᵀ) must beat every other symmetric candidate in Frobenius
        // distance to Y.
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let frob_to = |s: &S, y: &Mat3<f64>| -> f64 {
            let f = s.to_mat3();
            let mut acc = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    acc += (f[r][c] - y[r][c]).powi(2);
                }
            }
            acc.sqrt()
        };
        for _ in 0..100 {
            let mut y = [[0.0f64; 3]; 3];
            for row in y.iter_mut() {
                for x in row.iter_mut() {
                    *x = rng.random_range(-2.0..2.0);
                }
            }
            let proj = symmetrize(&y).unwrap();
            let best = frob_to(&proj, &y);
            for _ in 0..50 {
                let mut cand = proj;
                for x in cand.d.iter_mut() {
                    *x += rng.random_range(-0.5..0.5);
                }
                assert!(frob_to(&cand, &y) + 1e-12 >= best);
            }
        }
    }

    #[test]
    fn f32_instantiation_works() {
        // The kernel is generic; exercise the f32 path at tolerances that
        // make sense for single precision.
        let m: SymMat3<f32> = SymMat3::new(2.0, 2.0, 5.0, 1.0, 0.0, 0.0);
        let e = eig_sym3(&m).unwrap();
        assert!((e.eigenvalues[0] - 5.0).abs() <= 1e-5);
        assert!((e.eigenvalues[1] - 3.0).abs() <= 1e-5);
        assert!((e.eigenvalues[2] - 1.0).abs() <= 1e-5);

        let p: SymMat3<f32> = SymMat3::from_diag(2.0, 1.0, 0.5);
        let back = exp_id(&log_id(&p).unwrap()).unwrap();
        for (x, y) in back.d.iter().zip(p.d.iter()) {
            assert!((x - y).abs() <= 1e-5);
        }
    }
}
