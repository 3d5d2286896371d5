//! Small dense complex linear algebra and the complex-to-real lifting used
//! to hand Hermitian quadratic forms to the real-valued QCQP solver.
//!
//! A complex vector `w = x + iy` is lifted to the stacked real vector
//! `[x; y]`. A Hermitian matrix `A = B + iC` lifts to the real symmetric
//! block matrix `[[B, -C], [C, B]]`, which satisfies
//! `w^H A w = [x; y]^T lift(A) [x; y]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;
pub type RVector = DVector<f64>;
pub type RMatrix = DMatrix<f64>;

const HERMITIAN_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// A complex square matrix with enforced conjugate symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Wraps `m` after checking `m = m^H` to within 1e-12 (relative to the
    /// largest entry when that exceeds one).
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "hermitian matrix",
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let asym = asymmetry(&m);
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian(asym));
        }
        // Symmetrize so downstream code can rely on exact conjugate symmetry.
        let sym = (&m + m.adjoint()).map(|z| z * 0.5);
        Ok(Self(sym))
    }

    /// `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self(v * v.adjoint())
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// Real value of `w^H A w`.
    pub fn quad_form(&self, w: &CVector) -> f64 {
        (w.adjoint() * &self.0 * w)[(0, 0)].re
    }

    /// `Re{a^H A b}`.
    pub fn bilinear_re(&self, a: &CVector, b: &CVector) -> f64 {
        (a.adjoint() * &self.0 * b)[(0, 0)].re
    }

    /// All eigenvalues in ascending order, by cyclic Jacobi rotations.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut a = self.0.clone();
        let n = a.nrows();
        let total: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if total == 0.0 {
            return vec![0.0; n];
        }
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * total {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    jacobi_rotate(&mut a, p, q);
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        eig
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }
}

fn asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// One complex Jacobi step on the (p, q) pair: a diagonal phase makes
/// `a[p][q]` real, then a real Givens rotation annihilates it.
fn jacobi_rotate(a: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag < 1e-300 {
        return;
    }
    let n = a.nrows();
    let phase = Complex64::from_polar(1.0, -apq.arg());
    for k in 0..n {
        a[(k, q)] *= phase;
    }
    for k in 0..n {
        a[(q, k)] *= phase.conj();
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let theta = 0.5 * (2.0 * mag).atan2(aqq - app);
    let (s, c) = theta.sin_cos();
    for k in 0..n {
        let kp = a[(k, p)];
        let kq = a[(k, q)];
        a[(k, p)] = kp * c - kq * s;
        a[(k, q)] = kp * s + kq * c;
    }
    for k in 0..n {
        let pk = a[(p, k)];
        let qk = a[(q, k)];
        a[(p, k)] = pk * c - qk * s;
        a[(q, k)] = pk * s + qk * c;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn max_eigenvalue(a: &HermitianMatrix) -> f64 {
    a.max_eigenvalue()
}

/// Real symmetric `2n x 2n` matrix `[[B, -C], [C, B]]` for `A = B + iC`.
pub fn lift_hermitian_form(a: &HermitianMatrix) -> RMatrix {
    let m = a.as_matrix();
    let n = m.nrows();
    let mut out = RMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Stacks real then imaginary parts.
pub fn lift_vector(w: &CVector) -> RVector {
    let n = w.len();
    RVector::from_fn(2 * n, |i, _| if i < n { w[i].re } else { w[i - n].im })
}

pub fn unlift_vector(x: &[f64]) -> CVector {
    assert!(x.len() % 2 == 0, "lifted vector must have even length");
    let n = x.len() / 2;
    CVector::from_fn(n, |i, _| Complex64::new(x[i], x[i + n]))
}

/// Real coefficient vector `l` with `Re{c^H w} = l^T lift(w)`.
pub fn lift_linear(c: &CVector) -> RVector {
    lift_vector(c)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn symmetric_min_eigenvalue(a: &RMatrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// PSD test with an eigenvalue floor scaled by the matrix magnitude.
pub fn is_psd(a: &RMatrix, floor: f64) -> bool {
    let scale = a.amax().max(1.0);
    symmetric_min_eigenvalue(a) >= -floor * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(rng: &mut impl Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        let m = CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        HermitianMatrix::new(&m + m.adjoint()).unwrap()
    }

    // Reference by power iteration on the shifted (positive) matrix.
    fn power_iteration_max(a: &HermitianMatrix) -> f64 {
        let m = a.as_matrix();
        let shift: f64 = m.iter().map(|z| z.norm()).sum();
        let shifted = m + CMatrix::identity(m.nrows(), m.nrows()) * Complex64::new(shift, 0.0);
        let mut v = CVector::from_fn(m.nrows(), |i, _| Complex64::new(1.0 + i as f64, 0.5));
        for _ in 0..20000 {
            let nv = &shifted * &v;
            v = nv.map(|z| z / nv.norm());
        }
        a.quad_form(&v) / v.norm_squared()
    }

    // Number of eigenvalues strictly below x, from the signs of the LDL^H
    // pivots of A - xI (Sylvester inertia).
    fn count_below(a: &CMatrix, x: f64) -> usize {
        let n = a.nrows();
        let mut m = a - CMatrix::identity(n, n) * Complex64::new(x, 0.0);
        let mut neg = 0;
        for k in 0..n {
            let mut d = m[(k, k)].re;
            if d.abs() < 1e-300 {
                d = -1e-300;
            }
            if d < 0.0 {
                neg += 1;
            }
            for i in (k + 1)..n {
                let l = m[(i, k)] / d;
                for j in (k + 1)..n {
                    let mkj = m[(k, j)];
                    m[(i, j)] -= l * mkj;
                }
            }
        }
        neg
    }

    fn bisection_max(a: &HermitianMatrix) -> f64 {
        let m = a.as_matrix();
        let n = m.nrows();
        let bound: f64 = m.iter().map(|z| z.norm()).sum::<f64>() + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(m, mid) >= n {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn identity_max_eigenvalue_is_one() {
        assert!((max_eigenvalue(&HermitianMatrix::identity(4)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_max_eigenvalue_is_norm_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v = random_cvec(&mut rng, 4);
            let a = HermitianMatrix::outer(&v);
            let lam = max_eigenvalue(&a);
            assert!((lam - v.norm_squared()).abs() < 1e-12 * v.norm_squared());
        }
    }

    #[test]
    fn max_eigenvalue_matches_bisection_and_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let a = random_hermitian(&mut rng, 4);
            let jac = max_eigenvalue(&a);
            let bis = bisection_max(&a);
            assert!((jac - bis).abs() <= 1e-10 * bis.abs().max(1.0), "{jac} vs {bis}");
            let pow = power_iteration_max(&a);
            assert!((jac - pow).abs() <= 1e-8 * pow.abs().max(1.0), "{jac} vs {pow}");
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = Complex64::new(0.0, 1.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn lifted_identity_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lifted = lift_hermitian_form(&HermitianMatrix::identity(3));
        assert_eq!(lifted, RMatrix::identity(6, 6));
        let w = random_cvec(&mut rng, 3);
        let x = lift_vector(&w);
        assert!(((x.transpose() * &lifted * &x)[(0, 0)] - w.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn lifted_rank_one_preserves_form_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_cvec(&mut rng, 4);
        let a = HermitianMatrix::outer(&v);
        let lifted = lift_hermitian_form(&a);
        assert!(is_psd(&lifted, 1e-9));
        for _ in 0..1000 {
            let w = random_cvec(&mut rng, 4);
            let w = &w / Complex64::new(w.norm(), 0.0);
            let x = lift_vector(&w);
            let lifted_val = (x.transpose() * &lifted * &x)[(0, 0)];
            assert!((lifted_val - a.quad_form(&w)).abs() <= 1e-12);
        }
    }

    #[test]
    fn lifted_spectrum_doubles_multiplicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_hermitian(&mut rng, 4);
        let eig = a.eigenvalues();
        let mut lifted: Vec<f64> = lift_hermitian_form(&a)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        lifted.sort_by(|x, y| x.total_cmp(y));
        for (i, e) in eig.iter().enumerate() {
            assert!((lifted[2 * i] - e).abs() < 1e-10);
            assert!((lifted[2 * i + 1] - e).abs() < 1e-10);
        }
    }

    #[test]
    fn psd_preserved_by_lifting() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let a = random_hermitian(&mut rng, 3);
            let psd = a.min_eigenvalue() >= -1e-12;
            assert_eq!(psd, is_psd(&lift_hermitian_form(&a), 1e-12));
        }
    }

    #[test]
    fn linear_lift_matches_real_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = random_cvec(&mut rng, 5);
        let w = random_cvec(&mut rng, 5);
        let direct = (c.adjoint() * &w)[(0, 0)].re;
        let lifted = lift_linear(&c).dot(&lift_vector(&w));
        assert!((direct - lifted).abs() < 1e-12);
        assert_eq!(unlift_vector(lift_vector(&w).as_slice()), w);
    }
}
