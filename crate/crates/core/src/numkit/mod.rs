//! Minimal dense real linear algebra with vec/Kronecker calculus.
//!
//! `vec` stacks columns, so `vec(A X B) = (Bᵀ ⊗ A) vec(X)` holds with the
//! Kronecker product defined block-wise as `(A ⊗ B)[i, j] = A[i, j] · B`.

mod decomp;
mod matrix;

pub use decomp::{
    cholesky_solve, cholesky_spd, clip_negative_eigenvalues, lu_solve, min_eigenvalue, psd_factor,
    solve_spd, sym_eigen, Lu, SPD_REL_TOL,
};
pub use matrix::{Matrix, Vector};

use crate::error::{Error, Result};

/// Column-stacking: entry `i + j·rows` holds `M[i, j]`.
pub fn vec(m: &Matrix) -> Vector {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(m[(i, j)]);
        }
    }
    Vector::new(out)
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Matrix {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    Matrix::from_fn(rows, cols, |i, j| v[i + j * rows])
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// `I ⊗ A + A ⊗ I`, the vec-form generator of `P ↦ A P + P Aᵀ`.
pub fn lyapunov_operator(a: &Matrix) -> Matrix {
    let eye = Matrix::identity(a.rows());
    &kron(&eye, a) + &kron(a, &eye)
}

/// Matrix exponential `e^{A t}` by scaling and squaring of a truncated
/// Taylor series.
///
/// Accurate to roughly 1e-12 relative for `‖A t‖ ≤ 10`; larger arguments
/// still work but lose digits in the squaring phase.
pub fn expm(a: &Matrix, t: f64) -> Matrix {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.rows();
    let at = a.scale(t);
    let norm = at.norm1();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = at.scale(0.5f64.powi(squarings));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=40 {
        term = (&term * &x).scale(1.0 / k as f64);
        sum += &term;
        if term.max_abs() <= f64::EPSILON * 1e-3 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Solves `A P + P Aᵀ + Q = 0` through the `n² × n²` Kronecker system
/// `(I ⊗ A + A ⊗ I) vec(P) = -vec(Q)`.
///
/// `A` must be Hurwitz. The same factorization is reused to solve
/// `A X + X Aᵀ + I = 0`; `X` is positive definite exactly when `A` is
/// Hurwitz, so a non-Hurwitz `A` is reported as [`Error::SingularSystem`]
/// even when the Kronecker matrix itself happens to be invertible.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    check_lyapunov_shapes(a, q)?;
    let n = a.rows();
    let lu = Lu::factor(&lyapunov_operator(a))?;
    let probe = lu.solve_vec(&vec(&Matrix::identity(n)).scale(-1.0));
    if cholesky_spd(&unvec(&probe, n, n).symmetrize()).is_err() {
        return Err(Error::SingularSystem("drift matrix is not Hurwitz".into()));
    }
    let p = lu.solve_vec(&vec(q).scale(-1.0));
    Ok(unvec(&p, n, n).symmetrize())
}

/// Kronecker-form Lyapunov solve without the stability check. The solution
/// is unique whenever no two eigenvalues of `A` sum to zero, but it is only
/// a covariance when `A` is Hurwitz.
pub fn lyapunov_solve_unchecked(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    check_lyapunov_shapes(a, q)?;
    let n = a.rows();
    let p = Lu::factor(&lyapunov_operator(a))?.solve_vec(&vec(q).scale(-1.0));
    Ok(unvec(&p, n, n).symmetrize())
}

/// Hurwitz test via the Lyapunov characterization.
pub fn is_hurwitz(a: &Matrix) -> bool {
    lyapunov_solve(a, &Matrix::identity(a.rows())).is_ok()
}

fn check_lyapunov_shapes(a: &Matrix, q: &Matrix) -> Result<()> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::Dimension(format!(
            "lyapunov: A {:?}, Q {:?}",
            a.shape(),
            q.shape()
        )));
    }
    Ok(())
}
