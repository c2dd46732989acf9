//! Factorizations: Cholesky, LU with partial pivoting and the symmetric
//! Jacobi eigensolver.

use super::{Matrix, Vector};
use crate::error::{Error, Result};

/// Relative pivot threshold for Cholesky acceptance, scaled by the largest
/// diagonal entry.
pub const SPD_REL_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = M`.
///
/// A pivot below `1e-12 · max(diag M)` rejects the matrix as not positive
/// definite. Only the lower triangle of `M` is read.
pub fn cholesky_spd(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("cholesky of {:?} matrix", m.shape())));
    }
    let n = m.rows();
    let max_diag = m.diag().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::NotSpd { pivot: max_diag });
    }
    let tol = SPD_REL_TOL * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d >= tol) {
            return Err(Error::NotSpd { pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = RHS` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, rhs: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(rhs.rows(), n, "solve shape mismatch");
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// `X` with `M X = RHS` for symmetric positive definite `M`, without forming `M⁻¹`.
pub fn solve_spd(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if rhs.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "solve_spd: {:?} against rhs {:?}",
            m.shape(),
            rhs.shape()
        )));
    }
    let l = cholesky_spd(m)?;
    Ok(cholesky_solve(&l, rhs))
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("LU of {:?} matrix", m.shape())));
        }
        let n = m.rows();
        let scale = m.max_abs();
        if scale == 0.0 {
            return Err(Error::SingularSystem("zero matrix".into()));
        }
        let tol = (n as f64) * f64::EPSILON * scale;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tol {
                return Err(Error::SingularSystem(format!(
                    "pivot {pmax:e} in column {k} below {tol:e}"
                )));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let piv = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vector {
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.lu[(i, k)] * x[k]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| self.lu[(i, k)] * x[k]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        Vector::new(x)
    }

    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        let n = self.lu.rows();
        assert_eq!(rhs.rows(), n);
        let mut out = Matrix::zeros(n, rhs.cols());
        for c in 0..rhs.cols() {
            let x = self.solve_vec(&rhs.col(c));
            for i in 0..n {
                out[(i, c)] = x[i];
            }
        }
        out
    }
}

/// General dense solve `M X = RHS`.
pub fn lu_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    Ok(Lu::factor(m)?.solve(rhs))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    assert!(m.is_square(), "sym_eigen needs a square matrix");
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.frobenius_norm();
        if off <= (1e-30 * scale * scale).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    sym_eigen(m).0[0]
}

/// Factor `F` with `F Fᵀ = M` for symmetric positive semidefinite `M`
/// (singular allowed); negative eigenvalues are treated as zero.
pub fn psd_factor(m: &Matrix) -> Matrix {
    let (vals, vecs) = sym_eigen(m);
    let n = m.rows();
    Matrix::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt())
}

/// Reassembles `V diag(max(λ, 0)) Vᵀ`.
pub fn clip_negative_eigenvalues(m: &Matrix) -> Matrix {
    let f = psd_factor(m);
    (&f * &f.transpose()).symmetrize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky_spd(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert_eq!(cholesky_spd(&Matrix::from_rows(&[[4.0]])).unwrap(), Matrix::from_rows(&[[2.0]]));
        // det = 1 - 0.999² > 0 versus 1 - 1.001² < 0
        assert!(cholesky_spd(&Matrix::from_rows(&[[1.0, 0.999], [0.999, 1.0]])).is_ok());
        assert!(matches!(
            cholesky_spd(&Matrix::from_rows(&[[1.0, 1.001], [1.001, 1.0]])),
            Err(Error::NotSpd { .. })
        ));
        assert!(matches!(cholesky_spd(&Matrix::from_rows(&[[-1.0]])), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn solve_spd_examples() {
        let rhs = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25]]);
        assert_eq!(solve_spd(&Matrix::identity(2), &rhs).unwrap(), rhs);
        let x = solve_spd(&Matrix::from_rows(&[[2.0]]), &Matrix::from_rows(&[[1.0]])).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lu_detects_singular() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(Lu::factor(&m), Err(Error::SingularSystem(_))));
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let x = lu_solve(&m, &Matrix::column(&[2.0, 3.0])).unwrap();
        assert_eq!(x.into_vec(), vec![3.0, 2.0]);
    }

    #[test]
    fn jacobi_recovers_spectrum() {
        let m = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, -4.0]]);
        let (vals, vecs) = sym_eigen(&m);
        for (got, want) in vals.iter().zip([-4.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
        let rebuilt = &(&vecs * &Matrix::from_diag(&vals)) * &vecs.transpose();
        assert!(rebuilt.max_abs_diff(&m) < 1e-13);
    }

    #[test]
    fn psd_factor_handles_singular() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let f = psd_factor(&m);
        assert!((&f * &f.transpose()).max_abs_diff(&m) < 1e-14);
        assert_eq!(psd_factor(&Matrix::zeros(2, 2)), Matrix::zeros(2, 2));
    }
}
