//! Random instance generators and independent reference computations shared
//! by the integration tests.
#![allow(dead_code)]

use cfkalman::{GaussianBelief, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn rand_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::new((0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

/// `M Mᵀ + floor · I`.
pub fn rand_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let m = rand_matrix(rng, n, n, 1.0);
    let mut p = &m * &m.transpose();
    for i in 0..n {
        p[(i, i)] += floor;
    }
    p.symmetrize()
}

/// `−(M Mᵀ + ½ I) + K` with `K` skew; every eigenvalue has real part ≤ −½.
pub fn rand_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let s = rand_spd(rng, n, 0.5);
    let k = rand_matrix(rng, n, n, 1.0);
    let skew = (&k - &k.transpose()).scale(0.5);
    &skew - &s
}

pub fn rand_belief(rng: &mut ChaCha8Rng, n: usize) -> GaussianBelief {
    GaussianBelief::new(0.0, rand_vector(rng, n, 1.0), rand_spd(rng, n, 0.1))
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
        for j in 0..n {
            let (x, y) = (a[(col, j)], a[(pivot, j)]);
            a[(col, j)] = y;
            a[(pivot, j)] = x;
            let (x, y) = (inv[(col, j)], inv[(pivot, j)]);
            inv[(col, j)] = y;
            inv[(pivot, j)] = x;
        }
        let d = a[(col, col)];
        assert!(d != 0.0, "singular matrix");
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

/// Posterior of `x ~ N(m, P)` given `y = C x + v`, `v ~ N(0, R)`, in
/// information form: `Λ = P⁻¹ + Cᵀ R⁻¹ C`, `μ = Λ⁻¹ (P⁻¹ m + Cᵀ R⁻¹ y)`.
pub fn information_form_posterior(b: &GaussianBelief, c: &Matrix, r: &Matrix, y: &[f64]) -> GaussianBelief {
    let p_inv = gauss_jordan_inverse(&b.cov);
    let r_inv = gauss_jordan_inverse(r);
    let ct_rinv = &c.transpose() * &r_inv;
    let lambda = &p_inv + &(&ct_rinv * c);
    let cov = gauss_jordan_inverse(&lambda);
    let mut eta = p_inv.mul_vec(&b.mean);
    let extra = ct_rinv.mul_vec(y);
    for i in 0..eta.dim() {
        eta[i] += extra[i];
    }
    GaussianBelief::new(b.t, cov.mul_vec(&eta), cov.symmetrize())
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance and its standard error from the fourth central moment.
pub fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var) / n).sqrt())
}
