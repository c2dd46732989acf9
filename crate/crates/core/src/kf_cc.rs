//! Kalman–Bucy filter for continuous measurements `dz = C x dt + dη`.
//!
//! One step over `[t, t + dt]`:
//! `m' = m + A m dt + K (dz − C m dt)` with `K = P Cᵀ φ⁻¹`, and
//! `P' = P + (A P + P Aᵀ + G Gᵀ − P Cᵀ φ⁻¹ C P) dt`.

use crate::error::{Error, Result};
use crate::models::{ContinuousMeasurementModel, GaussianBelief, LinearStateModel};
use crate::numkit::{
    cholesky_solve, cholesky_spd, is_hurwitz, kron, lyapunov_operator, lyapunov_solve,
    lyapunov_solve_unchecked, lu_solve, unvec, vec, Matrix, Vector,
};
use crate::sdesim::ContinuousRecord;
use crate::trajectory::{BeliefTag, FilterTrajectory, Innovation};

/// Residual threshold (Frobenius norm) for the algebraic Riccati solve.
pub const RICCATI_TOL: f64 = 1e-9;
const RICCATI_MAX_ITER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcFilterConfig {
    /// Step; must equal the measurement record's grid step.
    pub dt: f64,
    pub use_vec_form: bool,
    /// Integrate the covariance with one RK4 step per `dt` instead of Euler.
    pub rk4_covariance: bool,
}

impl CcFilterConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, use_vec_form: false, rk4_covariance: false }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidStep(format!("filter step must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Coefficients of the measurement channel evaluated at one instant.
pub(crate) struct Channel {
    pub c: Matrix,
    pub chol_phi: Matrix,
}

impl Channel {
    pub fn at(cm: &ContinuousMeasurementModel, t: f64) -> Result<Self> {
        let c = cm.c.at(t).into_owned();
        let chol_phi = cholesky_spd(&cm.phi_eta.at(t))?;
        Ok(Self { c, chol_phi })
    }

    /// `P Cᵀ φ⁻¹`.
    pub fn gain(&self, p: &Matrix) -> Matrix {
        cholesky_solve(&self.chol_phi, &(&self.c * p)).transpose()
    }

    /// `φ⁻¹ C`.
    pub fn phi_inv_c(&self) -> Matrix {
        cholesky_solve(&self.chol_phi, &self.c)
    }
}

/// Kalman gain `P Cᵀ φ_η⁻¹` (n×m).
pub fn gain(b: &GaussianBelief, cm: &ContinuousMeasurementModel) -> Result<Matrix> {
    let ch = Channel::at(cm, b.t)?;
    check_dims(b, &ch.c)?;
    Ok(ch.gain(&b.cov))
}

fn check_dims(b: &GaussianBelief, c: &Matrix) -> Result<()> {
    if c.cols() != b.dim() || b.cov.shape() != (b.dim(), b.dim()) {
        return Err(Error::Dimension(format!(
            "C {:?} against state dimension {}",
            c.shape(),
            b.dim()
        )));
    }
    Ok(())
}

/// `A P + P Aᵀ + G Gᵀ − K φ Kᵀ` where `K φ Kᵀ = P Cᵀ φ⁻¹ C P`.
pub(crate) fn riccati_rhs(a: &Matrix, gg: &Matrix, ch: &Channel, p: &Matrix) -> Matrix {
    let mut out = a * p;
    out += &(p * &a.transpose());
    out += gg;
    let ck = &ch.c * p;
    out -= &(&ck.transpose() * &cholesky_solve(&ch.chol_phi, &ck));
    out
}

/// Innovation `dz − C m dt`.
pub(crate) fn innovation(ch: &Channel, m: &Vector, dz: &[f64], dt: f64) -> Result<Vector> {
    if dz.len() != ch.c.rows() {
        return Err(Error::Dimension(format!(
            "increment of length {} against C with {} rows",
            dz.len(),
            ch.c.rows()
        )));
    }
    let cm = ch.c.mul_vec(m);
    Ok(Vector::new(dz.iter().zip(cm.iter()).map(|(z, y)| z - y * dt).collect()))
}

/// Shared Euler/RK4 update of the covariance over one step.
pub(crate) fn covariance_step(
    a: &Matrix,
    gg: &Matrix,
    ch: &Channel,
    p: &Matrix,
    dt: f64,
    rk4: bool,
) -> Matrix {
    let next = if rk4 {
        let f = |x: &Matrix| riccati_rhs(a, gg, ch, x);
        let k1 = f(p);
        let k2 = f(&(p + &k1.scale(0.5 * dt)));
        let k3 = f(&(p + &k2.scale(0.5 * dt)));
        let k4 = f(&(p + &k3.scale(dt)));
        let mut incr = k1;
        incr += &k2.scale(2.0);
        incr += &k3.scale(2.0);
        incr += &k4;
        p + &incr.scale(dt / 6.0)
    } else {
        p + &riccati_rhs(a, gg, ch, p).scale(dt)
    };
    next.symmetrize()
}

/// One Euler step of the mean SDE and the Riccati ODE.
pub fn step(
    b: &GaussianBelief,
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &CcFilterConfig,
) -> Result<GaussianBelief> {
    Ok(step_with_innovation(b, model, cm, dz, cfg)?.0)
}

pub(crate) fn step_with_innovation(
    b: &GaussianBelief,
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &CcFilterConfig,
) -> Result<(GaussianBelief, Vector)> {
    cfg.check()?;
    let dt = cfg.dt;
    let ch = Channel::at(cm, b.t)?;
    check_dims(b, &ch.c)?;
    let a = model.a.at(b.t);
    let gg = model.noise_cov(b.t);
    let nu = innovation(&ch, &b.mean, dz, dt)?;

    let k = ch.gain(&b.cov);
    let mut mean = b.mean.axpy(dt, &a.mul_vec(&b.mean));
    mean = mean.axpy(1.0, &k.mul_vec(&nu));
    let cov = covariance_step(&a, &gg, &ch, &b.cov, dt, cfg.rk4_covariance);
    Ok((GaussianBelief { t: b.t + dt, mean, cov }, nu))
}

/// [`step`] through the vec forms:
/// `dvec(m) = (mᵀ ⊗ I) vec(A) dt + ((dz − C m dt)ᵀ φ⁻¹ C ⊗ I) vec(P)` and
/// `dvec(P) = ((I ⊗ A + A ⊗ I) vec(P) + vec(G Gᵀ) − (P Cᵀ φ⁻¹ C ⊗ I) vec(P)) dt`.
pub fn step_vec(
    b: &GaussianBelief,
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &CcFilterConfig,
) -> Result<GaussianBelief> {
    Ok(step_vec_with_innovation(b, model, cm, dz, cfg)?.0)
}

fn step_vec_with_innovation(
    b: &GaussianBelief,
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &CcFilterConfig,
) -> Result<(GaussianBelief, Vector)> {
    cfg.check()?;
    let dt = cfg.dt;
    let n = b.dim();
    let eye = Matrix::identity(n);
    let ch = Channel::at(cm, b.t)?;
    check_dims(b, &ch.c)?;
    let a = model.a.at(b.t);
    let vec_p = vec(&b.cov);
    let nu = innovation(&ch, &b.mean, dz, dt)?;
    let phi_inv_c = ch.phi_inv_c();

    let drift = kron(&b.mean.to_row(), &eye).mul_vec(&vec(&a));
    let correction = kron(&(&nu.to_row() * &phi_inv_c), &eye).mul_vec(&vec_p);
    let mean = b.mean.axpy(dt, &drift).axpy(1.0, &correction);

    let cov = if cfg.rk4_covariance {
        covariance_step(&a, &model.noise_cov(b.t), &ch, &b.cov, dt, true)
    } else {
        let shrink = &(&b.cov * &ch.c.transpose()) * &phi_inv_c;
        let mut dvec_p = lyapunov_operator(&a).mul_vec(&vec_p);
        dvec_p = dvec_p.axpy(1.0, &vec(&model.noise_cov(b.t)));
        dvec_p = dvec_p.axpy(-1.0, &kron(&shrink, &eye).mul_vec(&vec_p));
        unvec(&vec_p.axpy(dt, &dvec_p), n, n).symmetrize()
    };
    Ok((GaussianBelief { t: b.t + dt, mean, cov }, nu))
}

fn constant_coefficients<'a>(
    model: &'a LinearStateModel,
    cm: &'a ContinuousMeasurementModel,
) -> Result<(&'a Matrix, &'a Matrix, &'a Matrix, &'a Matrix)> {
    match (model.a.as_const(), model.g.as_const(), cm.c.as_const(), cm.phi_eta.as_const()) {
        (Some(a), Some(g), Some(c), Some(phi)) => Ok((a, g, c, phi)),
        _ => Err(Error::Precondition("stationary covariance needs constant coefficients".into())),
    }
}

/// Frobenius norm of `A P + P Aᵀ + G Gᵀ − P Cᵀ φ⁻¹ C P`.
pub fn riccati_residual(
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    p: &Matrix,
) -> Result<f64> {
    let ch = Channel::at(cm, 0.0)?;
    Ok(riccati_rhs(&model.a.at(0.0), &model.noise_cov(0.0), &ch, p).frobenius_norm())
}

/// Gain making `A − K C` Hurwitz.
///
/// Tries `K = 0`, then the Bass pole shift on the dual pair `(Aᵀ, Cᵀ)`, then
/// integrates the Riccati differential equation forward and takes its gain.
fn stabilizing_gain(a: &Matrix, gg: &Matrix, ch: &Channel) -> Option<Matrix> {
    let n = a.rows();
    let closed = |k: &Matrix| a - &(k * &ch.c);
    if is_hurwitz(a) {
        return Some(Matrix::zeros(n, ch.c.rows()));
    }
    let ctc = &ch.c.transpose() * &ch.c;
    let base = a.norm1() + 1.0;
    for s in [1.0, 2.0, 4.0, 8.0] {
        let shifted = &a.transpose() + &Matrix::identity(n).scale(s * base);
        let Ok(z) = lyapunov_solve_unchecked(&shifted, &ctc.scale(-2.0)) else { continue };
        let Ok(k) = lu_solve(&z, &ch.c.transpose()) else { continue };
        if k.is_finite() && is_hurwitz(&closed(&k)) {
            return Some(k);
        }
    }
    let mut p = Matrix::identity(n);
    let dt = 1e-2 / base;
    for chunk in 0..200 {
        for _ in 0..1000 {
            p = covariance_step(a, gg, ch, &p, dt, true);
        }
        if !p.is_finite() {
            return None;
        }
        let k = ch.gain(&p);
        if chunk % 10 == 9 && is_hurwitz(&closed(&k)) {
            return Some(k);
        }
    }
    None
}

/// Stationary solution of `A P + P Aᵀ + G Gᵀ − P Cᵀ φ⁻¹ C P = 0`, i.e. of
/// `0 = (I ⊗ A + A ⊗ I) vec(P) + vec(G Gᵀ) − (P Cᵀ φ⁻¹ C ⊗ I) vec(P)`.
///
/// Newton–Kleinman: with `K_i` stabilizing, solve the Lyapunov equation
/// `(A − K_i C) P + P (A − K_i C)ᵀ + G Gᵀ + K_i φ K_iᵀ = 0`, then set
/// `K_{i+1} = P Cᵀ φ⁻¹`. Assumes `(A, C)` detectable and `(A, G)` stabilizable.
pub fn stationary_cov(model: &LinearStateModel, cm: &ContinuousMeasurementModel) -> Result<Matrix> {
    let (a, g, c, phi) = constant_coefficients(model, cm)?;
    let gg = g * &g.transpose();
    let ch = Channel { c: c.clone(), chol_phi: cholesky_spd(phi)? };
    let Some(mut k) = stabilizing_gain(a, &gg, &ch) else {
        return Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY });
    };
    let mut residual = f64::INFINITY;
    for iter in 1..=RICCATI_MAX_ITER {
        let closed = a - &(&k * c);
        let q = &gg + &(&(&k * phi) * &k.transpose());
        let p = match lyapunov_solve(&closed, &q) {
            Ok(p) => p,
            Err(_) => return Err(Error::NoConvergence { iterations: iter, residual }),
        };
        residual = riccati_rhs(a, &gg, &ch, &p).frobenius_norm();
        if residual <= RICCATI_TOL {
            return Ok(p);
        }
        k = ch.gain(&p);
    }
    Err(Error::NoConvergence { iterations: RICCATI_MAX_ITER, residual })
}

/// Steps through every increment of the record, tagging each belief as
/// updated and storing the innovation `dz − C m dt`.
pub fn run(
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    record: &ContinuousRecord,
    b0: &GaussianBelief,
    cfg: &CcFilterConfig,
) -> Result<FilterTrajectory> {
    check_record(record, b0, cfg)?;
    let mut traj = FilterTrajectory::starting_from(b0.clone());
    let mut b = b0.clone();
    for (k, dz) in record.dz.iter().enumerate() {
        let (next, nu) = if cfg.use_vec_form {
            step_vec_with_innovation(&b, model, cm, dz, cfg)?
        } else {
            step_with_innovation(&b, model, cm, dz, cfg)?
        };
        b = next;
        b.t = record.time(k + 1);
        traj.push(BeliefTag::Updated, b.clone(), Some(Innovation { t: record.time(k), residual: nu, cov: None }));
    }
    Ok(traj)
}

pub(crate) fn check_record(record: &ContinuousRecord, b0: &GaussianBelief, cfg: &CcFilterConfig) -> Result<()> {
    cfg.check()?;
    if (record.dt - cfg.dt).abs() > 1e-9 * cfg.dt {
        return Err(Error::GridMismatch(format!(
            "record step {} differs from filter step {}",
            record.dt, cfg.dt
        )));
    }
    if (record.t0 - b0.t).abs() > 1e-9 * b0.t.abs().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "record starts at {} but the initial belief is at {}",
            record.t0, b0.t
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, g: f64, c: f64, phi: f64) -> (LinearStateModel, ContinuousMeasurementModel) {
        (
            LinearStateModel::new(Matrix::from_rows(&[[a]]), Matrix::from_rows(&[[g]])),
            ContinuousMeasurementModel::new(Matrix::from_rows(&[[c]]), Matrix::from_rows(&[[phi]])),
        )
    }

    fn belief(m: f64, p: f64) -> GaussianBelief {
        GaussianBelief::new(0.0, vec![m], Matrix::from_rows(&[[p]]))
    }

    #[test]
    fn gain_examples() {
        let (_, cm) = scalar(0.0, 0.0, 1.0, 1.0);
        assert_eq!(gain(&belief(0.0, 1.0), &cm).unwrap()[(0, 0)], 1.0);
        assert_eq!(gain(&belief(0.0, 0.0), &cm).unwrap()[(0, 0)], 0.0);
        let cm = ContinuousMeasurementModel::new(Matrix::from_rows(&[[1.0, 0.0]]), Matrix::from_rows(&[[4.0]]));
        let b = GaussianBelief::new(0.0, vec![0.0, 0.0], Matrix::from_diag(&[1.0, 2.0]));
        assert_eq!(gain(&b, &cm).unwrap(), Matrix::column(&[0.25, 0.0]));
        let (_, bad) = scalar(0.0, 0.0, 1.0, 0.0);
        assert!(matches!(gain(&belief(0.0, 1.0), &bad), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn hand_euler_step() {
        let (model, cm) = scalar(-1.0, 1.0, 1.0, 1.0);
        let cfg = CcFilterConfig::new(0.01);
        for out in [
            step(&belief(0.0, 1.0), &model, &cm, &[0.05], &cfg).unwrap(),
            step_vec(&belief(0.0, 1.0), &model, &cm, &[0.05], &cfg).unwrap(),
        ] {
            assert!((out.mean[0] - 0.05).abs() < 1e-15);
            assert!((out.cov[(0, 0)] - 0.98).abs() < 1e-15);
            assert!((out.t - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn uninformative_and_zero_innovation_steps() {
        let cfg = CcFilterConfig::new(0.1);
        let (model, blind) = scalar(-2.0, 1.0, 0.0, 1.0);
        let out = step(&belief(1.0, 0.5), &model, &blind, &[3.0], &cfg).unwrap();
        assert!((out.mean[0] - (1.0 - 0.2)).abs() < 1e-15);
        assert!((out.cov[(0, 0)] - (0.5 + (-2.0 + 1.0) * 0.1)).abs() < 1e-15);

        let (model, cm) = scalar(-2.0, 1.0, 3.0, 1.0);
        let out = step(&belief(1.0, 0.5), &model, &cm, &[3.0 * 1.0 * 0.1], &cfg).unwrap();
        assert!((out.mean[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn riccati_examples() {
        let (model, cm) = scalar(0.0, 1.0, 1.0, 1.0);
        assert!((stationary_cov(&model, &cm).unwrap()[(0, 0)] - 1.0).abs() < 1e-9);
        let (model, cm) = scalar(-1.0, 1.0, 1.0, 1.0);
        let p = stationary_cov(&model, &cm).unwrap();
        assert!((p[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-9);
        assert!(riccati_residual(&model, &cm, &p).unwrap() <= RICCATI_TOL);

        let model = LinearStateModel::new(Matrix::from_rows(&[[-1.0, 0.3], [0.0, -2.0]]), Matrix::identity(2));
        let cm = ContinuousMeasurementModel::new(Matrix::zeros(1, 2), Matrix::from_rows(&[[1.0]]));
        let lyap = crate::kf_cd::stationary_predict_cov(&model).unwrap();
        assert!(stationary_cov(&model, &cm).unwrap().max_abs_diff(&lyap) < 1e-12);
    }

    #[test]
    fn riccati_unstable_observable() {
        let model = LinearStateModel::new(Matrix::from_rows(&[[0.5, 1.0], [-1.0, 0.2]]), Matrix::identity(2));
        let cm = ContinuousMeasurementModel::new(Matrix::from_rows(&[[1.0, 0.0]]), Matrix::from_rows(&[[0.3]]));
        let p = stationary_cov(&model, &cm).unwrap();
        assert!(riccati_residual(&model, &cm, &p).unwrap() <= RICCATI_TOL);
        assert!(cholesky_spd(&p).is_ok());
    }

    #[test]
    fn run_reaches_stationary_covariance() {
        let (model, cm) = scalar(-1.0, 1.0, 1.0, 1.0);
        let cfg = CcFilterConfig::new(1e-3);
        let record = ContinuousRecord::zeros(0.0, 1e-3, 20_000, 1);
        let traj = run(&model, &cm, &record, &belief(0.0, 0.0), &cfg).unwrap();
        let p = traj.final_belief().unwrap().cov[(0, 0)];
        assert!((p - (2f64.sqrt() - 1.0)).abs() < 1e-3);
        assert_eq!(traj.len(), 20_001);
        assert!((traj.final_belief().unwrap().t - 20.0).abs() < 1e-9);
    }

    #[test]
    fn run_rejects_grid_mismatch() {
        let (model, cm) = scalar(-1.0, 1.0, 1.0, 1.0);
        let record = ContinuousRecord::zeros(0.0, 1e-2, 10, 1);
        let err = run(&model, &cm, &record, &belief(0.0, 1.0), &CcFilterConfig::new(1e-3));
        assert!(matches!(err, Err(Error::GridMismatch(_))));
    }
}
