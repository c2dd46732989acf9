//! Continuous-state, discrete-measurement Kalman filter.
//!
//! Between observations the conditional mean and covariance follow the
//! moment ODEs `dm = A m dτ`, `dP = (A P + P Aᵀ + G Gᵀ) dτ`, integrated with
//! classical RK4. At an observation instant the Gaussian Bayes update is
//! applied. Every operation also exists in its vec/Kronecker form, which
//! must agree with the matrix form to roundoff.

use crate::error::{Error, Result};
use crate::models::{DiscreteMeasurementModel, GaussianBelief, LinearStateModel};
use crate::numkit::{cholesky_solve, cholesky_spd, kron, lyapunov_operator, lyapunov_solve, unvec, vec, Matrix, Vector};
use crate::sdesim::DiscreteRecord;
use crate::trajectory::{BeliefTag, FilterTrajectory, Innovation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdFilterConfig {
    /// RK4 substep. `None` uses `1e-3 · (t1 − t0)` capped at `1e-2`.
    pub ode_substep: Option<f64>,
    /// Run the vec/Kronecker forms instead of the matrix forms.
    pub use_vec_form: bool,
    /// Joseph-form covariance update instead of `P − K C P`.
    pub joseph_update: bool,
    /// When set, [`run`] also records predicted beliefs at multiples of this
    /// interval between observations.
    pub report_interval: Option<f64>,
}

impl Default for CdFilterConfig {
    fn default() -> Self {
        Self { ode_substep: None, use_vec_form: false, joseph_update: true, report_interval: None }
    }
}

impl CdFilterConfig {
    fn substep(&self, span: f64) -> f64 {
        self.ode_substep.unwrap_or_else(|| (1e-3 * span).min(1e-2))
    }
}

type Derivative<'a> = dyn Fn(f64, &Vector, &Matrix) -> (Vector, Matrix) + 'a;

fn rk4_moments(b: &GaussianBelief, t1: f64, h: f64, f: &Derivative<'_>) -> Result<GaussianBelief> {
    let t0 = b.t;
    if t1 < t0 {
        return Err(Error::Precondition(format!("cannot predict backwards from {t0} to {t1}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidStep(format!("ODE substep must be positive, got {h}")));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(b.clone());
    }
    let steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;
    let mut m = b.mean.clone();
    let mut p = b.cov.clone();
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let dt = if k + 1 == steps { t1 - t } else { h };
        let (k1m, k1p) = f(t, &m, &p);
        let (k2m, k2p) = f(t + 0.5 * dt, &m.axpy(0.5 * dt, &k1m), &(&p + &k1p.scale(0.5 * dt)));
        let (k3m, k3p) = f(t + 0.5 * dt, &m.axpy(0.5 * dt, &k2m), &(&p + &k2p.scale(0.5 * dt)));
        let (k4m, k4p) = f(t + dt, &m.axpy(dt, &k3m), &(&p + &k3p.scale(dt)));
        for i in 0..m.dim() {
            m[i] += dt / 6.0 * (k1m[i] + 2.0 * k2m[i] + 2.0 * k3m[i] + k4m[i]);
        }
        let mut incr = k1p;
        incr += &k2p.scale(2.0);
        incr += &k3p.scale(2.0);
        incr += &k4p;
        p += &incr.scale(dt / 6.0);
        p = p.symmetrize();
    }
    Ok(GaussianBelief { t: t1, mean: m, cov: p })
}

/// Propagates the belief from `b.t` to `t1` through the moment ODEs.
pub fn predict(
    b: &GaussianBelief,
    model: &LinearStateModel,
    t1: f64,
    cfg: &CdFilterConfig,
) -> Result<GaussianBelief> {
    let f = |tau: f64, m: &Vector, p: &Matrix| {
        let a = model.a.at(tau);
        let mut dp = &*a * p;
        dp += &(p * &a.transpose());
        dp += &model.noise_cov(tau);
        (a.mul_vec(m), dp)
    };
    rk4_moments(b, t1, cfg.substep(t1 - b.t), &f)
}

/// [`predict`] computed through `dvec(m) = (mᵀ ⊗ I) vec(A) dτ` and
/// `dvec(P) = ((I ⊗ A + A ⊗ I) vec(P) + vec(G Gᵀ)) dτ`.
pub fn predict_vec(
    b: &GaussianBelief,
    model: &LinearStateModel,
    t1: f64,
    cfg: &CdFilterConfig,
) -> Result<GaussianBelief> {
    let n = b.dim();
    let eye = Matrix::identity(n);
    let f = |tau: f64, m: &Vector, p: &Matrix| {
        let a = model.a.at(tau);
        let dm = kron(&m.to_row(), &eye).mul_vec(&vec(&a));
        let mut dvec_p = lyapunov_operator(&a).mul_vec(&vec(p));
        for (x, q) in dvec_p.iter_mut().zip(vec(&model.noise_cov(tau)).iter()) {
            *x += q;
        }
        (dm, unvec(&dvec_p, n, n))
    };
    rk4_moments(b, t1, cfg.substep(t1 - b.t), &f)
}

fn check_update_time(b: &GaussianBelief, t_k: f64) -> Result<()> {
    if (b.t - t_k).abs() > 1e-9 * t_k.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "belief at t = {} cannot be updated with a measurement at t = {t_k}",
            b.t
        )));
    }
    Ok(())
}

struct UpdateTerms {
    c: Matrix,
    r: Matrix,
    chol_s: Matrix,
    s: Matrix,
    residual: Vector,
}

fn update_terms(b: &GaussianBelief, dm: &DiscreteMeasurementModel, y: &[f64], t_k: f64) -> Result<UpdateTerms> {
    check_update_time(b, t_k)?;
    let c = dm.c.at(t_k).into_owned();
    let r = dm.r.at(t_k).into_owned();
    if y.len() != c.rows() || c.cols() != b.dim() {
        return Err(Error::Dimension(format!(
            "measurement of length {} against C {:?} and state dimension {}",
            y.len(),
            c.shape(),
            b.dim()
        )));
    }
    let s = (&(&(&c * &b.cov) * &c.transpose()) + &r).symmetrize();
    let chol_s = cholesky_spd(&s)?;
    let predicted = c.mul_vec(&b.mean);
    let residual = Vector::new(y.iter().zip(predicted.iter()).map(|(a, b)| a - b).collect());
    Ok(UpdateTerms { c, r, chol_s, s, residual })
}

/// Bayes update at an observation instant, returning the innovation `y − C m⁻`
/// and its covariance `S` alongside the posterior.
pub fn update_with_innovation(
    b: &GaussianBelief,
    dm: &DiscreteMeasurementModel,
    y: &[f64],
    t_k: f64,
    cfg: &CdFilterConfig,
) -> Result<(GaussianBelief, Innovation)> {
    let UpdateTerms { c, r, chol_s, s, residual } = update_terms(b, dm, y, t_k)?;
    let p = &b.cov;
    // K = P Cᵀ S⁻¹ = (S⁻¹ C P)ᵀ
    let gain = cholesky_solve(&chol_s, &(&c * p)).transpose();
    let mean = b.mean.axpy(1.0, &gain.mul_vec(&residual));
    let cov = if cfg.joseph_update {
        let i_kc = &Matrix::identity(b.dim()) - &(&gain * &c);
        let mut cov = &(&i_kc * p) * &i_kc.transpose();
        cov += &(&(&gain * &r) * &gain.transpose());
        cov
    } else {
        p - &(&(&gain * &c) * p)
    };
    let innovation = Innovation { t: t_k, residual, cov: Some(s) };
    Ok((GaussianBelief { t: b.t, mean, cov: cov.symmetrize() }, innovation))
}

/// Bayes update: `K = P Cᵀ S⁻¹`, `m⁺ = m + K (y − C m)`, covariance in
/// Joseph or plain form per `cfg`.
pub fn update(
    b: &GaussianBelief,
    dm: &DiscreteMeasurementModel,
    y: &[f64],
    t_k: f64,
    cfg: &CdFilterConfig,
) -> Result<GaussianBelief> {
    Ok(update_with_innovation(b, dm, y, t_k, cfg)?.0)
}

/// Vec form of the update:
/// `vec(m⁺) = vec(m⁻) + ((y − C m⁻)ᵀ S⁻¹ C ⊗ I) vec(P⁻)` and
/// `vec(P⁺) = vec(P⁻) − (P⁻ Cᵀ S⁻¹ C ⊗ I) vec(P⁻)`.
pub fn update_vec_with_innovation(
    b: &GaussianBelief,
    dm: &DiscreteMeasurementModel,
    y: &[f64],
    t_k: f64,
) -> Result<(GaussianBelief, Innovation)> {
    let UpdateTerms { c, chol_s, s, residual, .. } = update_terms(b, dm, y, t_k)?;
    let n = b.dim();
    let eye = Matrix::identity(n);
    let s_inv_c = cholesky_solve(&chol_s, &c);
    let vec_p = vec(&b.cov);

    let row = &residual.to_row() * &s_inv_c;
    let mean = b.mean.axpy(1.0, &kron(&row, &eye).mul_vec(&vec_p));

    let shrink = &(&b.cov * &c.transpose()) * &s_inv_c;
    let vec_post = vec_p.axpy(-1.0, &kron(&shrink, &eye).mul_vec(&vec_p));
    let cov = unvec(&vec_post, n, n).symmetrize();

    let innovation = Innovation { t: t_k, residual, cov: Some(s) };
    Ok((GaussianBelief { t: b.t, mean, cov }, innovation))
}

pub fn update_vec(
    b: &GaussianBelief,
    dm: &DiscreteMeasurementModel,
    y: &[f64],
    t_k: f64,
) -> Result<GaussianBelief> {
    Ok(update_vec_with_innovation(b, dm, y, t_k)?.0)
}

/// Stationary prior covariance: `0 = (I ⊗ A + A ⊗ I) vec(P) + vec(G Gᵀ)`.
/// Requires constant, Hurwitz `A`.
pub fn stationary_predict_cov(model: &LinearStateModel) -> Result<Matrix> {
    let (a, g) = match (model.a.as_const(), model.g.as_const()) {
        (Some(a), Some(g)) => (a, g),
        _ => return Err(Error::Precondition("stationary covariance needs constant A and G".into())),
    };
    lyapunov_solve(a, &(g * &g.transpose()))
}

/// Applies the vec-form covariance update to a stationary prior `P⁻`, using
/// the measurement coefficients at `t = 0`.
pub fn stationary_update_cov(p_minus: &Matrix, dm: &DiscreteMeasurementModel) -> Result<Matrix> {
    let n = p_minus.rows();
    let b = GaussianBelief { t: 0.0, mean: Vector::zeros(n), cov: p_minus.clone() };
    let y = vec![0.0; dm.m];
    Ok(update_vec(&b, dm, &y, 0.0)?.cov)
}

fn predict_dispatch(
    b: &GaussianBelief,
    model: &LinearStateModel,
    t1: f64,
    cfg: &CdFilterConfig,
) -> Result<GaussianBelief> {
    if cfg.use_vec_form {
        predict_vec(b, model, t1, cfg)
    } else {
        predict(b, model, t1, cfg)
    }
}

fn predict_reporting(
    traj: &mut FilterTrajectory,
    b: GaussianBelief,
    model: &LinearStateModel,
    t1: f64,
    cfg: &CdFilterConfig,
) -> Result<GaussianBelief> {
    let mut b = b;
    if let Some(every) = cfg.report_interval.filter(|e| *e > 0.0) {
        let mut k = (b.t / every + 1e-9).floor() + 1.0;
        while k * every < t1 - 1e-9 * t1.abs().max(1.0) {
            b = predict_dispatch(&b, model, k * every, cfg)?;
            traj.push(BeliefTag::Predicted, b.clone(), None);
            k += 1.0;
        }
    }
    predict_dispatch(&b, model, t1, cfg)
}

/// Alternates prediction to each observation instant with the update there,
/// then predicts on to `t_end`.
pub fn run(
    model: &LinearStateModel,
    dm: &DiscreteMeasurementModel,
    record: &DiscreteRecord,
    b0: &GaussianBelief,
    t_end: f64,
    cfg: &CdFilterConfig,
) -> Result<FilterTrajectory> {
    if let Some(bad) = record.samples.iter().find(|s| s.t < b0.t || s.t > t_end) {
        return Err(Error::Precondition(format!(
            "measurement at t = {} outside [{}, {t_end}]",
            bad.t, b0.t
        )));
    }
    let mut traj = FilterTrajectory::starting_from(b0.clone());
    let mut b = b0.clone();
    for sample in &record.samples {
        b = predict_reporting(&mut traj, b, model, sample.t, cfg)?;
        traj.push(BeliefTag::Predicted, b.clone(), None);
        let (post, innovation) = if cfg.use_vec_form {
            update_vec_with_innovation(&b, dm, &sample.y, sample.t)?
        } else {
            update_with_innovation(&b, dm, &sample.y, sample.t, cfg)?
        };
        b = post;
        traj.push(BeliefTag::Updated, b.clone(), Some(innovation));
    }
    if t_end > b.t {
        b = predict_reporting(&mut traj, b, model, t_end, cfg)?;
        traj.push(BeliefTag::Predicted, b, None);
    }
    Ok(traj)
}
