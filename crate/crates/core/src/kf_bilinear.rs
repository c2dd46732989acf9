//! Filter for the bilinear Stratonovich system
//! `dx = (A0 + A x) dt + Σ_φ (G_{·φ} + x B_φ) ∘ dW_φ` observed through
//! `dz = C x dt + dη`.
//!
//! The mean carries the Stratonovich correction `½ Σ_φ (G_{iφ} B_φ + B_φ² m_i)`.
//! The covariance comes in two forms that differ only in the weight of the
//! `P Σ B_φ²` term: 1 in [`CovarianceForm::AsPrinted`], 2 in
//! [`CovarianceForm::MomentExact`]. The latter reproduces the exact second
//! moments of the measurement-free scalar system.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kf_cc::{self, covariance_step, innovation, riccati_rhs, CcFilterConfig, Channel};
use crate::models::{BilinearStateModel, ContinuousMeasurementModel, GaussianBelief};
use crate::numkit::{cholesky_spd, clip_negative_eigenvalues, min_eigenvalue, Matrix, Vector};
use crate::sdesim::ContinuousRecord;
use crate::trajectory::{BeliefTag, FilterTrajectory, Innovation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// `P_ij Σ B_φ²` with weight 1.
    #[default]
    AsPrinted,
    /// `2 P_ij Σ B_φ²`.
    MomentExact,
}

impl CovarianceForm {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceForm::AsPrinted => "as_printed",
            CovarianceForm::MomentExact => "moment_exact",
        }
    }

    fn p_weight(self) -> f64 {
        match self {
            CovarianceForm::AsPrinted => 1.0,
            CovarianceForm::MomentExact => 2.0,
        }
    }
}

impl fmt::Display for CovarianceForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_printed" | "as-printed" => Ok(CovarianceForm::AsPrinted),
            "moment_exact" | "moment-exact" => Ok(CovarianceForm::MomentExact),
            other => Err(Error::Precondition(format!("unknown covariance form {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearFilterConfig {
    pub covariance_form: CovarianceForm,
    pub dt: f64,
}

impl BilinearFilterConfig {
    pub fn new(dt: f64, covariance_form: CovarianceForm) -> Self {
        Self { covariance_form, dt }
    }

    fn as_cc(&self) -> CcFilterConfig {
        CcFilterConfig::new(self.dt)
    }
}

/// Mean drift `A0 + A m + ½ Σ_φ (G_{·φ} B_φ + B_φ² m)`.
pub fn mean_drift(model: &BilinearStateModel, m: &[f64], t: f64) -> Vector {
    let mut drift = model.a.at(t).mul_vec(m);
    let a0 = model.a0.at(t);
    let corr = model.ito_drift_correction(m, t);
    for i in 0..drift.dim() {
        drift[i] += a0[i];
        drift[i] += corr[i];
    }
    drift
}

/// Covariance drift without the measurement term:
/// `A P + P Aᵀ + G Gᵀ + m (GB)ᵀ + (GB) mᵀ + m mᵀ ΣB² + w P ΣB²`.
pub fn covariance_drift_prior(
    model: &BilinearStateModel,
    m: &[f64],
    p: &Matrix,
    t: f64,
    form: CovarianceForm,
) -> Matrix {
    let a = model.a.at(t);
    let mut out = &*a * p;
    out += &(p * &a.transpose());
    out += &{
        let g = model.g.at(t);
        &*g * &g.transpose()
    };
    out += &multiplicative_terms(model, m, p, t, form);
    out
}

fn multiplicative_terms(model: &BilinearStateModel, m: &[f64], p: &Matrix, t: f64, form: CovarianceForm) -> Matrix {
    let gb = model.g_times_b(t);
    let b2 = model.b_squared_sum(t);
    let w = form.p_weight();
    Matrix::from_fn(p.rows(), p.cols(), |i, j| {
        m[i] * gb[j] + gb[i] * m[j] + m[i] * m[j] * b2 + w * p[(i, j)] * b2
    })
}

fn enforce_psd(p: Matrix, t: f64) -> Result<Matrix> {
    if cholesky_spd(&p).is_ok() {
        return Ok(p);
    }
    let lambda = min_eigenvalue(&p);
    if lambda >= 0.0 {
        return Ok(p);
    }
    let floor = -1e-9 * p.trace().abs();
    if lambda > floor {
        Ok(clip_negative_eigenvalues(&p))
    } else {
        Err(Error::IndefiniteCovariance { t, min_eigenvalue: lambda })
    }
}

/// One Euler step of the bilinear filter.
///
/// For `A0 = 0` and `B = 0` the arithmetic is exactly that of
/// [`kf_cc::step`].
pub fn step(
    b: &GaussianBelief,
    model: &BilinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &BilinearFilterConfig,
) -> Result<GaussianBelief> {
    Ok(step_with_innovation(b, model, cm, dz, cfg)?.0)
}

fn step_with_innovation(
    b: &GaussianBelief,
    model: &BilinearStateModel,
    cm: &ContinuousMeasurementModel,
    dz: &[f64],
    cfg: &BilinearFilterConfig,
) -> Result<(GaussianBelief, Vector)> {
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(Error::InvalidStep(format!("filter step must be positive, got {}", cfg.dt)));
    }
    let dt = cfg.dt;
    let ch = Channel::at(cm, b.t)?;
    if ch.c.cols() != b.dim() || model.n != b.dim() {
        return Err(Error::Dimension(format!(
            "model dimension {}, C {:?}, belief dimension {}",
            model.n,
            ch.c.shape(),
            b.dim()
        )));
    }
    let nu = innovation(&ch, &b.mean, dz, dt)?;
    let k = ch.gain(&b.cov);
    let mut mean = b.mean.axpy(dt, &mean_drift(model, &b.mean, b.t));
    mean = mean.axpy(1.0, &k.mul_vec(&nu));

    let a = model.a.at(b.t);
    let g = model.g.at(b.t);
    let gg = &*g * &g.transpose();
    let mut cov = covariance_step(&a, &gg, &ch, &b.cov, dt, false);
    let extra = multiplicative_terms(model, &b.mean, &b.cov, b.t, cfg.covariance_form);
    if extra.max_abs() > 0.0 {
        cov += &extra.scale(dt);
        cov = cov.symmetrize();
    }
    let cov = enforce_psd(cov, b.t + dt)?;
    Ok((GaussianBelief { t: b.t + dt, mean, cov }, nu))
}

/// Full covariance drift including the measurement term, for diagnostics.
pub fn covariance_drift(
    model: &BilinearStateModel,
    cm: &ContinuousMeasurementModel,
    b: &GaussianBelief,
    form: CovarianceForm,
) -> Result<Matrix> {
    let ch = Channel::at(cm, b.t)?;
    let a = model.a.at(b.t);
    let g = model.g.at(b.t);
    let mut out = riccati_rhs(&a, &(&*g * &g.transpose()), &ch, &b.cov);
    out += &multiplicative_terms(model, &b.mean, &b.cov, b.t, form);
    Ok(out)
}

pub fn run(
    model: &BilinearStateModel,
    cm: &ContinuousMeasurementModel,
    record: &ContinuousRecord,
    b0: &GaussianBelief,
    cfg: &BilinearFilterConfig,
) -> Result<FilterTrajectory> {
    kf_cc::check_record(record, b0, &cfg.as_cc())?;
    let mut traj = FilterTrajectory::starting_from(b0.clone());
    let mut b = b0.clone();
    for (k, dz) in record.dz.iter().enumerate() {
        let (next, nu) = step_with_innovation(&b, model, cm, dz, cfg)?;
        b = next;
        b.t = record.time(k + 1);
        traj.push(BeliefTag::Updated, b.clone(), Some(Innovation { t: record.time(k), residual: nu, cov: None }));
    }
    Ok(traj)
}

/// Runs this filter and the Kalman–Bucy filter on the same inputs and
/// returns the largest entrywise deviation along the trajectories.
/// Requires `A0 ≡ 0` and `B ≡ 0`.
pub fn kalman_specialization_check(
    model: &BilinearStateModel,
    cm: &ContinuousMeasurementModel,
    b0: &GaussianBelief,
    record: &ContinuousRecord,
    cfg: &BilinearFilterConfig,
) -> Result<f64> {
    let zero_at = |t: f64| model.a0.at(t).max_abs() == 0.0 && model.b.at(t).max_abs() == 0.0;
    if !(0..=record.steps()).all(|k| zero_at(record.time(k))) {
        return Err(Error::Precondition("Kalman specialization needs A0 = 0 and B = 0".into()));
    }
    let bilinear = run(model, cm, record, b0, cfg)?;
    let linear = kf_cc::run(&model.linear_part(), cm, record, b0, &cfg.as_cc())?;
    Ok(bilinear.max_abs_diff(&linear))
}
