//! Numerical checks of the characteristic-function view of Kalman filtering.
//!
//! Under a Gaussian conditional law `N(m, P)` the moment generating function
//! is `exp(sᵀm + ½ sᵀPs)` and the characteristic function is its value at
//! `s = iω`. The checks here evaluate both sides of the MGF evolution
//! equations under that law and report the residuals.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kf_cc::Channel;
use crate::models::{ContinuousMeasurementModel, GaussianBelief, LinearStateModel};
use crate::numkit::{Matrix, Vector};
use crate::sdesim::ContinuousRecord;
use crate::trajectory::FilterTrajectory;

pub type ComplexValue = Complex64;

/// Largest MGF exponent accepted before reporting [`Error::Overflow`].
pub const MGF_EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Real argument `s` of the MGF.
    Mgf,
    /// Real frequency `ω`; the CF is evaluated at `s = iω`.
    Cf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfProbe {
    pub kind: ProbeKind,
    pub point: Vector,
}

impl CfProbe {
    pub fn mgf(s: impl Into<Vector>) -> Self {
        Self { kind: ProbeKind::Mgf, point: s.into() }
    }

    pub fn cf(omega: impl Into<Vector>) -> Self {
        Self { kind: ProbeKind::Cf, point: omega.into() }
    }
}

/// Probe points `{−1, −0.5, 0.5, 1}ⁿ` for `n ≤ 3`. Larger dimensions use the
/// same four values along each coordinate axis.
pub fn default_probes(n: usize) -> Vec<Vector> {
    const LEVELS: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];
    if n <= 3 {
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    LEVELS.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out.into_iter().map(Vector::new).collect()
    } else {
        (0..n)
            .flat_map(|i| {
                LEVELS.iter().map(move |&v| {
                    let mut p = vec![0.0; n];
                    p[i] = v;
                    Vector::new(p)
                })
            })
            .collect()
    }
}

fn check_probe(b: &GaussianBelief, s: &[f64]) -> Result<()> {
    if s.len() != b.dim() {
        return Err(Error::Dimension(format!("probe of length {} for dimension {}", s.len(), b.dim())));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("probe"));
    }
    Ok(())
}

fn quad(p: &Matrix, s: &[f64]) -> f64 {
    s.iter().zip(p.mul_vec(s).iter()).map(|(a, b)| a * b).sum()
}

/// `exp(sᵀm + ½ sᵀPs)`.
pub fn gaussian_mgf(b: &GaussianBelief, s: &[f64]) -> Result<f64> {
    check_probe(b, s)?;
    let exponent = b.mean.dot(s) + 0.5 * quad(&b.cov, s);
    if exponent > MGF_EXPONENT_LIMIT || !exponent.is_finite() {
        return Err(Error::Overflow(exponent));
    }
    Ok(exponent.exp())
}

/// `exp(i ωᵀm − ½ ωᵀPω)`.
pub fn gaussian_cf(b: &GaussianBelief, omega: &[f64]) -> ComplexValue {
    assert_eq!(omega.len(), b.dim(), "probe dimension mismatch");
    Complex64::from_polar((-0.5 * quad(&b.cov, omega)).exp(), b.mean.dot(omega))
}

/// Sample CF with standard errors of its real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalCf {
    pub value: ComplexValue,
    pub se_re: f64,
    pub se_im: f64,
}

impl EmpiricalCf {
    /// Whether `target` lies within `k` standard errors in both components.
    pub fn agrees_with(&self, target: ComplexValue, k: f64) -> bool {
        (self.value.re - target.re).abs() <= k * self.se_re && (self.value.im - target.im).abs() <= k * self.se_im
    }
}

/// Monte Carlo estimate of `E exp(i ωᵀx)` from samples.
pub fn empirical_cf(samples: &[Vector], omega: &[f64]) -> Result<EmpiricalCf> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let n = samples.len() as f64;
    let terms: Vec<Complex64> = samples.iter().map(|x| Complex64::from_polar(1.0, x.dot(omega))).collect();
    let mean = terms.iter().sum::<Complex64>() / n;
    let (ss_re, ss_im) = terms
        .iter()
        .fold((0.0, 0.0), |(r, i), z| (r + (z.re - mean.re).powi(2), i + (z.im - mean.im).powi(2)));
    Ok(EmpiricalCf {
        value: mean,
        se_re: (ss_re / (n - 1.0) / n).sqrt(),
        se_im: (ss_im / (n - 1.0) / n).sqrt(),
    })
}

/// Right-hand side of the MGF evolution between observations under the
/// Gaussian law: `(sᵀA(m + Ps) + ½ sᵀGGᵀs) · MGF`.
pub fn mgf_drift(model: &LinearStateModel, b: &GaussianBelief, s: &[f64]) -> Result<f64> {
    let mgf = gaussian_mgf(b, s)?;
    let a = model.a.at(b.t);
    let shifted = b.mean.axpy(1.0, &b.cov.mul_vec(s));
    let sa = a.transpose().mul_vec(s);
    Ok((sa.dot(&shifted) + 0.5 * quad(&model.noise_cov(b.t), s)) * mgf)
}

/// `|LHS − RHS| / MGF` for the MGF evolution between observations.
///
/// LHS differentiates `gaussian_mgf` along the moment equations,
/// `MGF · (sᵀ dm + ½ sᵀ dP s)` with `dm = A m` and `dP = AP + PAᵀ + GGᵀ`.
/// RHS is [`mgf_drift`].
pub fn mgf_evolution_residual(model: &LinearStateModel, b: &GaussianBelief, s: &[f64]) -> Result<f64> {
    let mgf = gaussian_mgf(b, s)?;
    let a = model.a.at(b.t);
    let dm = a.mul_vec(&b.mean);
    let mut dp = &*a * &b.cov;
    dp += &(&b.cov * &a.transpose());
    dp += &model.noise_cov(b.t);
    let lhs = mgf * (dm.dot(s) + 0.5 * quad(&dp, s));
    let rhs = mgf_drift(model, b, s)?;
    Ok((lhs - rhs).abs() / mgf)
}

/// Gain of the MGF evolution under continuous measurements,
/// `(⟨e^{sᵀx} xᵀ⟩ − ⟨e^{sᵀx}⟩⟨xᵀ⟩) Cᵀ φ⁻¹`, which for `N(m, P)` equals
/// `MGF · (Ps)ᵀ Cᵀ φ⁻¹`. Returned as a `1 × m` row.
pub fn cf_gain(b: &GaussianBelief, cm: &ContinuousMeasurementModel, s: &[f64]) -> Result<Matrix> {
    let mgf = gaussian_mgf(b, s)?;
    let ch = Channel::at(cm, b.t)?;
    let ps = b.cov.mul_vec(s);
    Ok((&ps.to_row() * &ch.phi_inv_c().transpose()).scale(mgf))
}

/// Time average over the run of
/// `|ΔMGF − (drift · dt + gain · (dz − C m dt))|`, with drift from
/// [`mgf_drift`] and gain from [`cf_gain`], both at the start of each step.
/// Falls as `O(dt)`.
pub fn cf_sde_residual(
    model: &LinearStateModel,
    cm: &ContinuousMeasurementModel,
    trajectory: &FilterTrajectory,
    record: &ContinuousRecord,
    s: &[f64],
) -> Result<f64> {
    let beliefs: Vec<&GaussianBelief> = trajectory.beliefs().collect();
    if beliefs.len() != record.steps() + 1 || record.steps() == 0 {
        return Err(Error::GridMismatch(format!(
            "{} beliefs for {} increments",
            beliefs.len(),
            record.steps()
        )));
    }
    let dt = record.dt;
    let mut total = 0.0;
    for (k, dz) in record.dz.iter().enumerate() {
        let (b0, b1) = (beliefs[k], beliefs[k + 1]);
        if (b0.t - record.time(k)).abs() > 1e-9 * record.time(k).abs().max(1.0) {
            return Err(Error::GridMismatch(format!("belief at {} against grid time {}", b0.t, record.time(k))));
        }
        let ch = Channel::at(cm, b0.t)?;
        let cm_dt = ch.c.mul_vec(&b0.mean);
        let nu: Vec<f64> = dz.iter().zip(cm_dt.iter()).map(|(z, y)| z - y * dt).collect();
        let gain = cf_gain(b0, cm, s)?;
        let innovation_part: f64 = gain.row(0).iter().zip(&nu).map(|(g, v)| g * v).sum();
        let predicted = mgf_drift(model, b0, s)? * dt + innovation_part;
        let actual = gaussian_mgf(b1, s)? - gaussian_mgf(b0, s)?;
        total += (actual - predicted).abs();
    }
    Ok(total / record.steps() as f64)
}

/// Third-moment identity for a Gaussian vector (0-based indices):
/// `lhs = E[x_i x_j x_γ] − E[x_i x_j] m_γ` from exact Gaussian moments,
/// `rhs = P_iγ m_j + P_jγ m_i`.
pub fn third_moment_identity(b: &GaussianBelief, i: usize, j: usize, gamma: usize) -> (f64, f64) {
    let n = b.dim();
    assert!(i < n && j < n && gamma < n, "index out of range for dimension {n}");
    let m = &b.mean;
    let p = &b.cov;
    let third = m[i] * m[j] * m[gamma] + m[i] * p[(j, gamma)] + m[j] * p[(i, gamma)] + m[gamma] * p[(i, j)];
    let second = m[i] * m[j] + p[(i, j)];
    let lhs = third - second * m[gamma];
    let rhs = p[(i, gamma)] * m[j] + p[(j, gamma)] * m[i];
    (lhs, rhs)
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub check: String,
    pub kind: ProbeKind,
    pub probe: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ProbeRecord {
    pub fn new(check: &str, kind: ProbeKind, probe: &[f64], lhs: f64, rhs: f64, residual: f64, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            kind,
            probe: probe.to_vec(),
            lhs,
            rhs,
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

/// MGF-evolution records for every probe.
pub fn mgf_evolution_report(
    model: &LinearStateModel,
    b: &GaussianBelief,
    probes: &[Vector],
    tolerance: f64,
) -> Result<Vec<ProbeRecord>> {
    probes
        .iter()
        .map(|s| {
            let rhs = mgf_drift(model, b, s)?;
            let residual = mgf_evolution_residual(model, b, s)?;
            let lhs = rhs + residual * gaussian_mgf(b, s)?;
            Ok(ProbeRecord::new("mgf_evolution", ProbeKind::Mgf, s, lhs, rhs, residual, tolerance))
        })
        .collect()
}

/// Third-moment records for every index triple.
pub fn third_moment_report(b: &GaussianBelief, tolerance: f64) -> Vec<ProbeRecord> {
    let n = b.dim();
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for g in 0..n {
                let (lhs, rhs) = third_moment_identity(b, i, j, g);
                let idx = [i as f64, j as f64, g as f64];
                out.push(ProbeRecord::new("third_moment", ProbeKind::Mgf, &idx, lhs, rhs, (lhs - rhs).abs(), tolerance));
            }
        }
    }
    out
}

/// Writes one whitespace-separated line per record after a header line.
pub fn write_report<W: Write>(mut out: W, comment: Option<&str>, records: &[ProbeRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(out, "check kind probe lhs rhs residual tolerance result").map_err(io)?;
    for r in records {
        let probe = r.probe.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let kind = match r.kind {
            ProbeKind::Mgf => "mgf",
            ProbeKind::Cf => "cf",
        };
        writeln!(
            out,
            "{} {} [{}] {:e} {:e} {:e} {:e} {}",
            r.check,
            kind,
            probe,
            r.lhs,
            r.rhs,
            r.residual,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    Ok(())
}
