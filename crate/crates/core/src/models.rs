//! State and measurement models, the Gaussian belief, and the
//! Stratonovich-to-Itô drift conversion for bilinear systems.
//!
//! Model assumptions shared by every filter in the crate: the state noise
//! `W`, the measurement noise (`V` or `η`) and the initial state are
//! mutually independent.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use crate::numkit::{cholesky_spd, sym_eigen, Matrix, Vector};

/// A coefficient that is either constant or a pure function of time.
#[derive(Clone)]
pub enum TimeFn<T> {
    Const(T),
    Varying(Arc<dyn Fn(f64) -> T + Send + Sync>),
}

impl<T: Clone> TimeFn<T> {
    pub fn varying(f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        TimeFn::Varying(Arc::new(f))
    }

    #[inline]
    pub fn at(&self, t: f64) -> Cow<'_, T> {
        match self {
            TimeFn::Const(v) => Cow::Borrowed(v),
            TimeFn::Varying(f) => Cow::Owned(f(t)),
        }
    }

    pub fn as_const(&self) -> Option<&T> {
        match self {
            TimeFn::Const(v) => Some(v),
            TimeFn::Varying(_) => None,
        }
    }
}

impl<T> From<T> for TimeFn<T> {
    fn from(v: T) -> Self {
        TimeFn::Const(v)
    }
}

impl<T: fmt::Debug> fmt::Debug for TimeFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Const(v) => write!(f, "Const({v:?})"),
            TimeFn::Varying(_) => write!(f, "Varying(<fn>)"),
        }
    }
}

/// One violated model invariant, addressed by field name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelIssue {
    pub field: String,
    pub message: String,
}

impl ModelIssue {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }

    /// Prefixes the field path, e.g. `R` becomes `measurement.R`.
    pub fn under(mut self, parent: &str) -> Self {
        self.field = format!("{parent}.{}", self.field);
        self
    }
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

/// Models report every violated invariant at once; an empty list means valid.
pub trait Validate {
    fn validate(&self) -> Vec<ModelIssue>;

    fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

/// `dx = A(t) x dt + G(t) dW` with `var(dW) = I dt`.
#[derive(Debug, Clone)]
pub struct LinearStateModel {
    pub n: usize,
    pub d: usize,
    pub a: TimeFn<Matrix>,
    pub g: TimeFn<Matrix>,
}

impl LinearStateModel {
    /// Dimensions are read from the coefficients at `t = 0`.
    pub fn new(a: impl Into<TimeFn<Matrix>>, g: impl Into<TimeFn<Matrix>>) -> Self {
        let a = a.into();
        let g = g.into();
        let n = a.at(0.0).rows();
        let d = g.at(0.0).cols();
        Self { n, d, a, g }
    }

    /// `G(t) G(t)ᵀ`.
    pub fn noise_cov(&self, t: f64) -> Matrix {
        let g = self.g.at(t);
        &*g * &g.transpose()
    }
}

impl Validate for LinearStateModel {
    fn validate(&self) -> Vec<ModelIssue> {
        let mut issues = Vec::new();
        check_matrix(&mut issues, "A", &self.a.at(0.0), self.n, self.n);
        check_matrix(&mut issues, "G", &self.g.at(0.0), self.n, self.d);
        issues
    }
}

/// Stratonovich bilinear system
/// `dx = (A0 + A x) dt + Σ_φ (G_{·φ} + x B_φ) ∘ dW_φ`.
///
/// `B` holds one scalar multiplicative coefficient per noise channel, so
/// diffusion column `φ` is `G_{·φ} + x B_φ`.
#[derive(Debug, Clone)]
pub struct BilinearStateModel {
    pub n: usize,
    pub d: usize,
    pub a0: TimeFn<Vector>,
    pub a: TimeFn<Matrix>,
    pub g: TimeFn<Matrix>,
    pub b: TimeFn<Vector>,
}

impl BilinearStateModel {
    pub fn new(
        a0: impl Into<TimeFn<Vector>>,
        a: impl Into<TimeFn<Matrix>>,
        g: impl Into<TimeFn<Matrix>>,
        b: impl Into<TimeFn<Vector>>,
    ) -> Self {
        let a = a.into();
        let g = g.into();
        let n = a.at(0.0).rows();
        let d = g.at(0.0).cols();
        Self { n, d, a0: a0.into(), a, g, b: b.into() }
    }

    /// Embeds a linear model with `A0 = 0` and `B = 0`.
    pub fn from_linear(model: &LinearStateModel) -> Self {
        Self {
            n: model.n,
            d: model.d,
            a0: TimeFn::Const(Vector::zeros(model.n)),
            a: model.a.clone(),
            g: model.g.clone(),
            b: TimeFn::Const(Vector::zeros(model.d)),
        }
    }

    /// The linear part `(A, G)`, dropping `A0` and `B`.
    pub fn linear_part(&self) -> LinearStateModel {
        LinearStateModel { n: self.n, d: self.d, a: self.a.clone(), g: self.g.clone() }
    }

    /// `A0 + A x`, the drift as written in Stratonovich form.
    pub fn stratonovich_drift(&self, x: &[f64], t: f64) -> Vector {
        let mut out = self.a.at(t).mul_vec(x);
        for (o, c) in out.iter_mut().zip(self.a0.at(t).iter()) {
            *o += c;
        }
        out
    }

    /// `n × d` diffusion matrix with column `φ` equal to `G_{·φ} + x B_φ`.
    pub fn diffusion(&self, x: &[f64], t: f64) -> Matrix {
        let g = self.g.at(t);
        let b = self.b.at(t);
        Matrix::from_fn(self.n, self.d, |i, phi| g[(i, phi)] + x[i] * b[phi])
    }

    pub fn ito_drift_correction(&self, x: &[f64], t: f64) -> Vector {
        ito_drift_correction(self, x, t)
    }

    /// `Σ_φ B_φ²`.
    pub fn b_squared_sum(&self, t: f64) -> f64 {
        self.b.at(t).iter().map(|b| b * b).sum()
    }

    /// `Σ_φ G_{·φ} B_φ`.
    pub fn g_times_b(&self, t: f64) -> Vector {
        self.g.at(t).mul_vec(&self.b.at(t))
    }

    /// The Itô system with the same solutions: `A0 + ½ G B` and
    /// `A + ½ Σ B_φ² I`, diffusion unchanged.
    pub fn to_ito(&self) -> BilinearStateModel {
        let shifted_a0 = {
            let src = self.clone();
            move |t: f64| {
                let gb = src.g_times_b(t);
                src.a0.at(t).axpy(0.5, &gb)
            }
        };
        let shifted_a = {
            let src = self.clone();
            move |t: f64| {
                let mut a = src.a.at(t).into_owned();
                let shift = 0.5 * src.b_squared_sum(t);
                for i in 0..src.n {
                    a[(i, i)] += shift;
                }
                a
            }
        };
        let all_const = self.a0.as_const().is_some()
            && self.a.as_const().is_some()
            && self.g.as_const().is_some()
            && self.b.as_const().is_some();
        let (a0, a) = if all_const {
            (TimeFn::Const(shifted_a0(0.0)), TimeFn::Const(shifted_a(0.0)))
        } else {
            (TimeFn::varying(shifted_a0), TimeFn::varying(shifted_a))
        };
        BilinearStateModel { n: self.n, d: self.d, a0, a, g: self.g.clone(), b: self.b.clone() }
    }
}

/// Stratonovich-to-Itô drift correction `½ Σ_φ (G_{iφ} B_φ + B_φ² x_i)`.
pub fn ito_drift_correction(model: &BilinearStateModel, x: &[f64], t: f64) -> Vector {
    assert_eq!(x.len(), model.n, "state dimension mismatch");
    let gb = model.g_times_b(t);
    let b2 = model.b_squared_sum(t);
    Vector::new(gb.iter().zip(x).map(|(gb, xi)| 0.5 * (gb + b2 * xi)).collect())
}

impl Validate for BilinearStateModel {
    fn validate(&self) -> Vec<ModelIssue> {
        let mut issues = Vec::new();
        check_vector(&mut issues, "A0", &self.a0.at(0.0), self.n);
        check_matrix(&mut issues, "A", &self.a.at(0.0), self.n, self.n);
        check_matrix(&mut issues, "G", &self.g.at(0.0), self.n, self.d);
        check_vector(&mut issues, "B", &self.b.at(0.0), self.d);
        issues
    }
}

/// `y_k = C(t_k) x(t_k) + v_k`, `v_k ~ N(0, R(t_k))`, at the instants in `schedule`.
#[derive(Debug, Clone)]
pub struct DiscreteMeasurementModel {
    pub m: usize,
    pub c: TimeFn<Matrix>,
    pub r: TimeFn<Matrix>,
    pub schedule: Vec<f64>,
}

impl DiscreteMeasurementModel {
    pub fn new(c: impl Into<TimeFn<Matrix>>, r: impl Into<TimeFn<Matrix>>, schedule: Vec<f64>) -> Self {
        let c = c.into();
        let m = c.at(0.0).rows();
        Self { m, c, r: r.into(), schedule }
    }

    /// Evenly spaced instants `every, 2·every, …` up to `horizon`.
    pub fn regular_schedule(every: f64, horizon: f64) -> Vec<f64> {
        let count = (horizon / every + 1e-9).floor() as usize;
        (1..=count).map(|k| k as f64 * every).collect()
    }
}

impl Validate for DiscreteMeasurementModel {
    fn validate(&self) -> Vec<ModelIssue> {
        let mut issues = Vec::new();
        let c = self.c.at(0.0);
        let n = c.cols();
        check_matrix(&mut issues, "C", &c, self.m, n);
        let probe_times: Vec<f64> =
            if self.schedule.is_empty() { vec![0.0] } else { self.schedule.clone() };
        for &t in &probe_times {
            let r = self.r.at(t);
            if r.shape() != (self.m, self.m) {
                issues.push(ModelIssue::new("R", format!("must be {0}x{0}", self.m)));
                break;
            }
            if !is_spd(&r) {
                issues.push(ModelIssue::new("R", "not SPD"));
                break;
            }
        }
        if self.schedule.iter().any(|t| !t.is_finite()) {
            issues.push(ModelIssue::new("schedule", "contains non-finite instants"));
        }
        if self.schedule.windows(2).any(|w| !(w[1] > w[0])) {
            issues.push(ModelIssue::new("schedule", "not strictly increasing"));
        }
        issues
    }
}

/// `dz = C(t) x dt + dη`, `dη ~ N(0, φ_η dt)`.
#[derive(Debug, Clone)]
pub struct ContinuousMeasurementModel {
    pub m: usize,
    pub c: TimeFn<Matrix>,
    pub phi_eta: TimeFn<Matrix>,
}

impl ContinuousMeasurementModel {
    pub fn new(c: impl Into<TimeFn<Matrix>>, phi_eta: impl Into<TimeFn<Matrix>>) -> Self {
        let c = c.into();
        let m = c.at(0.0).rows();
        Self { m, c, phi_eta: phi_eta.into() }
    }
}

impl Validate for ContinuousMeasurementModel {
    fn validate(&self) -> Vec<ModelIssue> {
        let mut issues = Vec::new();
        let c = self.c.at(0.0);
        check_matrix(&mut issues, "C", &c, self.m, c.cols());
        let phi = self.phi_eta.at(0.0);
        if phi.shape() != (self.m, self.m) {
            issues.push(ModelIssue::new("phi_eta", format!("must be {0}x{0}", self.m)));
        } else if !is_spd(&phi) {
            issues.push(ModelIssue::new("phi_eta", "not SPD"));
        }
        issues
    }
}

/// Conditional mean and covariance at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub t: f64,
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(t: f64, mean: impl Into<Vector>, cov: Matrix) -> Self {
        Self { t, mean: mean.into(), cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// Largest absolute difference across mean and covariance entries.
    pub fn max_abs_diff(&self, other: &GaussianBelief) -> f64 {
        self.mean.max_abs_diff(&other.mean).max(self.cov.max_abs_diff(&other.cov))
    }
}

impl Validate for GaussianBelief {
    fn validate(&self) -> Vec<ModelIssue> {
        let mut issues = Vec::new();
        let n = self.mean.dim();
        if !self.mean.is_finite() {
            issues.push(ModelIssue::new("mean", "has non-finite entries"));
        }
        if self.cov.shape() != (n, n) {
            issues.push(ModelIssue::new("cov", format!("must be {n}x{n}")));
            return issues;
        }
        if !self.cov.is_finite() {
            issues.push(ModelIssue::new("cov", "has non-finite entries"));
            return issues;
        }
        if self.cov.asymmetry() > 1e-10 {
            issues.push(ModelIssue::new("cov", "not symmetric"));
        }
        let trace = self.cov.trace().abs();
        if sym_eigen(&self.cov).0[0] < -1e-9 * trace.max(f64::MIN_POSITIVE) {
            issues.push(ModelIssue::new("cov", "not PSD"));
        }
        issues
    }
}

fn is_spd(m: &Matrix) -> bool {
    m.is_finite()
        && m.asymmetry() <= 1e-12 * m.max_abs().max(1.0)
        && cholesky_spd(m).is_ok()
}

fn check_matrix(issues: &mut Vec<ModelIssue>, field: &str, m: &Matrix, rows: usize, cols: usize) {
    if m.shape() != (rows, cols) {
        issues.push(ModelIssue::new(
            field,
            format!("must be {rows}x{cols}, got {}x{}", m.rows(), m.cols()),
        ));
    } else if !m.is_finite() {
        issues.push(ModelIssue::new(field, "has non-finite entries"));
    }
}

fn check_vector(issues: &mut Vec<ModelIssue>, field: &str, v: &Vector, len: usize) {
    if v.dim() != len {
        issues.push(ModelIssue::new(field, format!("must have length {len}, got {}", v.dim())));
    } else if !v.is_finite() {
        issues.push(ModelIssue::new(field, "has non-finite entries"));
    }
}
