//! Ground-truth simulation of state paths and measurement records.
//!
//! Paths are integrated on a uniform grid with Euler–Maruyama (Itô reading
//! of the coefficients) or the Stratonovich–Heun predictor–corrector.
//! Randomness comes from ChaCha20 streams keyed by `(seed, path index,
//! purpose)`, so every output is a pure function of its inputs regardless
//! of how paths are spread over threads, and measurement noise never shares
//! a stream with state noise.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::csvout::write_series;
use crate::error::{Error, Result};
use crate::models::{BilinearStateModel, ContinuousMeasurementModel, DiscreteMeasurementModel, LinearStateModel};
use crate::numkit::{cholesky_spd, psd_factor, Matrix, Vector};

/// Identifies one reproducible random stream: the run seed plus the index
/// of the Monte Carlo path it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }
}

impl From<u64> for StreamKey {
    fn from(seed: u64) -> Self {
        Self { seed, path: 0 }
    }
}

/// What a stream is used for; each purpose gets its own ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePurpose {
    State = 0,
    Measurement = 1,
    InitialState = 2,
    Auxiliary = 3,
}

pub fn noise_rng(key: impl Into<StreamKey>, purpose: NoisePurpose) -> ChaCha20Rng {
    let key = key.into();
    let mut rng = ChaCha20Rng::seed_from_u64(key.seed);
    rng.set_stream(key.path.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

/// Fills `out` with independent standard normals scaled by `scale`.
#[inline]
pub fn fill_normal(rng: &mut ChaCha20Rng, scale: f64, out: &mut [f64]) {
    for o in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *o = scale * z;
    }
}

/// Draws one sample of `N(mean, cov)`.
pub fn sample_gaussian(rng: &mut ChaCha20Rng, mean: &[f64], cov: &Matrix) -> Vector {
    let factor = cholesky_spd(cov).unwrap_or_else(|_| psd_factor(cov));
    let mut z = vec![0.0; mean.len()];
    fill_normal(rng, 1.0, &mut z);
    let mut x = factor.mul_vec(&z);
    for (xi, mi) in x.iter_mut().zip(mean) {
        *xi += mi;
    }
    x
}

/// Drift and diffusion of an SDE, evaluated without allocation.
///
/// The drift is the coefficient as written; whether it is read in the Itô
/// or the Stratonovich sense is decided by the [`Scheme`].
pub trait SdeModel: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]);
    /// Writes `Σ(x, t) · dw` into `out`.
    fn diffuse_into(&self, x: &[f64], t: f64, dw: &[f64], out: &mut [f64]);
}

impl SdeModel for LinearStateModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.a.at(t).mul_vec_into(x, out);
    }

    fn diffuse_into(&self, _x: &[f64], t: f64, dw: &[f64], out: &mut [f64]) {
        self.g.at(t).mul_vec_into(dw, out);
    }
}

impl SdeModel for BilinearStateModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.a.at(t).mul_vec_into(x, out);
        for (o, c) in out.iter_mut().zip(self.a0.at(t).iter()) {
            *o += c;
        }
    }

    fn diffuse_into(&self, x: &[f64], t: f64, dw: &[f64], out: &mut [f64]) {
        self.g.at(t).mul_vec_into(dw, out);
        let b = self.b.at(t);
        let bw: f64 = b.iter().zip(dw).map(|(b, w)| b * w).sum();
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi * bw;
        }
    }
}

/// Integration scheme, which also fixes the stochastic calculus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Itô: `x' = x + a(x,t) dt + Σ(x,t) ΔW`.
    EulerMaruyama,
    /// Stratonovich: predictor `x̃ = x + a(x) dt + Σ(x) ΔW`, corrector
    /// `x' = x + ½ (a(x) + a(x̃)) dt + ½ (Σ(x) + Σ(x̃)) ΔW`.
    Heun,
}

/// Uniform time grid `t0 + k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl SimGrid {
    /// Grid over `[0, horizon]`. The horizon must be a whole number of steps
    /// (relative mismatch at most 1e-6).
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        Self::starting_at(0.0, dt, horizon)
    }

    pub fn starting_at(t0: f64, dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidStep(format!("horizon must be non-negative, got {horizon}")));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::InvalidStep(format!(
                "horizon {horizon} is not a whole number of steps of {dt}"
            )));
        }
        Ok(Self { t0, dt, steps: steps as usize })
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }
}

/// A simulated state trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("sample path has at least the initial state")
    }

    /// Grid index of `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let t0 = *self.times.first()?;
        let k = ((t - t0) / self.dt).round();
        if k < 0.0 {
            return None;
        }
        let k = k as usize;
        let tk = *self.times.get(k)?;
        ((tk - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(k)
    }

    /// CSV with header `t,x1..xn`, preceded by `# <comment>` when given.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.dim());
        let header = std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}")));
        let rows = self.times.iter().zip(&self.states).map(|(t, x)| (*t, x.as_ref()));
        write_series(out, comment, header.collect(), rows)
    }
}

fn advance<M: SdeModel + ?Sized>(
    model: &M,
    scheme: Scheme,
    x0: &[f64],
    grid: &SimGrid,
    rng: &mut ChaCha20Rng,
    mut visit: impl FnMut(usize, f64, &[f64]),
) {
    let n = model.dim();
    let d = model.noise_dim();
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut predictor = vec![0.0; n];
    let mut diff_pred = vec![0.0; n];
    let mut drift_pred = vec![0.0; n];
    let mut dw = vec![0.0; d];
    visit(0, grid.time(0), &x);
    for k in 0..grid.steps {
        let t = grid.time(k);
        fill_normal(rng, sqrt_dt, &mut dw);
        model.drift_into(&x, t, &mut drift);
        model.diffuse_into(&x, t, &dw, &mut diff);
        match scheme {
            Scheme::EulerMaruyama => {
                for i in 0..n {
                    x[i] += drift[i] * dt + diff[i];
                }
            }
            Scheme::Heun => {
                for i in 0..n {
                    predictor[i] = x[i] + drift[i] * dt + diff[i];
                }
                model.drift_into(&predictor, grid.time(k + 1), &mut drift_pred);
                model.diffuse_into(&predictor, grid.time(k + 1), &dw, &mut diff_pred);
                for i in 0..n {
                    x[i] += 0.5 * ((drift[i] + drift_pred[i]) * dt + diff[i] + diff_pred[i]);
                }
            }
        }
        visit(k + 1, grid.time(k + 1), &x);
    }
}

fn check_initial<M: SdeModel + ?Sized>(model: &M, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model dimension is {}",
            x0.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Integrates one path with the given scheme.
pub fn simulate<M: SdeModel + ?Sized>(
    model: &M,
    scheme: Scheme,
    x0: &[f64],
    grid: &SimGrid,
    key: impl Into<StreamKey>,
) -> Result<SamplePath> {
    check_initial(model, x0)?;
    let mut rng = noise_rng(key, NoisePurpose::State);
    let mut states = Vec::with_capacity(grid.steps + 1);
    advance(model, scheme, x0, grid, &mut rng, |_, _, x| states.push(Vector::from(x)));
    Ok(SamplePath { dt: grid.dt, times: grid.times(), states })
}

/// Euler–Maruyama path; the model's drift is read as an Itô drift.
pub fn simulate_ito<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    grid: &SimGrid,
    key: impl Into<StreamKey>,
) -> Result<SamplePath> {
    simulate(model, Scheme::EulerMaruyama, x0, grid, key)
}

/// Stratonovich–Heun path of a bilinear model.
pub fn simulate_stratonovich(
    model: &BilinearStateModel,
    x0: &[f64],
    grid: &SimGrid,
    key: impl Into<StreamKey>,
) -> Result<SamplePath> {
    simulate(model, Scheme::Heun, x0, grid, key)
}

/// Final state only, for ensembles too large to keep whole paths.
pub fn simulate_terminal<M: SdeModel + ?Sized>(
    model: &M,
    scheme: Scheme,
    x0: &[f64],
    grid: &SimGrid,
    key: impl Into<StreamKey>,
) -> Result<Vector> {
    check_initial(model, x0)?;
    let mut rng = noise_rng(key, NoisePurpose::State);
    let mut last = Vector::from(x0);
    advance(model, scheme, x0, grid, &mut rng, |k, _, x| {
        if k == grid.steps {
            last = Vector::from(x);
        }
    });
    Ok(last)
}

/// Terminal states of `paths` independent paths; path `i` uses stream
/// `(seed, i)`, so the result does not depend on the thread count.
pub fn ensemble_terminal<M: SdeModel + ?Sized>(
    model: &M,
    scheme: Scheme,
    x0: &[f64],
    grid: &SimGrid,
    seed: u64,
    paths: usize,
) -> Result<Vec<Vector>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|i| simulate_terminal(model, scheme, x0, grid, StreamKey::new(seed, i)))
        .collect()
}

/// One discrete observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSample {
    pub t: f64,
    pub y: Vector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscreteRecord {
    pub samples: Vec<DiscreteSample>,
}

impl DiscreteRecord {
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let m = self.samples.first().map_or(0, |s| s.y.dim());
        let header = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("y{i}")));
        let rows = self.samples.iter().map(|s| (s.t, s.y.as_ref()));
        write_series(out, comment, header.collect(), rows)
    }
}

/// Continuous-measurement increments; `dz[k]` covers `[t0 + k·dt, t0 + (k+1)·dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecord {
    pub t0: f64,
    pub dt: f64,
    pub dz: Vec<Vector>,
}

impl ContinuousRecord {
    /// Zero increments, e.g. for measurement-free runs.
    pub fn zeros(t0: f64, dt: f64, steps: usize, m: usize) -> Self {
        Self { t0, dt, dz: vec![Vector::zeros(m); steps] }
    }

    pub fn steps(&self) -> usize {
        self.dz.len()
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Merges every `factor` consecutive increments into one, giving the
    /// record of the same measurement path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.dz.len().is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "{} increments cannot be grouped by {factor}",
                self.dz.len()
            )));
        }
        let dz = self
            .dz
            .chunks(factor)
            .map(|chunk| {
                let mut acc = Vector::zeros(chunk[0].dim());
                for v in chunk {
                    for (a, b) in acc.iter_mut().zip(v.iter()) {
                        *a += b;
                    }
                }
                acc
            })
            .collect();
        Ok(Self { t0: self.t0, dt: self.dt * factor as f64, dz })
    }

    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let m = self.dz.first().map_or(0, |v| v.dim());
        let header = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("dz{i}")));
        let rows = self.dz.iter().enumerate().map(|(k, v)| (self.time(k), v.as_ref()));
        write_series(out, comment, header.collect(), rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementRecord {
    Discrete(DiscreteRecord),
    Continuous(ContinuousRecord),
}

impl MeasurementRecord {
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        match self {
            MeasurementRecord::Discrete(r) => r.write_csv(out, comment),
            MeasurementRecord::Continuous(r) => r.write_csv(out, comment),
        }
    }
}

/// `y_k = C(t_k) x(t_k) + v_k` with `v_k ~ N(0, R(t_k))` at each scheduled
/// instant. Every instant must lie on the path's grid. A singular `R`
/// (including zero) is accepted here so noise-free records can be built.
pub fn gen_discrete_measurements(
    path: &SamplePath,
    dm: &DiscreteMeasurementModel,
    key: impl Into<StreamKey>,
) -> Result<DiscreteRecord> {
    let mut rng = noise_rng(key, NoisePurpose::Measurement);
    let mut samples = Vec::with_capacity(dm.schedule.len());
    for &t in &dm.schedule {
        let k = path.index_of(t).ok_or(Error::ScheduleOffGrid(t))?;
        let mut y = dm.c.at(t).mul_vec(&path.states[k]);
        let r = dm.r.at(t);
        let factor = cholesky_spd(&r).unwrap_or_else(|_| psd_factor(&r));
        let mut v = vec![0.0; dm.m];
        fill_normal(&mut rng, 1.0, &mut v);
        for (yi, ni) in y.iter_mut().zip(factor.mul_vec(&v).iter()) {
            *yi += ni;
        }
        samples.push(DiscreteSample { t: path.times[k], y });
    }
    Ok(DiscreteRecord { samples })
}

/// `dz_k = C(t_k) x(t_k) dt + dη_k`, `dη_k ~ N(0, φ_η dt)`, one increment
/// per grid step.
pub fn gen_continuous_measurements(
    path: &SamplePath,
    cm: &ContinuousMeasurementModel,
    key: impl Into<StreamKey>,
) -> Result<ContinuousRecord> {
    let mut rng = noise_rng(key, NoisePurpose::Measurement);
    let dt = path.dt;
    let steps = path.len().saturating_sub(1);
    let mut dz = Vec::with_capacity(steps);
    let mut xi = vec![0.0; cm.m];
    let mut cached_factor: Option<Matrix> = None;
    for k in 0..steps {
        let t = path.times[k];
        let factor = match (&cm.phi_eta.as_const(), &cached_factor) {
            (Some(_), Some(f)) => f.clone(),
            _ => {
                let phi = cm.phi_eta.at(t);
                let f = cholesky_spd(&phi).unwrap_or_else(|_| psd_factor(&phi));
                if cm.phi_eta.as_const().is_some() {
                    cached_factor = Some(f.clone());
                }
                f
            }
        };
        let mut inc = cm.c.at(t).mul_vec(&path.states[k]).scale(dt);
        fill_normal(&mut rng, dt.sqrt(), &mut xi);
        for (a, b) in inc.iter_mut().zip(factor.mul_vec(&xi).iter()) {
            *a += b;
        }
        dz.push(inc);
    }
    Ok(ContinuousRecord { t0: path.times[0], dt, dz })
}
