//! Scenario files: TOML documents describing a model, its measurements, the
//! initial belief and the run settings.
//!
//! ```toml
//! seed = 7
//! horizon = 5.0
//! dt = 0.001
//!
//! [model]
//! kind = "linear"
//! A = [[-1.0]]
//! G = [[1.0]]
//!
//! [measurement]
//! kind = "discrete"
//! C = [[1.0]]
//! R = [[1.0]]
//! every = 0.5
//!
//! [initial]
//! mean = [0.0]
//! cov = [[1.0]]
//! ```

use std::path::Path;
use std::str::FromStr;

use cfkalman::kf_bilinear::CovarianceForm;
use cfkalman::models::{ModelIssue, Validate};
use cfkalman::sdesim::SimGrid;
use cfkalman::{
    BilinearStateModel, ContinuousMeasurementModel, DiscreteMeasurementModel, GaussianBelief, LinearStateModel,
    Matrix, Vector,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub model: ModelSpec,
    pub measurement: MeasurementSpec,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default, skip_serializing_if = "VerifySpec::is_empty")]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "A0", default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub kind: MeasurementKind,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_eta: Option<Rows>,
    /// Regular observation spacing for discrete measurements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<f64>,
    /// Explicit observation instants for discrete measurements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub mean: Vec<f64>,
    pub cov: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Cd,
    Cc,
    Bilinear,
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cd" => Ok(FilterKind::Cd),
            "cc" => Ok(FilterKind::Cc),
            "bilinear" => Ok(FilterKind::Bilinear),
            other => Err(format!("unknown filter {other:?} (expected cd, cc or bilinear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FilterKind>,
    #[serde(default = "default_form_name")]
    pub covariance_form: String,
    #[serde(default)]
    pub use_vec_form: bool,
    #[serde(default = "default_true")]
    pub joseph_update: bool,
    #[serde(default)]
    pub rk4_covariance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_substep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_interval: Option<f64>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            kind: None,
            covariance_form: default_form_name(),
            use_vec_form: false,
            joseph_update: true,
            rk4_covariance: false,
            ode_substep: None,
            report_interval: None,
        }
    }
}

fn default_form_name() -> String {
    CovarianceForm::AsPrinted.as_str().to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// MGF/CF probe points; defaults to the `{−1, −0.5, 0.5, 1}ⁿ` grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Rows>,
}

impl VerifySpec {
    fn is_empty(&self) -> bool {
        self.probes.is_none()
    }
}

/// Coefficient objects built from a validated scenario.
#[derive(Debug, Clone)]
pub enum StateModel {
    Linear(LinearStateModel),
    Bilinear(BilinearStateModel),
}

impl StateModel {
    pub fn dim(&self) -> usize {
        match self {
            StateModel::Linear(m) => m.n,
            StateModel::Bilinear(m) => m.n,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearStateModel> {
        match self {
            StateModel::Linear(m) => Some(m),
            StateModel::Bilinear(_) => None,
        }
    }

    pub fn to_bilinear(&self) -> BilinearStateModel {
        match self {
            StateModel::Linear(m) => BilinearStateModel::from_linear(m),
            StateModel::Bilinear(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Measurement {
    Discrete(DiscreteMeasurementModel),
    Continuous(ContinuousMeasurementModel),
}

/// A scenario together with everything derived from it.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub hash: String,
    pub state: StateModel,
    pub measurement: Measurement,
    pub b0: GaussianBelief,
    pub truth_x0: Option<Vector>,
    pub grid: SimGrid,
    pub filter: FilterKind,
    pub covariance_form: CovarianceForm,
}

impl Setup {
    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    /// Provenance line written at the top of every output file.
    pub fn header(&self) -> String {
        format!("scenario_hash={} seed={}", self.hash, self.seed())
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub filter: Option<FilterKind>,
    pub covariance_form: Option<CovarianceForm>,
}

pub fn scenario_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses TOML text, reporting the 1-based line of the first syntax or
/// type error.
pub fn parse_scenario(text: &str) -> CliResult<Scenario> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |span| text[..span.start.min(text.len())].matches('\n').count() + 1);
        CliError::Parse { line, message: e.message().to_string() }
    })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path, overrides: &Overrides) -> CliResult<Setup> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Parse { line: 1, message: e.to_string() })?;
    let mut scenario = parse_scenario(&text)?;
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    if let Some(kind) = overrides.filter {
        scenario.filter.kind = Some(kind);
    }
    if let Some(form) = overrides.covariance_form {
        scenario.filter.covariance_form = form.as_str().to_string();
    }
    build(scenario, scenario_hash(&bytes))
}

struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, field: &str, message: impl AsRef<str>) {
        self.0.push(format!("{field} {}", message.as_ref()));
    }

    fn extend(&mut self, parent: &str, found: Vec<ModelIssue>) {
        self.0.extend(found.into_iter().map(|i| i.under(parent).to_string()));
    }

    fn matrix(&mut self, field: &str, rows: &Rows) -> Option<Matrix> {
        if rows.is_empty() || rows[0].is_empty() {
            self.push(field, "must be a non-empty matrix");
            return None;
        }
        match Matrix::try_from_rows(rows) {
            Ok(m) => Some(m),
            Err(_) => {
                self.push(field, "rows have different lengths");
                None
            }
        }
    }

    fn positive(&mut self, field: &str, value: f64) -> bool {
        let ok = value.is_finite() && value > 0.0;
        if !ok {
            self.push(field, "must be positive and finite");
        }
        ok
    }
}

/// Validates a parsed scenario and builds the model objects. Every problem
/// found is reported, each with its field path.
pub fn build(scenario: Scenario, hash: String) -> CliResult<Setup> {
    let mut issues = Issues(Vec::new());

    let grid = if issues.positive("horizon", scenario.horizon) & issues.positive("dt", scenario.dt) {
        match SimGrid::new(scenario.dt, scenario.horizon) {
            Ok(g) => Some(g),
            Err(_) => {
                issues.push("dt", "does not divide horizon");
                None
            }
        }
    } else {
        None
    };

    let spec = &scenario.model;
    let a = issues.matrix("model.A", &spec.a);
    let g = issues.matrix("model.G", &spec.g);
    let state = match (a, g) {
        (Some(a), Some(g)) => {
            let n = a.rows();
            match spec.kind {
                ModelKind::Linear => {
                    if spec.a0.is_some() || spec.b.is_some() {
                        issues.push("model", "A0 and B apply only to kind = \"bilinear\"");
                    }
                    let m = LinearStateModel::new(a, g);
                    issues.extend("model", m.validate());
                    Some(StateModel::Linear(m))
                }
                ModelKind::Bilinear => {
                    let d = g.cols();
                    let a0 = Vector::new(spec.a0.clone().unwrap_or_else(|| vec![0.0; n]));
                    let b = Vector::new(spec.b.clone().unwrap_or_else(|| vec![0.0; d]));
                    let m = BilinearStateModel::new(a0, a, g, b);
                    issues.extend("model", m.validate());
                    Some(StateModel::Bilinear(m))
                }
            }
        }
        _ => None,
    };
    let n = state.as_ref().map(StateModel::dim);

    let ms = &scenario.measurement;
    let c = issues.matrix("measurement.C", &ms.c);
    if let (Some(c), Some(n)) = (&c, n) {
        if c.cols() != n {
            issues.push("measurement.C", format!("must have {n} columns, got {}", c.cols()));
        }
    }
    let measurement = match ms.kind {
        MeasurementKind::Discrete => {
            if ms.phi_eta.is_some() {
                issues.push("measurement.phi_eta", "applies only to kind = \"continuous\"");
            }
            let r = match &ms.r {
                Some(r) => issues.matrix("measurement.R", r),
                None => {
                    issues.push("measurement.R", "is required for discrete measurements");
                    None
                }
            };
            let schedule = match (&ms.schedule, ms.every) {
                (Some(_), Some(_)) => {
                    issues.push("measurement", "give either schedule or every, not both");
                    Vec::new()
                }
                (Some(s), None) => s.clone(),
                (None, Some(every)) => {
                    if issues.positive("measurement.every", every) {
                        DiscreteMeasurementModel::regular_schedule(every, scenario.horizon)
                    } else {
                        Vec::new()
                    }
                }
                (None, None) => {
                    issues.push("measurement", "needs schedule or every");
                    Vec::new()
                }
            };
            if let Some(grid) = &grid {
                for &t in &schedule {
                    if !on_grid(grid, t) {
                        issues.push("measurement.schedule", format!("instant {t} is not on the dt grid within [0, horizon]"));
                    }
                }
            }
            match (c, r) {
                (Some(c), Some(r)) => {
                    let dm = DiscreteMeasurementModel::new(c, r, schedule);
                    issues.extend("measurement", dm.validate());
                    Some(Measurement::Discrete(dm))
                }
                _ => None,
            }
        }
        MeasurementKind::Continuous => {
            if ms.r.is_some() || ms.every.is_some() || ms.schedule.is_some() {
                issues.push("measurement", "R, every and schedule apply only to kind = \"discrete\"");
            }
            let phi = match &ms.phi_eta {
                Some(p) => issues.matrix("measurement.phi_eta", p),
                None => {
                    issues.push("measurement.phi_eta", "is required for continuous measurements");
                    None
                }
            };
            match (c, phi) {
                (Some(c), Some(phi)) => {
                    let cm = ContinuousMeasurementModel::new(c, phi);
                    issues.extend("measurement", cm.validate());
                    Some(Measurement::Continuous(cm))
                }
                _ => None,
            }
        }
    };

    let b0 = issues.matrix("initial.cov", &scenario.initial.cov).map(|cov| {
        let b = GaussianBelief::new(0.0, scenario.initial.mean.clone(), cov);
        if let Some(n) = n {
            if b.dim() != n {
                issues.push("initial.mean", format!("must have length {n}, got {}", b.dim()));
            }
        }
        issues.extend("initial", b.validate());
        b
    });

    let truth_x0 = scenario.truth.as_ref().map(|t| {
        if let Some(n) = n {
            if t.x0.len() != n {
                issues.push("truth.x0", format!("must have length {n}, got {}", t.x0.len()));
            }
        }
        if t.x0.iter().any(|x| !x.is_finite()) {
            issues.push("truth.x0", "has non-finite entries");
        }
        Vector::new(t.x0.clone())
    });

    let covariance_form = match scenario.filter.covariance_form.replace('-', "_").parse::<CovarianceForm>() {
        Ok(f) => f,
        Err(_) => {
            issues.push("filter.covariance_form", "must be as_printed or moment_exact");
            CovarianceForm::AsPrinted
        }
    };
    if let Some(h) = scenario.filter.ode_substep {
        issues.positive("filter.ode_substep", h);
    }
    if let Some(h) = scenario.filter.report_interval {
        issues.positive("filter.report_interval", h);
    }

    let filter = match (scenario.filter.kind, &state, &measurement) {
        (Some(FilterKind::Cd), Some(StateModel::Bilinear(_)), _) => {
            issues.push("filter.kind", "cd needs a linear model");
            FilterKind::Cd
        }
        (Some(FilterKind::Cc), Some(StateModel::Bilinear(_)), _) => {
            issues.push("filter.kind", "cc needs a linear model");
            FilterKind::Cc
        }
        (Some(FilterKind::Cd), _, Some(Measurement::Continuous(_))) => {
            issues.push("filter.kind", "cd needs discrete measurements");
            FilterKind::Cd
        }
        (Some(k @ (FilterKind::Cc | FilterKind::Bilinear)), _, Some(Measurement::Discrete(_))) => {
            issues.push("filter.kind", "cc and bilinear need continuous measurements");
            k
        }
        (Some(k), _, _) => k,
        (None, Some(StateModel::Bilinear(_)), Some(Measurement::Discrete(_))) => {
            issues.push("filter", "no filter handles a bilinear model with discrete measurements");
            FilterKind::Bilinear
        }
        (None, Some(StateModel::Bilinear(_)), _) => FilterKind::Bilinear,
        (None, _, Some(Measurement::Discrete(_))) => FilterKind::Cd,
        (None, _, _) => FilterKind::Cc,
    };

    if let Some(probes) = &scenario.verify.probes {
        for (k, p) in probes.iter().enumerate() {
            if n.is_some_and(|n| p.len() != n) || p.iter().any(|x| !x.is_finite()) {
                issues.push(&format!("verify.probes[{k}]"), "must be a finite vector of the state dimension");
            }
        }
    }

    if !issues.0.is_empty() {
        return Err(CliError::Validation(issues.0));
    }
    let (Some(state), Some(measurement), Some(b0), Some(grid)) = (state, measurement, b0, grid) else {
        return Err(CliError::validation("scenario incomplete"));
    };
    Ok(Setup { scenario, hash, state, measurement, b0, truth_x0, grid, filter, covariance_form })
}

fn on_grid(grid: &SimGrid, t: f64) -> bool {
    let k = (t - grid.t0) / grid.dt;
    t.is_finite() && k >= -1e-9 && (k - k.round()).abs() <= 1e-6 && (k.round() as usize) <= grid.steps
}
