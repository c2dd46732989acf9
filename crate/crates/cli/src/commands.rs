//! The four subcommands. Each writes its files into the output directory,
//! starting with `scenario.toml`, the resolved scenario echoed back.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cfkalman::cfverify::{
    cf_sde_residual, default_probes, gaussian_mgf, mgf_evolution_report, third_moment_report, write_report, ProbeKind,
    ProbeRecord,
};
use cfkalman::kf_bilinear::{self, BilinearFilterConfig};
use cfkalman::kf_cc::{self, CcFilterConfig};
use cfkalman::kf_cd::{self, CdFilterConfig};
use cfkalman::sdesim::{
    gen_continuous_measurements, gen_discrete_measurements, noise_rng, sample_gaussian, simulate, MeasurementRecord,
    NoisePurpose, SamplePath, Scheme, StreamKey,
};
use cfkalman::{FilterTrajectory, LinearStateModel, Matrix, Vector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::scenario::{FilterKind, Measurement, Setup, StateModel};

const MGF_TOLERANCE: f64 = 1e-10;
const THIRD_MOMENT_TOLERANCE: f64 = 1e-12;
/// cf-sde tolerance in units of `dt · max MGF` along the run.
const CF_SDE_TOLERANCE_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    All,
    MgfEvolution,
    CfSde,
    ThirdMoment,
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Check::All),
            "mgf-evolution" | "theorem1" => Ok(Check::MgfEvolution),
            "cf-sde" | "theorem2" => Ok(Check::CfSde),
            "third-moment" | "appendix" => Ok(Check::ThirdMoment),
            other => Err(format!("unknown check {other:?} (expected all, mgf-evolution, cf-sde or third-moment)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Number of independent repetitions for `simulate` and `filter`.
    pub mc: usize,
    pub check: Check,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out: PathBuf::from("out"), mc: 1, check: Check::All }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    header: String,
}

impl<'a> Outputs<'a> {
    fn create(setup: &Setup, dir: &'a Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let out = Self { dir, header: setup.header() };
        let mut resolved = setup.scenario.clone();
        resolved.filter.kind = Some(setup.filter);
        resolved.filter.covariance_form = setup.covariance_form.as_str().to_string();
        let body = toml::to_string(&resolved).map_err(|e| CliError::Io(e.to_string()))?;
        out.write("scenario.toml", |w| {
            writeln!(w, "# {}", out.header)?;
            w.write_all(body.as_bytes())?;
            Ok(())
        })?;
        Ok(out)
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn comment(&self) -> Option<&str> {
        Some(&self.header)
    }
}

fn linear_model<'a>(setup: &'a Setup, what: &str) -> CliResult<&'a LinearStateModel> {
    setup.state.as_linear().ok_or_else(|| CliError::validation(format!("model {what} needs kind = \"linear\"")))
}

/// Truth path and measurement record for the run with stream `key`.
fn simulate_run(setup: &Setup, key: StreamKey) -> CliResult<(SamplePath, MeasurementRecord)> {
    let x0 = match &setup.truth_x0 {
        Some(x) => x.clone(),
        None => sample_gaussian(&mut noise_rng(key, NoisePurpose::InitialState), &setup.b0.mean, &setup.b0.cov),
    };
    let path = match &setup.state {
        StateModel::Linear(m) => simulate(m, Scheme::EulerMaruyama, &x0, &setup.grid, key)?,
        StateModel::Bilinear(m) => simulate(m, Scheme::Heun, &x0, &setup.grid, key)?,
    };
    let record = match &setup.measurement {
        Measurement::Discrete(dm) => MeasurementRecord::Discrete(gen_discrete_measurements(&path, dm, key)?),
        Measurement::Continuous(cm) => MeasurementRecord::Continuous(gen_continuous_measurements(&path, cm, key)?),
    };
    Ok((path, record))
}

fn run_filter(setup: &Setup, record: &MeasurementRecord) -> CliResult<FilterTrajectory> {
    let spec = &setup.scenario.filter;
    let traj = match (setup.filter, &setup.measurement, record) {
        (FilterKind::Cd, Measurement::Discrete(dm), MeasurementRecord::Discrete(rec)) => {
            let cfg = CdFilterConfig {
                ode_substep: spec.ode_substep,
                use_vec_form: spec.use_vec_form,
                joseph_update: spec.joseph_update,
                report_interval: spec.report_interval,
            };
            kf_cd::run(linear_model(setup, "filter cd")?, dm, rec, &setup.b0, setup.grid.horizon(), &cfg)?
        }
        (FilterKind::Cc, Measurement::Continuous(cm), MeasurementRecord::Continuous(rec)) => {
            let cfg = CcFilterConfig {
                dt: setup.grid.dt,
                use_vec_form: spec.use_vec_form,
                rk4_covariance: spec.rk4_covariance,
            };
            kf_cc::run(linear_model(setup, "filter cc")?, cm, rec, &setup.b0, &cfg)?
        }
        (FilterKind::Bilinear, Measurement::Continuous(cm), MeasurementRecord::Continuous(rec)) => {
            let cfg = BilinearFilterConfig::new(setup.grid.dt, setup.covariance_form);
            kf_bilinear::run(&setup.state.to_bilinear(), cm, rec, &setup.b0, &cfg)?
        }
        _ => return Err(CliError::validation("filter does not match the measurement kind")),
    };
    Ok(traj)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario_hash: String,
    pub seed: u64,
    pub final_mean: Vec<f64>,
    pub final_cov: Vec<Vec<f64>>,
    pub innovation_mean: Option<Vec<f64>>,
    pub innovation_var: Option<Vec<f64>>,
    /// Mean of `‖m − x‖²` over trajectory rows that fall on the simulation grid.
    pub mse: f64,
    /// Mean of `tr P` over the same rows.
    pub p_trace_avg: f64,
}

fn summarize(setup: &Setup, path: &SamplePath, traj: &FilterTrajectory) -> Summary {
    let (mut err, mut trace, mut count) = (0.0, 0.0, 0usize);
    for b in traj.beliefs() {
        if let Some(k) = path.index_of(b.t) {
            err += b.mean.iter().zip(path.states[k].iter()).map(|(m, x)| (m - x).powi(2)).sum::<f64>();
            trace += b.cov.trace();
            count += 1;
        }
    }
    let count = count.max(1) as f64;
    let last = traj.final_belief().unwrap_or(&setup.b0);
    let stats = traj.innovation_stats();
    Summary {
        scenario_hash: setup.hash.clone(),
        seed: setup.seed(),
        final_mean: last.mean.to_vec(),
        final_cov: last.cov.to_nested(),
        innovation_mean: stats.as_ref().map(|s| s.0.clone()),
        innovation_var: stats.map(|s| s.1),
        mse: err / count,
        p_trace_avg: trace / count,
    }
}

fn run_name(base: &str, run: usize, total: usize) -> String {
    if total == 1 {
        format!("{base}.csv")
    } else {
        format!("{base}_run{run}.csv")
    }
}

/// Writes `truth.csv` and `measurements.csv`, or `truth_run{i}.csv` and
/// `measurements_run{i}.csv` for each of several repetitions.
pub fn cmd_simulate(setup: &Setup, opts: &RunOptions) -> CliResult<()> {
    let out = Outputs::create(setup, &opts.out)?;
    let runs = opts.mc.max(1);
    let results: Vec<(SamplePath, MeasurementRecord)> = (0..runs as u64)
        .into_par_iter()
        .map(|i| simulate_run(setup, StreamKey::new(setup.seed(), i)))
        .collect::<CliResult<_>>()?;
    for (i, (path, record)) in results.iter().enumerate() {
        out.write(&run_name("truth", i, runs), |w| Ok(path.write_csv(w, out.comment())?))?;
        out.write(&run_name("measurements", i, runs), |w| Ok(record.write_csv(w, out.comment())?))?;
    }
    Ok(())
}

/// Writes `trajectory.csv` and `summary.json` for run 0. With several
/// repetitions, `mc_runs.csv` adds one summary row per run.
pub fn cmd_filter(setup: &Setup, opts: &RunOptions) -> CliResult<Summary> {
    let out = Outputs::create(setup, &opts.out)?;
    let runs = opts.mc.max(1);
    let results: Vec<(Summary, Option<FilterTrajectory>)> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let (path, record) = simulate_run(setup, StreamKey::new(setup.seed(), i))?;
            let traj = run_filter(setup, &record)?;
            let summary = summarize(setup, &path, &traj);
            Ok((summary, (i == 0).then_some(traj)))
        })
        .collect::<CliResult<_>>()?;

    let first = results[0].1.as_ref().expect("run 0 keeps its trajectory");
    out.write("trajectory.csv", |w| Ok(first.write_csv(w, out.comment())?))?;
    let summary = results[0].0.clone();
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    out.write("summary.json", |w| Ok(writeln!(w, "{json}")?))?;
    if runs > 1 {
        out.write("mc_runs.csv", |w| write_mc_runs(w, out.comment(), results.iter().map(|r| &r.0)))?;
    }
    Ok(summary)
}

fn write_mc_runs<'s>(w: &mut impl Write, comment: Option<&str>, runs: impl Iterator<Item = &'s Summary>) -> CliResult<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut header_done = false;
    for (i, s) in runs.enumerate() {
        let nu_mean = s.innovation_mean.clone().unwrap_or_default();
        let nu_var = s.innovation_var.clone().unwrap_or_default();
        if !header_done {
            let mut h = String::from("run,mse,p_trace_avg");
            for k in 1..=s.final_mean.len() {
                write!(h, ",m{k}").unwrap();
            }
            for k in 1..=nu_mean.len() {
                write!(h, ",nu_mean{k}").unwrap();
            }
            for k in 1..=nu_var.len() {
                write!(h, ",nu_var{k}").unwrap();
            }
            writeln!(w, "{h}")?;
            header_done = true;
        }
        let mut row = format!("{i},{:?},{:?}", s.mse, s.p_trace_avg);
        for v in s.final_mean.iter().chain(&nu_mean).chain(&nu_var) {
            write!(row, ",{v:?}").unwrap();
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

fn lyapunov_residual(model: &LinearStateModel, p: &Matrix) -> f64 {
    let a = model.a.at(0.0);
    let mut r = &*a * p;
    r += &(p * &a.transpose());
    r += &model.noise_cov(0.0);
    r.frobenius_norm()
}

/// Writes `stationary.csv` with rows `kind,residual,P11,P12,..,Pnn`.
///
/// Discrete measurements give the stationary prediction covariance
/// (`lyapunov`) and its one-step update (`updated`); continuous
/// measurements give the algebraic Riccati solution (`riccati`).
pub fn cmd_stationary(setup: &Setup, opts: &RunOptions) -> CliResult<Vec<(String, f64, Matrix)>> {
    let model = linear_model(setup, "stationary")?;
    let mut rows = Vec::new();
    match &setup.measurement {
        Measurement::Discrete(dm) => {
            let p = kf_cd::stationary_predict_cov(model)?;
            rows.push(("lyapunov".to_string(), lyapunov_residual(model, &p), p.clone()));
            let updated = kf_cd::stationary_update_cov(&p, dm)?;
            let prior = cfkalman::GaussianBelief::new(0.0, Vector::zeros(p.rows()), p);
            let y = Vector::zeros(dm.m);
            let direct = kf_cd::update(&prior, dm, &y, 0.0, &CdFilterConfig { joseph_update: false, ..Default::default() })?;
            rows.push(("updated".to_string(), updated.max_abs_diff(&direct.cov), updated));
        }
        Measurement::Continuous(cm) => {
            let p = kf_cc::stationary_cov(model, cm)?;
            rows.push(("riccati".to_string(), kf_cc::riccati_residual(model, cm, &p)?, p));
        }
    }
    let out = Outputs::create(setup, &opts.out)?;
    out.write("stationary.csv", |w| {
        writeln!(w, "# {}", out.header)?;
        let n = rows[0].2.rows();
        let mut h = String::from("kind,residual");
        for i in 1..=n {
            for j in i..=n {
                write!(h, ",P{i}{j}").unwrap();
            }
        }
        writeln!(w, "{h}")?;
        for (kind, residual, p) in &rows {
            let mut line = format!("{kind},{residual:?}");
            for v in p.upper_triangle() {
                write!(line, ",{v:?}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Writes `verify_report.txt`; fails with exit status 2 when any probe is
/// outside its tolerance.
pub fn cmd_verify(setup: &Setup, opts: &RunOptions) -> CliResult<Vec<ProbeRecord>> {
    let wants = |c: Check| opts.check == Check::All || opts.check == c;
    let linear = setup.state.as_linear();
    if linear.is_none() && matches!(opts.check, Check::MgfEvolution | Check::CfSde) {
        return Err(CliError::validation("model: mgf-evolution and cf-sde checks need kind = \"linear\""));
    }
    let continuous_cc = matches!(setup.measurement, Measurement::Continuous(_)) && setup.filter == FilterKind::Cc;
    if opts.check == Check::CfSde && !continuous_cc {
        return Err(CliError::validation("measurement: cf-sde check needs continuous measurements and filter cc"));
    }
    let out = Outputs::create(setup, &opts.out)?;

    let probes: Vec<Vector> = match &setup.scenario.verify.probes {
        Some(p) => p.iter().cloned().map(Vector::new).collect(),
        None => default_probes(setup.b0.dim()),
    };
    let (path, record) = simulate_run(setup, StreamKey::new(setup.seed(), 0))?;
    drop(path);
    let traj = run_filter(setup, &record)?;
    let last = traj.final_belief().unwrap_or(&setup.b0);

    let mut records = Vec::new();
    if let Some(model) = linear {
        if wants(Check::MgfEvolution) {
            records.extend(mgf_evolution_report(model, &setup.b0, &probes, MGF_TOLERANCE)?);
            records.extend(mgf_evolution_report(model, last, &probes, MGF_TOLERANCE)?);
        }
        if wants(Check::CfSde) && continuous_cc {
            let (Measurement::Continuous(cm), MeasurementRecord::Continuous(rec)) = (&setup.measurement, &record) else {
                unreachable!("continuous measurements produce a continuous record");
            };
            for s in &probes {
                let residual = cf_sde_residual(model, cm, &traj, rec, s)?;
                let scale = traj.beliefs().map(|b| gaussian_mgf(b, s)).collect::<cfkalman::Result<Vec<_>>>()?;
                let scale = scale.into_iter().fold(1.0, f64::max);
                let tol = CF_SDE_TOLERANCE_FACTOR * setup.grid.dt * scale;
                records.push(ProbeRecord::new("cf_sde", ProbeKind::Mgf, s, residual, 0.0, residual, tol));
            }
        }
    }
    if wants(Check::ThirdMoment) {
        records.extend(third_moment_report(&setup.b0, THIRD_MOMENT_TOLERANCE));
        records.extend(third_moment_report(last, THIRD_MOMENT_TOLERANCE));
    }

    out.write("verify_report.txt", |w| Ok(write_report(w, out.comment(), &records)?))?;
    let failed = records.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::VerificationFailed(failed, records.len()));
    }
    Ok(records)
}
