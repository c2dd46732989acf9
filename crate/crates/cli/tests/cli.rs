use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const OU_DISCRETE: &str = r#"
horizon = 1.0
dt = 0.01

[model]
kind = "linear"
A = [[-1.0]]
G = [[1.0]]

[measurement]
kind = "discrete"
C = [[1.0]]
R = [[0.5]]
every = 1.0

[initial]
mean = [1.0]
cov = [[0.0]]
"#;

const OU_CONTINUOUS: &str = r#"
seed = 11
horizon = 1.0
dt = 0.001

[model]
kind = "linear"
A = [[-1.0, 0.3], [0.0, -0.5]]
G = [[0.5, 0.0], [0.2, 0.4]]

[measurement]
kind = "continuous"
C = [[1.0, 0.0]]
phi_eta = [[0.2]]

[initial]
mean = [0.2, -0.1]
cov = [[0.3, 0.05], [0.05, 0.2]]
"#;

const BILINEAR: &str = r#"
seed = 3
horizon = 0.5
dt = 0.001

[model]
kind = "bilinear"
A0 = [0.1]
A = [[-0.5]]
G = [[0.3]]
B = [0.4]

[measurement]
kind = "continuous"
C = [[1.0]]
phi_eta = [[0.1]]

[initial]
mean = [1.0]
cov = [[0.1]]

[filter]
covariance_form = "moment-exact"
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn scenario(&self, name: &str, text: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn cfkalman(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfkalman"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t.to_string());
    }
    cmd.output().unwrap()
}

fn run(sub: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cfkalman(&args, None)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV with a `#` provenance line and a header.
fn csv_rows(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let provenance = lines.next().unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (provenance, header, rows)
}

#[test]
fn discrete_update_rows_match_scalar_formulas() {
    let ws = Workspace::new();
    let sc = ws.scenario("ou.toml", OU_DISCRETE);
    let out = ws.out("o");
    assert!(run("simulate", &sc, &out, &[]).status.success());
    let (_, _, meas) = csv_rows(&out.join("measurements.csv"));
    assert!(run("filter", &sc, &out, &[]).status.success());
    let (_, header, rows) = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(header, ["t", "tag", "m1", "P11", "nu1"]);

    assert_eq!(meas.len(), 1);
    let y: f64 = meas[0][1].parse().unwrap();
    let predicted = rows.iter().find(|r| r[1] == "predicted" && r[0] == "1.0").unwrap();
    let updated = rows.iter().find(|r| r[1] == "updated").unwrap();
    let num = |s: &str| s.parse::<f64>().unwrap();

    // closed-form OU moments from m = 1, P = 0 over one time unit
    let m_pred = (-1.0f64).exp();
    let p_pred = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((num(&predicted[2]) - m_pred).abs() <= 1e-8);
    assert!((num(&predicted[3]) - p_pred).abs() <= 1e-8);

    // Gaussian conditioning of x ~ N(m, P) on y = x + v, v ~ N(0, R)
    let r = 0.5;
    let m_post = (m_pred * r + y * p_pred) / (p_pred + r);
    let p_post = p_pred * r / (p_pred + r);
    assert!((num(&updated[2]) - m_post).abs() <= 1e-8);
    assert!((num(&updated[3]) - p_post).abs() <= 1e-8);
    assert!((num(&updated[4]) - (y - num(&predicted[2]))).abs() <= 1e-12);
}

#[test]
fn negative_noise_is_a_validation_error() {
    let ws = Workspace::new();
    let sc = ws.scenario("bad.toml", &OU_DISCRETE.replace("R = [[0.5]]", "R = [[-1.0]]"));
    let o = run("filter", &sc, &ws.out("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("measurement.R not SPD"), "{}", stderr(&o));
}

#[test]
fn parse_errors_report_the_line() {
    let ws = Workspace::new();
    let sc = ws.scenario("bad.toml", &OU_DISCRETE.replace("every = 1.0", "every = [1.0"));
    let o = run("simulate", &sc, &ws.out("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ParseError at line"), "{}", stderr(&o));
}

#[test]
fn default_seed_is_echoed() {
    let ws = Workspace::new();
    let sc = ws.scenario("ou.toml", OU_DISCRETE);
    let out = ws.out("o");
    assert!(run("simulate", &sc, &out, &[]).status.success());
    let echo = fs::read_to_string(out.join("scenario.toml")).unwrap();
    assert!(echo.lines().any(|l| l == "seed = 0"), "{echo}");
    assert!(echo.lines().any(|l| l == "kind = \"cd\""), "{echo}");

    assert!(run("simulate", &sc, &out, &["--seed", "42"]).status.success());
    let echo = fs::read_to_string(out.join("scenario.toml")).unwrap();
    assert!(echo.lines().any(|l| l == "seed = 42"), "{echo}");
}

#[test]
fn every_file_carries_provenance() {
    let ws = Workspace::new();
    let text = OU_DISCRETE;
    let sc = ws.scenario("ou.toml", text);
    let out = ws.out("o");
    for sub in ["simulate", "filter", "stationary", "verify"] {
        let o = run(sub, &sc, &out, &[]);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
    }
    use sha2::Digest;
    let hash = hex::encode(sha2::Sha256::digest(text.as_bytes()));
    let expected = format!("# scenario_hash={hash} seed=0");
    for name in ["scenario.toml", "truth.csv", "measurements.csv", "trajectory.csv", "stationary.csv", "verify_report.txt"] {
        let first = fs::read_to_string(out.join(name)).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, expected, "{name}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario_hash"], hash);
}

#[test]
fn summary_has_the_fixed_key_set() {
    let ws = Workspace::new();
    let sc = ws.scenario("cc.toml", OU_CONTINUOUS);
    let out = ws.out("o");
    let o = run("filter", &sc, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let keys: BTreeSet<&str> = summary.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "scenario_hash",
        "seed",
        "final_mean",
        "final_cov",
        "innovation_mean",
        "innovation_var",
        "mse",
        "p_trace_avg",
    ]
    .into();
    assert_eq!(keys, expected);
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["final_cov"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_passes_on_linear_scenarios() {
    let ws = Workspace::new();
    for (name, text) in [("cd.toml", OU_DISCRETE), ("cc.toml", OU_CONTINUOUS)] {
        let sc = ws.scenario(name, text);
        let out = ws.out(&format!("{name}.out"));
        let o = run("verify", &sc, &out, &["--verify", "all"]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let report = fs::read_to_string(out.join("verify_report.txt")).unwrap();
        let lines: Vec<&str> = report.lines().skip(2).collect();
        assert!(lines.iter().any(|l| l.starts_with("mgf_evolution ")));
        assert!(lines.iter().any(|l| l.starts_with("third_moment ")));
        assert!(lines.iter().all(|l| l.ends_with(" pass")), "{report}");
        if name == "cc.toml" {
            assert!(lines.iter().any(|l| l.starts_with("cf_sde ")));
        }
    }
}

#[test]
fn verify_selects_single_checks() {
    let ws = Workspace::new();
    let sc = ws.scenario("cc.toml", OU_CONTINUOUS);
    for (flag, check) in [("mgf-evolution", "mgf_evolution"), ("cf-sde", "cf_sde"), ("third-moment", "third_moment")] {
        let out = ws.out(flag);
        let o = run("verify", &sc, &out, &["--verify", flag]);
        assert!(o.status.success(), "{flag}: {}", stderr(&o));
        let report = fs::read_to_string(out.join("verify_report.txt")).unwrap();
        assert!(report.lines().skip(2).all(|l| l.starts_with(check)), "{report}");
    }
}

#[test]
fn unstable_drift_has_no_stationary_covariance() {
    let ws = Workspace::new();
    let sc = ws.scenario("unstable.toml", &OU_DISCRETE.replace("A = [[-1.0]]", "A = [[1.0]]"));
    let o = run("stationary", &sc, &ws.out("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SingularSystem"), "{}", stderr(&o));
}

#[test]
fn stationary_rows_match_scalar_solutions() {
    let ws = Workspace::new();
    let sc = ws.scenario("ou.toml", &OU_DISCRETE.replace("R = [[0.5]]", "R = [[1.0]]"));
    let out = ws.out("o");
    assert!(run("stationary", &sc, &out, &[]).status.success());
    let (_, header, rows) = csv_rows(&out.join("stationary.csv"));
    assert_eq!(header, ["kind", "residual", "P11"]);
    assert_eq!(rows[0][0], "lyapunov");
    assert!((rows[0][2].parse::<f64>().unwrap() - 0.5).abs() <= 1e-12);
    assert_eq!(rows[1][0], "updated");
    assert!((rows[1][2].parse::<f64>().unwrap() - 1.0 / 3.0).abs() <= 1e-12);

    // scalar Riccati 0 = −2P + 1 − P² has the positive root √2 − 1
    let cc = OU_DISCRETE.replace("kind = \"discrete\"", "kind = \"continuous\"").replace("R = [[0.5]]\nevery = 1.0", "phi_eta = [[1.0]]");
    let sc = ws.scenario("cc.toml", &cc);
    assert!(run("stationary", &sc, &out, &[]).status.success());
    let (_, _, rows) = csv_rows(&out.join("stationary.csv"));
    assert_eq!(rows[0][0], "riccati");
    assert!((rows[0][2].parse::<f64>().unwrap() - (2f64.sqrt() - 1.0)).abs() <= 1e-8);
    assert!(rows[0][1].parse::<f64>().unwrap() <= 1e-9);
}

#[test]
fn bilinear_scenario_runs_with_either_form() {
    let ws = Workspace::new();
    let sc = ws.scenario("bl.toml", BILINEAR);
    for form in ["as-printed", "moment-exact"] {
        let out = ws.out(form);
        let o = run("filter", &sc, &out, &["--covariance-form", form]);
        assert!(o.status.success(), "{form}: {}", stderr(&o));
        let echo = fs::read_to_string(out.join("scenario.toml")).unwrap();
        assert!(echo.contains(&format!("covariance_form = \"{}\"", form.replace('-', "_"))), "{echo}");
        assert!(echo.contains("kind = \"bilinear\""));
    }
    let o = run("filter", &sc, &ws.out("x"), &["--filter", "cc"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("filter.kind"), "{}", stderr(&o));
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let ws = Workspace::new();
    let sc = ws.scenario("cc.toml", OU_CONTINUOUS);
    let mut snapshots = Vec::new();
    for (k, threads) in [1, 4, 4].into_iter().enumerate() {
        let out = ws.out(&format!("o{k}"));
        for sub in ["simulate", "filter"] {
            let args = [sub, "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mc", "6"];
            let o = cfkalman(&args, Some(threads));
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        snapshots.push(files);
    }
    assert!(snapshots[0].iter().any(|(n, _)| n == "mc_runs.csv"));
    assert!(snapshots[0].iter().any(|(n, _)| n == "truth_run5.csv"));
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(snapshots[1], snapshots[2]);
}
