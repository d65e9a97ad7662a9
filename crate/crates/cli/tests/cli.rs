use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_epitrack");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn epitrack(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = epitrack(&args);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn diagnostic(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr not json: {}", String::from_utf8_lossy(&o.stderr)))
}

const SMALL_TRACK: &str = r#"
seed = 4

[track]
m = 50
x0 = 0.5
horizon = 60
prior_var = 1e-2
process_noise = 1e-7
ma_window = 5
var_order = 1
misspecified = true

[track.degrees]
kind = "power_law"
gamma = 2.7
max_degree = 4

[track.kernel]
kind = "random"
max_degree = 4
seed = 2

[track.observation]
kind = "gaussian"
r = 5e-3
"#;

#[test]
fn shipped_configs_validate() {
    let pairs = [
        ("uniform_sampling", "track"),
        ("misspecified", "track"),
        ("pcrlb", "pcrlb"),
        ("threshold_sweep", "threshold"),
        ("synthetic_report", "report"),
        ("two_timescale", "evolve"),
    ];
    for (file, cmd) in pairs {
        let cfg = configs_dir().join(format!("{file}.toml"));
        let o = epitrack(&[cmd, "--config", cfg.to_str().unwrap(), "--dry-run"]);
        assert!(o.status.success(), "{file}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn track_writes_filter_log_and_mse_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "track.toml", SMALL_TRACK);
    let out = dir.path().join("out");
    run_ok("track", &cfg, &out, &[]);
    let log = fs::read_to_string(out.join("filter_log.csv")).unwrap();
    assert!(log.starts_with("t,degree,truth,observation,estimate\n"));
    assert_eq!(log.lines().count(), 1 + 60 * 4);
    let mse = fs::read_to_string(out.join("mse.csv")).unwrap();
    assert!(mse.starts_with("t,bayes_mse,misspecified_mse,ma_mse,var_mse\n"));
    assert_eq!(mse.lines().count(), 61);
    for line in mse.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[1..].iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["steady_state_mse"]["bayes"].as_f64().unwrap() > 0.0);
}

#[test]
fn pcrlb_writes_two_network_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pcrlb.toml",
        r#"
seed = 3
[pcrlb]
max_degree = 4
scale_free_gamma = 2.7
er_mean = 2.7
m = 10
x0 = 0.5
prior_var = 1e-3
r = 5e-3
epsilon = 1e-6
replications = 8
horizon = 15
[pcrlb.kernel]
kind = "random"
max_degree = 4
seed = 11
"#,
    );
    let out = dir.path().join("out");
    run_ok("pcrlb", &cfg, &out, &[]);
    let csv = fs::read_to_string(out.join("pcrlb.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,trace_bound,trace_mse,network_label"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 16);
    for label in ["scale_free", "erdos_renyi"] {
        let ns: Vec<usize> = rows.iter().filter(|r| r[3] == label).map(|r| r[0].parse().unwrap()).collect();
        assert_eq!(ns, (0..=15).collect::<Vec<_>>());
    }
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "track.toml", SMALL_TRACK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("track", &cfg, &a, &[]);
    run_ok("track", &cfg, &b, &[]);
    for name in ["filter_log.csv", "mse.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    run_ok("track", &cfg, &c, &["--seed", "5"]);
    assert_ne!(fs::read(a.join("mse.csv")).unwrap(), fs::read(c.join("mse.csv")).unwrap());
}

#[test]
fn report_on_synthetic_log_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "report.toml",
        r##"
seed = 2
[report]
hashtag = "#sis"
delta = 1.0
fit_max_degree = 20
[report.source]
kind = "synthetic"
nodes = 800
gamma = 2.5
max_degree = 20
spontaneous = 0.05
beta = 0.3
bins = 8
"##,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("report", &cfg, &a, &[]);
    run_ok("report", &cfg, &b, &[]);
    for name in ["events.jsonl", "deviations.csv", "model.csv", "rates.csv", "report.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["bins"], 8);
    let p = rep["ks"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn invalid_value_is_reported_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMALL_TRACK.replace("x0 = 0.5", "x0 = 1.5"));
    let out = dir.path().join("out");
    let o = epitrack(&["track", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let d = diagnostic(&o);
    assert_eq!(d["kind"], "config");
    assert_eq!(d["field"], "track.x0");
    assert!(!out.exists());
}

#[test]
fn unknown_keys_and_missing_tables_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "typo.toml", &SMALL_TRACK.replace("ma_window", "ma_windw"));
    let o = epitrack(&["track", "--config", typo.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(diagnostic(&o)["message"].as_str().unwrap().contains("ma_windw"));

    let o = epitrack(&["pcrlb", "--config", typo.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), "track.toml", SMALL_TRACK);
    let o = epitrack(&["pcrlb", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["field"], "pcrlb");

    let o = epitrack(&["track", "--config", dir.path().join("absent.toml").to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stochastic_commands_need_an_explicit_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "track.toml", &SMALL_TRACK.replace("seed = 4\n", ""));
    let o = epitrack(&["track", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["field"], "seed");
    let o = epitrack(&["track", "--config", cfg.to_str().unwrap(), "--dry-run", "--seed", "1"]);
    assert!(o.status.success());
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "track.toml", SMALL_TRACK);
    let out = dir.path().join("out");
    let o = epitrack(&["track", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
    assert!(o.status.success());
    assert!(!out.exists());
}

#[test]
fn runtime_failure_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    // Spontaneous infection keeps every lambda endemic, so the empirical search fails.
    let cfg = write_config(
        dir.path(),
        "thr.toml",
        r#"
[threshold]
p_grid = [0.5]
k_start = 3
k_end = 10
empirical = true
[threshold.rho0]
kind = "uniform"
max_degree = 3
[threshold.kernel]
kind = "constant"
max_degree = 3
p12 = 1.0
p21 = 0.3
"#,
    );
    let out = dir.path().join("out");
    let o = epitrack(&["threshold", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(diagnostic(&o)["kind"], "runtime");
    assert!(!out.exists());
}

#[test]
fn generated_graph_feeds_fit_by_relative_path() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_config(
        dir.path(),
        "gen.toml",
        "seed = 6\nout = \"graph\"\n[generate.graph]\nmodel = \"scale_free\"\nnodes = 5000\ngamma = 2.7\nmax_degree = 40\n",
    );
    let o = epitrack(&["generate", "--config", gen.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("graph/graph.edges").is_file());
    assert!(dir.path().join("graph/degrees.csv").is_file());

    let fit = write_config(
        dir.path(),
        "fit.toml",
        "out = \"fit\"\n[fit]\nl_max = 40\n[fit.graph]\nmodel = \"edge_list\"\npath = \"graph/graph.edges\"\n",
    );
    let o = epitrack(&["fit", "--config", fit.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit/fit.json")).unwrap()).unwrap();
    let gamma = report["exponent"].as_f64().unwrap();
    assert!((gamma - 2.7).abs() < 0.15, "gamma {gamma}");

    let missing = write_config(
        dir.path(),
        "missing.toml",
        "[fit]\n[fit.graph]\nmodel = \"edge_list\"\npath = \"nope.edges\"\n",
    );
    let o = epitrack(&["fit", "--config", missing.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["field"], "fit.graph.path");
}

#[test]
fn ingest_fixture_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = [
        r##"{"ts": 0, "user": "@a", "mentions": ["b"], "text": "hello #SIS"}"##,
        r##"{"ts": 10, "user": "c", "mentions": [], "text": "unrelated"}"##,
        r##"{"ts": 70000, "user": "b", "mentions": ["c"], "text": "#sis again"}"##,
    ]
    .join("\n");
    fs::write(dir.path().join("events.jsonl"), log).unwrap();
    let cfg = write_config(
        dir.path(),
        "ingest.toml",
        "[ingest]\nlog = \"events.jsonl\"\nhashtag = \"#sis\"\ndelta = 0.0\n",
    );
    let out = dir.path().join("out");
    run_ok("ingest", &cfg, &out, &[]);
    assert_eq!(fs::read_to_string(out.join("users.csv")).unwrap(), "node,user\n0,a\n1,b\n2,c\n");
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series, "bin,degree,x\n0,1,0.5\n0,2,0\n1,1,0.5\n1,2,1\n");
    assert!(fs::read_to_string(out.join("rates.csv")).unwrap().starts_with("l,a,p_hat,count\n"));
}

#[test]
fn meanfield_and_evolve_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mf.toml",
        r#"
[meanfield]
m = 20
x0 = 0.3
horizon = 50
[meanfield.degrees]
kind = "poisson"
mean = 2.0
max_degree = 5
[meanfield.kernel]
kind = "contact"
max_degree = 6
beta = 0.4
recovery = 0.5

[evolve]
mode = "distribution"
p = 0.5
k_start = 3
k_end = 10
[evolve.rho0]
kind = "explicit"
probs = [1.0, 0.0, 0.0, 0.0]
"#,
    );
    let out = dir.path().join("out");
    run_ok("meanfield", &cfg, &out, &[]);
    for name in ["meanfield.csv", "dynamics.json", "fixed_point.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let fp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fixed_point.json")).unwrap()).unwrap();
    assert_eq!(fp["converged"], true);
    run_ok("evolve", &cfg, &out, &[]);
    let csv = fs::read_to_string(out.join("evolution.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
}
