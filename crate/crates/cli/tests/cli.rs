use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cheap_knockoffs::linalg::standard_normal_matrix;
use cheap_knockoffs::rng::stream;

fn cheapko(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cheapko"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// `n × 5` gaussian features; `y` depends on `a` and `c`.
fn write_data(dir: &Path, binary: bool) -> PathBuf {
    let mut rng = stream(11, 0);
    let n = 80;
    let x = standard_normal_matrix(n, 5, &mut rng);
    let e = standard_normal_matrix(n, 1, &mut rng);
    let mut text = String::from("a,b,y,c,d,e\n");
    for i in 0..n {
        let signal = 2.0 * x[(i, 0)] - 1.5 * x[(i, 2)];
        let y = if binary {
            f64::from(u8::from(signal + e[(i, 0)] > 0.0))
        } else {
            signal + e[(i, 0)]
        };
        text += &format!(
            "{},{},{},{},{},{}\n",
            x[(i, 0)],
            x[(i, 1)],
            y,
            x[(i, 2)],
            x[(i, 3)],
            x[(i, 4)]
        );
    }
    let path = dir.join(if binary { "binary.csv" } else { "data.csv" });
    std::fs::write(&path, text).unwrap();
    path
}

fn write_costs(dir: &Path, name: &str, rows: &[(&str, &str)]) -> PathBuf {
    let mut text = String::from("feature,omega\n");
    for (f, w) in rows {
        text += &format!("{f},{w}\n");
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn default_costs(dir: &Path) -> PathBuf {
    write_costs(dir, "costs.csv", &[("a", "2"), ("b", "3"), ("c", "4"), ("d", "2"), ("e", "5")])
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn select_writes_stable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let costs = default_costs(dir.path());
    let run = |out: &Path| {
        let o = cheapko(&[
            "select", "--data", s(&data), "--response", "y", "--costs", s(&costs), "--seed", "3", "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        o
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let first = run(&out_a);
    let second = run(&out_b);
    assert_eq!(first.stdout, second.stdout);

    let path_csv = std::fs::read_to_string(out_a.join("path.csv")).unwrap();
    assert_eq!(
        path_csv.lines().next().unwrap(),
        "k,feature,omega,kappa,tau,selected,cost_k,ubar_k,wfdp_k"
    );
    assert_eq!(path_csv.lines().count(), 6);
    for file in ["path.csv", "bound.json", "statistics.json", "summary.json"] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs between runs"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["covariance_source"], "empirical");
    assert_eq!(summary["costs"], serde_json::json!([2, 3, 4, 2, 5]));
    assert_eq!(summary["selections"].as_array().unwrap().len(), 5);
    assert!(!summary["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn select_at_k_and_known_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let costs = default_costs(dir.path());
    let sigma = dir.path().join("sigma.csv");
    std::fs::write(&sigma, "1,0,0,0,0\n0,1,0,0,0\n0,0,1,0,0\n0,0,0,1,0\n0,0,0,0,1\n").unwrap();
    let out = dir.path().join("out");
    let o = cheapko(&[
        "select", "--data", s(&data), "--response", "y", "--costs", s(&costs), "--sigma", s(&sigma), "--at-k", "1,3",
        "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["covariance_source"], "file");
    let ks: Vec<u64> = summary["selections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["k"].as_u64().unwrap())
        .collect();
    assert_eq!(ks, vec![1, 3]);
}

#[test]
fn select_binomial_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), true);
    let costs = default_costs(dir.path());
    let out = dir.path().join("out");
    let o = cheapko(&[
        "select", "--data", s(&data), "--response", "y", "--family", "binomial", "--costs", s(&costs), "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn cost_below_two_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let costs = write_costs(dir.path(), "bad.csv", &[("a", "2"), ("b", "1"), ("c", "4"), ("d", "2"), ("e", "5")]);
    let o = cheapko(&["select", "--data", s(&data), "--response", "y", "--costs", s(&costs), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'b'") && stderr(&o).contains(">= 2"), "{}", stderr(&o));
}

#[test]
fn non_integer_costs_need_cost_scale() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let costs = write_costs(
        dir.path(),
        "frac.csv",
        &[("a", "1.5"), ("b", "2.2"), ("c", "0.4"), ("d", "3"), ("e", "2")],
    );
    let o = cheapko(&["select", "--data", s(&data), "--response", "y", "--costs", s(&costs), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--cost-scale"));

    let out = dir.path().join("scaled");
    let o = cheapko(&[
        "select", "--data", s(&data), "--response", "y", "--costs", s(&costs), "--cost-scale", "2", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["costs"], serde_json::json!([3, 4, 2, 6, 4]));
}

#[test]
fn omega_override_gives_uniform_costs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let out = dir.path().join("out");
    let o = cheapko(&["select", "--data", s(&data), "--response", "y", "--omega-override", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("path.csv")).unwrap();
    for rec in rdr.records() {
        assert_eq!(&rec.unwrap()[2], "2");
    }
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), false);
    let costs = default_costs(dir.path());
    let o = cheapko(&["select", "--data", s(&data), "--response", "zz", "--costs", s(&costs), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("'zz'"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,y\n1,2\nx,3\n1,1\n").unwrap();
    let o = cheapko(&["select", "--data", s(&bad), "--response", "y", "--omega-override", "2", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 2") && stderr(&o).contains("'a'"), "{}", stderr(&o));
}

fn write_small_config(dir: &Path, reps: usize) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        format!(
            "n = 40\np = 6\nbeta = [2, 2, 0, 0, 0, 0]\ngamma = 0.5\ngamma_sweep = [0.0, 1.0]\n\
             cost_expensive = 4\ncost_cheap = 2\nreps = {reps}\nseed = 9\ncv_folds = 5\ncv_grid = 15\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_both_modes_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), 3);
    let run = |out: &Path| {
        let o = cheapko(&["simulate", "--config", s(&cfg), "--mode", "both", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        o
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run(&a);
    let second = run(&b);
    assert_eq!(first.stdout, second.stdout);
    let table = String::from_utf8(first.stdout).unwrap();
    assert!(table.contains("cheap") && table.contains("baseline-omega2"));

    let files = [
        "summary.csv",
        "gamma-0/tradeoff.csv",
        "gamma-0/report-cheap.json",
        "gamma-0/violations-baseline-omega2.csv",
        "gamma-1/report-baseline-omega2.json",
        "gamma-1/violations-cheap.csv",
    ];
    for f in files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let tradeoff = std::fs::read_to_string(a.join("gamma-1/tradeoff.csv")).unwrap();
    assert_eq!(tradeoff.lines().next().unwrap(), "k,mean_cost,mean_rmse,mode");
    assert_eq!(tradeoff.lines().count(), 1 + 2 * 6);
    let violations = std::fs::read_to_string(a.join("gamma-1/violations-cheap.csv")).unwrap();
    assert_eq!(violations.lines().next().unwrap(), "rep,flag,sup_ratio");
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "gamma,mode,violation_rate,reps_ok,reps_failed");
}

#[test]
fn simulate_rejects_zero_reps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), 0);
    let o = cheapko(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn shipped_config_parses_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/standard.toml");
    let o = cheapko(&["simulate", "--config", s(&cfg), "--reps", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for g in ["0", "0.25", "0.5", "0.75", "1"] {
        assert!(dir.path().join(format!("gamma-{g}/report-cheap.json")).exists());
    }
}

#[test]
fn validate_knockoffs_reports_and_is_deterministic() {
    let args = ["validate-knockoffs", "--omega", "2,3,4,2,3", "--n-mc", "20000", "--null-reps", "40", "--seed", "5"];
    let first = cheapko(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = cheapko(&args);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    let dev: f64 = text
        .lines()
        .find(|l| l.starts_with("covariance deviation"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev < 0.05, "covariance deviation {dev}");
    assert!(text.contains("p-value"));
}

#[test]
fn validate_knockoffs_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diag");
    let o = cheapko(&[
        "validate-knockoffs", "--omega", "2,3", "--n-mc", "500", "--null-reps", "5", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("plan.json").exists() && out.join("diagnostics.json").exists());
}

#[test]
fn oversized_s_is_infeasible() {
    let o = cheapko(&["validate-knockoffs", "--omega", "2,3,4", "--s-override", "5,5,5"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
