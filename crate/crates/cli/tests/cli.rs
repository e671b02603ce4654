use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ouinf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ouinf")).args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const NAMES: [&str; 8] = [
    "transition-moments",
    "derivative-bounds",
    "resolvent-identity",
    "neumann-contraction",
    "lemma41-scaling",
    "beta-regularization",
    "hypothesis-check",
    "localization-roundtrip",
];

#[test]
fn lists_the_registry() {
    let out = ouinf(&["list-scenarios"]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    for n in NAMES {
        assert!(stdout.contains(n), "{n} missing");
    }
    assert!(stdout.contains("S_lambda f = R_lambda f(y0) + S_lambda B R_lambda f"));

    let json = text(&ouinf(&["list-scenarios", "--json"]).stdout);
    assert_eq!(json.matches("\"name\"").count(), 8);
    assert_eq!(json.matches("\"anchor\"").count(), 8);
}

#[test]
fn unknown_scenario_prints_registry() {
    let out = ouinf(&["--scenario", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("unknown scenario"));
    let listed = text(&out.stdout);
    assert!(NAMES.iter().all(|n| listed.contains(n)));
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(ouinf(&[]).status.code(), Some(2));
    assert_eq!(ouinf(&["--scenario", "lemma41-scaling", "--paths", "many"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "scenario = \"lemma41-scaling\"\n[budget]\nsamples = [\n").unwrap();
    let out = ouinf(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line"), "{}", text(&out.stderr));

    fs::write(&cfg, "scenario = \"lemma41-scaling\"\n[scheme]\nstepsize = 1\n").unwrap();
    let out = ouinf(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("stepsize"));
}

#[test]
fn infeasible_budget_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = ouinf(&[
        "--scenario",
        "resolvent-identity",
        "--override",
        "lambdas=[2.0]",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("too short"));
    assert!(!out_dir.exists());
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn passing_run_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (k, threads) in ["1", "8"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = ouinf(&[
            "--scenario",
            "transition-moments",
            "--seed",
            "7",
            "--paths",
            "2000",
            "--override",
            "budget.samples=20000",
            "--threads",
            threads,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
        runs.push(read_all(&out_dir));
    }
    assert_eq!(runs[0], runs[1]);
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["config.toml", "summary.json", "transition-moments-transition.csv", "transition-moments-weak-bias.csv", "transition-moments.csv"]);
    let csv = text(&runs[0].iter().find(|(n, _)| n == "transition-moments.csv").unwrap().1);
    assert!(csv.starts_with("scenario,quantity,value,std_error,tolerance,pass\n"));
    let summary = text(&runs[0].iter().find(|(n, _)| n == "summary.json").unwrap().1);
    assert!(summary.contains("\"seed\": 7") && summary.contains("\"pass\": true"));
}

#[test]
fn config_file_is_layered_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scenario = \"lemma41-scaling\"\nseed = 3\nlambdas = [1.0, 16.0]\n[scheme]\npaths = 500\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = ouinf(&["--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let echoed = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 3") && echoed.contains("paths = 500"));
    // The echoed configuration reproduces the run.
    let again = dir.path().join("again");
    let out = ouinf(&["--config", out_dir.join("config.toml").to_str().unwrap(), "--out-dir", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_all(&out_dir), read_all(&again));
}

#[test]
fn failing_criteria_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = ouinf(&[
        "--scenario",
        "beta-regularization",
        "--paths",
        "100",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("FAIL beta-regularization/initial-growth"));
    assert!(dir.path().join("summary.json").exists());
}
