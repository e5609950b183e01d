use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aggcorrect::constraints::ConstraintRegion;
use aggcorrect::io::{write_labeled_pairs, ClassManifest};
use aggcorrect::model::{ContingencyMatrix, CountsVector};
use aggcorrect::sampling::stream_rng;
use aggcorrect::simulation::{simulate_labeled_pairs, Population, PopulationSpec, YModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aggcorrect"))
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn peculiar(file: &str) -> String {
    root()
        .join("data/peculiar")
        .join(file)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

/// Asserts a single-line JSON error on stderr and returns it.
fn error_record(out: &Output, code: i32) -> serde_json::Value {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    let value: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(value["code"], code);
    value
}

fn correct_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args = vec![
        "correct".to_string(),
        "--pairs".into(),
        peculiar("pairs.csv"),
        "--records".into(),
        peculiar("records.csv"),
        "--classes".into(),
        peculiar("classes.txt"),
        "--resolution".into(),
        "5000".into(),
        "--seed".into(),
        "42".into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn correct_writes_report_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let samples = dir.path().join("samples.csv");
    let mut args = correct_args(report.to_str().unwrap(), &["--prior", "jeffreys"]);
    args.extend(["--samples".into(), samples.display().to_string()]);
    let out = bin().args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let json = read_json(&report);
    assert_eq!(
        json["baseline"]["estimate"],
        serde_json::json!([-75.0, 175.0])
    );
    assert_eq!(json["baseline"]["negative"], true);
    assert_eq!(json["metadata"]["seed"], 42);
    assert_eq!(json["metadata"]["prior"], "jeffreys");
    assert!(json["metadata"]["timestamp_unix"].is_u64());
    assert!(json["metadata"]["acceptance_rate"].as_f64().unwrap() > 0.0);

    let text = fs::read_to_string(&samples).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("webshop,other"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5000);
    assert!(rows.iter().all(|r| !r.starts_with('-')));

    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("class"));
    assert!(stdout.contains("-75.0000"));
}

#[test]
fn reports_are_identical_except_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let out = bin()
            .args(correct_args(path.to_str().unwrap(), &["--workers", "2"]))
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = fs::read_to_string(&path).unwrap();
        let without: Vec<&str> = text
            .lines()
            .filter(|l| !l.contains("timestamp_unix"))
            .collect();
        reports.push(without.join("\n"));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn unconstrained_uniform_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = bin()
        .args(correct_args(
            path.to_str().unwrap(),
            &["--prior", "uniform", "--no-constraints"],
        ))
        .output()
        .unwrap();
    assert!(out.status.success());
    let json = read_json(&path);
    assert_eq!(json["metadata"]["constraints"], false);
    assert_eq!(json["metadata"]["prior"], "uniform");
    assert_eq!(json["metadata"]["accepted"], 5000);
}

#[test]
fn custom_prior_file() {
    let dir = tempfile::tempdir().unwrap();
    let prior = dir.path().join("prior.toml");
    fs::write(
        &prior,
        "alpha = [[3.0, 1.0], [1.0, 3.0]]\ngamma = [1.0, 1.0]\n",
    )
    .unwrap();
    let path = dir.path().join("r.json");
    let spec = format!("custom:{}", prior.display());
    let out = bin()
        .args(correct_args(path.to_str().unwrap(), &["--prior", &spec]))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read_json(&path)["metadata"]["prior"], "custom");
}

#[test]
fn run_config_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let config = root().join("data/peculiar/run.toml");
    let out = run(&[
        "correct",
        "--config",
        config.to_str().unwrap(),
        "--resolution",
        "1000",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json = read_json(&path);
    assert_eq!(json["metadata"]["resolution"], 1000);
    assert_eq!(json["metadata"]["seed"], 42);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.json");
    let out_str = out_path.to_str().unwrap();

    let missing = run(&[
        "correct",
        "--pairs",
        "/nonexistent/pairs.csv",
        "--records",
        &peculiar("records.csv"),
        "--classes",
        &peculiar("classes.txt"),
    ]);
    let record = error_record(&missing, 2);
    assert_eq!(record["error"], "input");
    assert!(record["message"]
        .as_str()
        .unwrap()
        .contains("/nonexistent/pairs.csv"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "true,predicted\nwebshop,shop\n").unwrap();
    let unknown = run(&[
        "correct",
        "--pairs",
        bad.to_str().unwrap(),
        "--records",
        &peculiar("records.csv"),
        "--classes",
        &peculiar("classes.txt"),
    ]);
    assert!(error_record(&unknown, 2)["message"]
        .as_str()
        .unwrap()
        .contains(":2:"));

    let starved = bin()
        .args(correct_args(out_str, &["--max-attempts-factor", "1"]))
        .output()
        .unwrap();
    assert_eq!(error_record(&starved, 3)["error"], "numerical");

    let prior = bin()
        .args(correct_args(out_str, &["--prior", "flat"]))
        .output()
        .unwrap();
    assert_eq!(error_record(&prior, 4)["error"], "config");

    error_record(&run(&["correct", "--bogus"]), 4);
    error_record(&run(&["frobnicate"]), 4);
    error_record(
        &bin()
            .args(correct_args(out_str, &["--resolution", "0"]))
            .output()
            .unwrap(),
        4,
    );

    let config = dir.path().join("bad.toml");
    fs::write(&config, "replications = \"many\"\n").unwrap();
    error_record(
        &run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_str,
        ]),
        4,
    );
}

#[test]
fn help_and_version_succeed() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}

fn read_draws(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn posterior_without_data_is_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("empty.csv");
    fs::write(&pairs, "true,predicted\n").unwrap();
    let draws = dir.path().join("draws.csv");
    let out = run(&[
        "posterior",
        "--pairs",
        pairs.to_str().unwrap(),
        "--classes",
        &peculiar("classes.txt"),
        "--prior",
        "jeffreys",
        "--resolution",
        "100000",
        "--out",
        draws.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_draws(&draws);
    assert_eq!(
        header,
        ["p_0_0", "p_0_1", "p_1_0", "p_1_1", "beta_0", "beta_1"]
    );
    let p: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // Beta(1/2, 1/2): mean 1/2, variance 1/8.
    assert!((mean - 0.5).abs() < 3.0 * (0.125 / n).sqrt(), "{mean}");
    assert!((var - 0.125).abs() < 0.005, "{var}");
}

#[test]
fn posterior_concentrates_with_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = ContingencyMatrix::binary(0.3, 0.1).unwrap();
    let population = Population::generate(&PopulationSpec {
        size: 100_000,
        beta: vec![0.1, 0.9],
        y_model: YModel::Constant(1.0),
        contingency: p.clone(),
        seed: 3,
    })
    .unwrap();
    let pairs = simulate_labeled_pairs(&population, &p, 2000, &mut stream_rng(17, 0)).unwrap();
    let manifest = ClassManifest::load(Path::new(&peculiar("classes.txt"))).unwrap();
    let pairs_path = dir.path().join("pairs.csv");
    write_labeled_pairs(&pairs_path, &pairs, &manifest).unwrap();

    let draws = dir.path().join("draws.csv");
    let out = run(&[
        "posterior",
        "--pairs",
        pairs_path.to_str().unwrap(),
        "--classes",
        &peculiar("classes.txt"),
        "--resolution",
        "20000",
        "--out",
        draws.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (_, rows) = read_draws(&draws);
    let mean = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64;
    assert!((mean - 0.3).abs() < 0.02, "{mean}");
}

#[test]
fn constrained_posterior_draws_are_admissible() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("draws.csv");
    let out = run(&[
        "posterior",
        "--pairs",
        &peculiar("pairs.csv"),
        "--records",
        &peculiar("records.csv"),
        "--classes",
        &peculiar("classes.txt"),
        "--resolution",
        "2000",
        "--out",
        draws.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let region = ConstraintRegion::new(CountsVector::new(vec![10.0, 90.0]).unwrap()).unwrap();
    let (_, rows) = read_draws(&draws);
    assert_eq!(rows.len(), 2000);
    assert!(rows
        .iter()
        .all(|r| region.contains_binary_closed_form(r[1], r[2]).unwrap()));
}

#[test]
fn bundled_simulation_configs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("smoke.csv");
    let json = dir.path().join("smoke.json");
    let out = run(&[
        "simulate",
        "--config",
        root().join("configs/smoke.toml").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&csv).unwrap();
    assert!(
        text.starts_with("method,n,truth,mean_estimate,bias,variance,mse,replications,excluded\n")
    );
    assert_eq!(text.lines().count(), 1 + 12);
    let scores = read_json(&json)["scores"].as_array().unwrap().clone();
    for s in scores.iter().filter(|s| s["replications"] == 1) {
        assert_eq!(s["variance"], 0.0);
    }

    let csv = dir.path().join("peculiar.csv");
    let out = run(&[
        "simulate",
        "--config",
        root().join("configs/peculiar.toml").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[2], "-75");
    let mean: f64 = first[3].parse().unwrap();
    assert!((4.0..=6.0).contains(&mean));
}
