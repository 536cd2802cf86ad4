use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hjbqvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjbqvi")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no '{key}' in\n{text}"))
}

fn solve(config: &str, grid: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join(config);
    let mut args = vec!["solve", "--config", cfg.to_str().unwrap(), "--grid", grid, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    hjbqvi(&args)
}

#[test]
fn solve_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = solve("cash_band.toml", "41,10", &run, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "certificate"), "pass");
    for f in ["manifest.json", "config.toml", "value.qvif", "value.csv", "policy.csv", "policy.json", "certificate.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let v = hjbqvi(&["verify", "--run", run.to_str().unwrap()]);
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).lines().filter(|l| l.starts_with("PASS")).count() >= 8);
}

#[test]
fn supersolution_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let quad = dir.path().join("quad.csv");
    let o = solve(
        "discounted_ou.toml",
        "41",
        &run,
        &["--certify-supersolution", "q=3,kappa=0.05", "--dump-quad", quad.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "mode"), "elliptic");
    assert!(field(&stdout(&o), "supersolution").contains("q=3"));
    assert!(std::fs::read_to_string(&quad).unwrap().lines().count() > 1);
    let v = hjbqvi(&["verify", "--run", run.to_str().unwrap(), "--with-supersolution"]);
    assert!(v.status.success(), "{}", stdout(&v));
    assert!(stdout(&v).contains("perturbed_supersolution_m100"));
}

#[test]
fn simulate_is_reproducible_and_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(solve("cash_band.toml", "41,10", &run, &[]).status.success());
    let csv = dir.path().join("paths.csv");
    let args = |csv: &Path, workers: &str| {
        hjbqvi(&[
            "simulate",
            "--policy",
            run.to_str().unwrap(),
            "--paths",
            "500",
            "--seed",
            "3",
            "--x0",
            "0.5",
            "--workers",
            workers,
            "--paths-csv",
            csv.to_str().unwrap(),
        ])
    };
    let a = args(&csv, "1");
    let b = args(&dir.path().join("other.csv"), "4");
    assert!(a.status.code().is_some_and(|c| c <= 1), "{}", stderr(&a));
    assert_eq!(field(&stdout(&a), "estimate"), field(&stdout(&b), "estimate"));
    assert_eq!(field(&stdout(&a), "paths"), "500");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 501);
    assert!(text.starts_with("path,stop_time"));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let payoffs: Vec<f64> = rdr.records().map(|r| r.unwrap()[9].parse().unwrap()).collect();
    let mean = payoffs.iter().sum::<f64>() / payoffs.len() as f64;
    let reported: f64 = field(&stdout(&a), "estimate").parse().unwrap();
    assert!((mean - reported).abs() < 1e-5, "{mean} vs {reported}");
}

#[test]
fn check_dpp_reports_both_rules() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(solve("cash_band.toml", "61,20", &run, &[]).status.success());
    for rule in ["time:0.2", "box:0.5"] {
        let o = hjbqvi(&["check-dpp", "--run", run.to_str().unwrap(), "--stop-rule", rule, "--paths", "2000"]);
        assert!(o.status.success(), "{rule}: {}{}", stdout(&o), stderr(&o));
        assert_eq!(field(&stdout(&o), "dpp"), "pass");
    }
    let bad = hjbqvi(&["check-dpp", "--run", run.to_str().unwrap(), "--stop-rule", "exit"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn validate_shipped_config() {
    let cfg = configs().join("discounted_ou.toml");
    let o = hjbqvi(&["validate", "--config", cfg.to_str().unwrap(), "--samples", "512"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS lipschitz-mu"));
}

#[test]
fn unknown_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("cash_band.toml")).unwrap() + "\n[extra]\nfoo = 1\n";
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = hjbqvi(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
}

#[test]
fn corrupted_run_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(solve("cash_band.toml", "21,5", &run, &[]).status.success());
    let path = run.join("value.qvif");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let o = hjbqvi(&["verify", "--run", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    let missing = hjbqvi(&["verify", "--run", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bad_grid_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve("cash_band.toml", "41", &dir.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = solve("cash_band.toml", "41,10", &dir.path().join("run"), &["--certify-supersolution", "q=3"]);
    assert_eq!(o.status.code(), Some(2));
}
