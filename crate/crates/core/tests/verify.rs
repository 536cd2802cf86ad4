use std::path::PathBuf;

use hjbqvi::io::config::Config;
use hjbqvi::io::run::{save_run, GridSpec, Run};
use hjbqvi::verify::{check_run, run_suite, VerifyOptions};
use hjbqvi::Error;

fn config(name: &str) -> Config {
    Config::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

const CONSTANT: &str = r#"
schema_version = 1
[horizon]
maturity = 1.0
[state]
lower = [-1.0]
upper = [1.0]
[payoff]
terminal = { kind = "constant", value = 3.0 }
[impulse]
kind = "jump-to"
candidates = [[0.0], [0.5]]
fixed_cost = 0.25
"#;

#[test]
fn constant_toy_passes_with_zero_slack() {
    let c = Config::from_toml_str(CONSTANT).unwrap();
    let run = Run::solve(&c, &GridSpec::parse("21,4", 1, false).unwrap(), None).unwrap();
    for f in &run.levels {
        assert!(f.values.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }
    let r = check_run(&run, &VerifyOptions::default()).unwrap();
    assert!(r.all_passed(), "{r}");
    for name in ["m_convex", "m_adjacent_modulus", "boundary_can_do_nothing"] {
        assert!(r.get(name).unwrap().margin.abs() < 1e-12, "{r}");
    }
    assert!(r.get("m_monotone").unwrap().margin >= 0.0);
}

#[test]
fn cash_band_run_passes_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::solve(&config("cash_band.toml"), &GridSpec::parse("61,20", 1, false).unwrap(), None).unwrap();
    save_run(dir.path(), &mut run).unwrap();
    let r = run_suite(dir.path(), &VerifyOptions::default()).unwrap();
    assert!(r.all_passed(), "{r}");
    assert!(r.get("comparison").unwrap().margin > 0.5);
    assert_eq!(r.to_string().lines().count(), r.properties.len());
}

#[test]
fn perturbed_supersolution_margin_holds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::parse("61", 1, true).unwrap();
    let mut run = Run::solve(&config("discounted_ou.toml"), &spec, Some((3.0, 0.05))).unwrap();
    save_run(dir.path(), &mut run).unwrap();
    let opts = VerifyOptions {
        with_supersolution: true,
        ..Default::default()
    };
    let r = run_suite(dir.path(), &opts).unwrap();
    assert!(r.all_passed(), "{r}");
    for m in [2, 10, 100] {
        assert!(r.get(&format!("perturbed_supersolution_m{m}")).is_some());
    }
}

#[test]
fn tampered_field_fails_residual() {
    let mut run = Run::solve(&config("cash_band.toml"), &GridSpec::parse("31,8", 1, false).unwrap(), None).unwrap();
    run.levels[3].values[15] += 1e-3;
    let r = check_run(&run, &VerifyOptions { comparison: false, ..Default::default() }).unwrap();
    assert!(!r.all_passed());
    assert!(!r.get("residual_interior").unwrap().passed);
}

#[test]
fn supersolution_flag_needs_artifact() {
    let run = Run::solve(&config("cash_band.toml"), &GridSpec::parse("31,8", 1, false).unwrap(), None).unwrap();
    let opts = VerifyOptions {
        with_supersolution: true,
        comparison: false,
        ..Default::default()
    };
    assert!(matches!(check_run(&run, &opts), Err(Error::MissingArtifact(_))));
}

#[test]
fn missing_run_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_suite(dir.path(), &VerifyOptions::default()), Err(Error::MissingArtifact(_))));
}
