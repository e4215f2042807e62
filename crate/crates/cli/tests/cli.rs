//! End-to-end runs of the `softarm` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn softarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softarm")).args(args).output().expect("binary runs")
}

fn short_scenario(dir: &Path) -> String {
    let path = dir.join("short.cfg");
    fs::write(&path, "# short run\nscenario.duration = 3\nscenario.reference = mixed\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn track_writes_csv_and_plot_script() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_scenario(tmp.path());
    let out = tmp.path().join("run");
    let res = softarm(&["track", "--scenario", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["log.csv", "metrics.csv", "timing.csv", "plot.gp", "scenario.cfg"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert!(log.starts_with("t,alpha,beta,"));
    assert_eq!(log.lines().count(), 1 + 150);
    assert!(fs::read_to_string(out.join("plot.gp")).unwrap().contains("'log.csv'"));
    // the resolved scenario reproduces the run
    let again = tmp.path().join("again");
    let cfg2 = out.join("scenario.cfg");
    let res = softarm(&["track", "--scenario", cfg2.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(res.status.success());
    assert_eq!(fs::read(out.join("log.csv")).unwrap(), fs::read(again.join("log.csv")).unwrap());
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
}

#[test]
fn refuses_non_empty_output_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_scenario(tmp.path());
    let out = tmp.path().join("run");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "precious").unwrap();
    let res = softarm(&["track", "--scenario", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("--force"));
    assert!(!out.join("log.csv").exists());
    let res = softarm(&["track", "--scenario", &cfg, "--out", out.to_str().unwrap(), "--force"]);
    assert!(res.status.success());
    assert!(out.join("log.csv").exists());
}

#[test]
fn malformed_config_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "scenario.seed = 1\n\nnot a pair\n").unwrap();
    let res = softarm(&["track", "--scenario", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));
}

#[test]
fn missing_scenario_and_unknown_subcommand_fail() {
    let res = softarm(&["track", "--scenario", "/nonexistent/s.cfg"]);
    assert!(!res.status.success());
    let res = softarm(&["launch"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("Usage"));
}

#[test]
fn compare_prints_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_scenario(tmp.path());
    let res = softarm(&["compare", "--scenario", &cfg]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("ratio"));
}

#[test]
fn catch_batch_writes_records() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("catch");
    let res = softarm(&["catch", "--throws", "3", "--out", out.to_str().unwrap(), "--mode", "standard"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let throws = fs::read_to_string(out.join("throws.csv")).unwrap();
    assert_eq!(throws.lines().count(), 4);
    assert!(throws.lines().skip(1).all(|l| l.contains(",standard,")));
    for f in ["metrics.csv", "throw_log.csv", "throw_prediction.csv", "plot.gp"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn sysid_recovers_nominal_plant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("lin.cfg");
    fs::write(
        &cfg,
        "plant.coupling_gain = 0\nplant.relaxation_amplitude = 0\nplant.noise_std_angle = 0\nplant.noise_std_pressure = 0\n",
    )
    .unwrap();
    let out = tmp.path().join("id");
    let res = softarm(&["sysid", "--scenario", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let fit = fs::read_to_string(out.join("fit.csv")).unwrap();
    let k: f64 = fit.lines().find_map(|l| l.strip_prefix("k_alpha,")).unwrap().parse().unwrap();
    assert!((k - 230.0).abs() < 0.01 * 230.0, "{k}");
    assert!(out.join("sweep.csv").is_file() && out.join("steps.csv").is_file());
}

#[test]
fn bad_mode_is_rejected() {
    let res = softarm(&["track", "--mode", "fuzzy"]);
    assert!(!res.status.success());
}
