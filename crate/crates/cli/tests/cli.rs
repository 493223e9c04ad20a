//! End-to-end checks of the command-line interface.

use std::path::PathBuf;
use std::process::Command;

fn osvi_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_osvi"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("osvi-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn solve_vi_on_two_state() {
    let out = osvi_bin()
        .args([
            "solve",
            "--env",
            "two-state",
            "--algorithm",
            "vi",
            "--mode",
            "pe",
            "--iters",
            "30",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final normalized_error"), "stdout: {stdout}");
}

#[test]
fn osvi_writes_csv_and_summary() {
    let dir = temp_dir("osvi");
    let out = osvi_bin()
        .args([
            "osvi",
            "--env",
            "cliffwalk",
            "--mode",
            "control",
            "--model",
            "smooth",
            "--lambda",
            "0.1",
            "--iters",
            "20",
            "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("trajectories.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["model_only_error"].as_f64().unwrap() > 0.01);
    // lambda = 0.1 smoothing on this grid: 9 * 0.13 = 1.17, above one.
    let gp = summary["gamma_report"]["gamma_prime_sup"].as_f64().unwrap();
    assert!((gp - 1.17).abs() < 1e-9, "gamma'_sup = {gp}");
    assert_eq!(summary["gamma_report"]["convergent_sup"], false);
    let csv = std::fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("run_id,seed,step,metric,value"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn divergent_sweep_still_exits_zero() {
    let out = osvi_bin()
        .args([
            "sweep",
            "--env",
            "cliffwalk",
            "--model",
            "self-loop",
            "--lambdas",
            "0.0,0.8",
            "--record-iters",
            "1,3,5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("DIVERGED"), "stdout: {stdout}");
}

#[test]
fn bad_config_exits_nonzero() {
    // TD is evaluation-only; asking for control must fail fast.
    let out = osvi_bin()
        .args([
            "learn", "--algo", "td", "--mode", "control", "--seeds", "0", "--out", "/tmp/osvi-bad",
            "--steps", "10",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn learn_requires_seeds_and_out() {
    let out = osvi_bin().args(["learn", "--algo", "td"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_overrides_flags() {
    let dir = temp_dir("config");
    let config_path = dir.join("config.json");
    // The file pins 7 iterations; the flag asks for 50.
    std::fs::write(&config_path, r#"{ "planner_iters": 7 }"#).unwrap();
    let out = osvi_bin()
        .args([
            "osvi",
            "--env",
            "two-state",
            "--mode",
            "pe",
            "--iters",
            "50",
            "--out",
        ])
        .arg(&dir)
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    let max_step = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2)?.parse::<u64>().ok())
        .max()
        .unwrap();
    assert_eq!(max_step, 7);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn garnet_gen_writes_loadable_mdp() {
    let dir = temp_dir("garnet");
    let path = dir.join("garnet.json");
    let out = osvi_bin()
        .args(["garnet-gen", "--n-states", "10", "--seed", "42", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mdp = osvi::TabularMdp::from_json_file(&path).unwrap();
    assert_eq!(mdp.n_states(), 10);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn analyze_reports_two_state_discounts() {
    let out = osvi_bin()
        .args([
            "analyze",
            "--env",
            "two-state",
            "--model",
            "smooth",
            "--lambda",
            "0.2",
            "--mode",
            "pe",
            "--check-iters",
            "15",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gamma_prime_sup"));
    assert!(stdout.contains("sup-norm bound: holds=true"));
}

#[test]
fn learn_short_run_is_deterministic() {
    let dir_a = temp_dir("learn-a");
    let dir_b = temp_dir("learn-b");
    for dir in [&dir_a, &dir_b] {
        let out = osvi_bin()
            .args([
                "learn",
                "--env",
                "two-state",
                "--algo",
                "td",
                "--mode",
                "pe",
                "--steps",
                "2000",
                "--record-every",
                "500",
                "--seeds",
                "0-1",
                "--out",
            ])
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir_a.join("trajectories.csv")).unwrap();
    let b = std::fs::read(dir_b.join("trajectories.csv")).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}
