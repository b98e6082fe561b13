use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trsqp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trsqp")).args(args).env_remove("TRSQP_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_summary(dir: &Path) -> Vec<serde_json::Value> {
    let text = fs::read_to_string(dir.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

const HEADER: &str = "k,outcome,step_kind,soc,delta,eps,mu,pred,ared,kkt_est,tau_est,kkt_true,tau_true,batch_f,batch_g,batch_h";

#[test]
fn zero_iterations_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = trsqp(&["run", "--problem", "saddle", "--max-iters", "0", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("saddle_noise0e0_seed0.csv")).unwrap();
    assert_eq!(csv.trim_end(), HEADER);
    assert_eq!(read_summary(dir.path())[0]["iterations"], 0);
}

#[test]
fn unknown_problem_exits_with_usage() {
    let o = trsqp(&["run", "--problem", "rosenbrock"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown problem"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn saddle_converges_to_second_order_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = trsqp(&["run", "--problem", "saddle", "--alpha", "1", "--noise", "1e-8", "--seeds", "0", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = &read_summary(dir.path())[0];
    assert_eq!(s["converged"], true);
    assert!(s["final_kkt_true"].as_f64().unwrap() <= 1e-4);
    let x: Vec<f64> = s["final_x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((x[0] + 1.0).hypot(x[1]) < 0.05, "{x:?}");
}

#[test]
fn sweep_writes_one_file_per_pair_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["run", "--problem", "saddle", "--alpha", "1", "--noise", "1e-4,1e-2", "--seeds", "1,2", "--max-iters", "50", "--out", out];
    assert!(trsqp(&args).status.success());
    let first = fs::read(dir.path().join("saddle_noise1e-2_seed2.csv")).unwrap();
    assert_eq!(read_summary(dir.path()).len(), 4);
    assert!(trsqp(&args).status.success());
    assert_eq!(fs::read(dir.path().join("saddle_noise1e-2_seed2.csv")).unwrap(), first);
}

#[test]
fn seed_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_trsqp"))
        .args(["run", "--problem", "quadratic", "--max-iters", "5", "--out", out])
        .env("TRSQP_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("quadratic_noise0e0_seed7.csv").exists());
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# first-order, tight tolerance\nalpha = 0\nkkt_tol = 1e-8\nmax_iters = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = trsqp(&["run", "--problem", "quadratic", "--config", cfg.to_str().unwrap(), "--max-iters", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = &read_summary(&out)[0];
    assert_eq!(s["iterations"], 2);
    assert_eq!(s["alpha"], 0);
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "eta = 2\n").unwrap();
    let o = trsqp(&["run", "--problem", "quadratic", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta"));
}

#[test]
fn csv_dataset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("label,a,b,c,d\n");
    for i in 0..40 {
        let y = if i % 2 == 0 { 1 } else { -1 };
        let s = f64::from(y) * (1.0 + f64::from(i % 5) * 0.1);
        text.push_str(&format!("{y},{s},{},{},{}\n", 0.3 * f64::from(i % 3), -s, 0.5));
    }
    fs::write(&data, text).unwrap();
    let problem = format!("csv:{}", data.display());
    let out = dir.path().join("out");
    let o = trsqp(&["run", "--problem", &problem, "--num-constraints", "2", "--max-iters", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("csv_noise0e0_seed0.csv").exists());
}

#[test]
fn check_suite_passes() {
    let o = trsqp(&["check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn injected_fault_fails_check() {
    let o = trsqp(&["check", "--filter", "steps", "--inject-fault", "pred-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("steps")), "{text}");
}

#[test]
fn filter_limits_checks_to_module() {
    let o = trsqp(&["check", "--filter", "steps"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("ok") || l.starts_with("FAIL")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.split_whitespace().nth(1) == Some("steps")), "{text}");
}
