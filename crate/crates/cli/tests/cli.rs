//! End-to-end checks of the `wigig` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wigig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wigig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// Small predictive spec so runs take well under a second.
const SMALL: &str = r#"
[predictor]
input_slots = 6
output_slots = 3
hidden = [8]

[[predictor.conv]]
filters = 4
kernel = 3
pool = 2

[engine]
total_slots = 150
warm_up_slots = 60
record_tuples = true

[scenario]
interarrival_mean_s = 4.0
"#;

#[test]
fn run_writes_resolved_spec_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = wigig(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[experiment]"), "resolved spec echoed");
    assert!(stdout.contains("predictive-greedy seed 3"));
    for f in [
        "resolved.toml",
        "metrics.csv",
        "summary.csv",
        "aggregate.csv",
        "tuples.csv",
        "model.ckpt",
        "scenario.toml",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 151);

    let inspect = wigig(&["inspect-model", out_dir.join("model.ckpt").to_str().unwrap()]);
    ok(&inspect);
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("parameters:"));
}

#[test]
fn csv_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    ok(&wigig(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(
        header(&out_dir.join("metrics.csv")),
        "slot,active_users,connected_users,mean_throughput_mbps,mean_throughput_connected_mbps,\
         handovers,cumulative_handovers,prediction_mae_db,graded_predictions,training_loss"
    );
    assert_eq!(
        header(&out_dir.join("summary.csv")),
        "policy,seed,status,slots_evaluated,mean_throughput_mbps,std_throughput_mbps,\
         mean_throughput_connected_mbps,total_handovers,std_handovers_per_slot,mean_active_users,\
         final_mae_db,std_mae_db,error"
    );
    assert_eq!(
        header(&out_dir.join("aggregate.csv")),
        "policy,runs,failed,mean_throughput_mbps,sd_throughput_mbps,mean_total_handovers,\
         sd_total_handovers,mean_final_mae_db,sd_final_mae_db"
    );
    assert_eq!(
        header(&out_dir.join("tuples.csv")),
        "run_id,slot,user_id,dl_mbps,ul_mbps,rssi_0,rssi_1,rssi_2,rssi_3,ap_id,handover_flag"
    );
}

#[test]
fn sweep_expands_grid_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    let text = format!(
        "{SMALL}\n[experiment]\nseeds = [1, 2]\n\n[sweep]\n\"scenario.interarrival_mean_s\" = [5.0, 10.0, 20.0]\n"
    );
    fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("grid");
    ok(&wigig(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        "reactive",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
    assert!(summary
        .lines()
        .next()
        .unwrap()
        .starts_with("scenario.interarrival_mean_s,policy,seed"));
    assert_eq!(
        fs::read_to_string(out_dir.join("aggregate.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 3
    );
    assert_eq!(fs::read_dir(out_dir.join("cells")).unwrap().count(), 6);

    let replay = wigig(&["replay-check", out_dir.to_str().unwrap()]);
    ok(&replay);
}

#[test]
fn replay_check_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    ok(&wigig(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    ok(&wigig(&["replay-check", out_dir.to_str().unwrap()]));

    let metrics = out_dir.join("metrics.csv");
    let mut text = fs::read_to_string(&metrics).unwrap();
    text.push_str("999,0,0,0,0,0,0,,0,\n");
    fs::write(&metrics, text).unwrap();
    let out = wigig(&["replay-check", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.csv"));
}

#[test]
fn bad_input_fails_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.toml");
    fs::write(&cfg, "[policy]\nthresold_mbps = 0.0\n").unwrap();
    let out = wigig(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("thresold_mbps"));

    let out = wigig(&["run", "--policy", "oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let out = wigig(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = wigig(&["inspect-model", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
}
