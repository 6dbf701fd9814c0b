use std::path::PathBuf;
use std::process::{Command, Output};

use jmb_core::cone_solver::ConvexQcqp;

fn jmb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmb"))
        .args(args)
        .output()
        .expect("spawn jmb")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

fn temp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("jmb-cli-{}-{name}", std::process::id()))
}

fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&stdout(&jmb(args))).expect("valid JSON")
}

#[test]
fn solve_emits_json() {
    let v = json(&["solve", "--snr-db", "10", "--m", "20", "--seed", "3"]);
    assert_eq!(v["mode"], "jmb");
    assert_eq!(v["init"], "zf-e");
    assert_eq!(v["snr_db"], 10.0);
    let trace = v["objective_trace"].as_array().unwrap();
    assert!(!trace.is_empty());
    // The final re-partition can only raise the last traced value.
    let last = trace.last().unwrap().as_f64().unwrap();
    assert!(v["objective_bits"].as_f64().unwrap() >= last - 1e-9);
}

#[test]
fn solve_is_deterministic_and_seed_sensitive() {
    let a = stdout(&jmb(&["solve", "--snr-db", "15", "--m", "20", "--seed", "9"]));
    let b = stdout(&jmb(&["solve", "--snr-db", "15", "--m", "20", "--seed", "9"]));
    let c = stdout(&jmb(&["solve", "--snr-db", "15", "--m", "20", "--seed", "10"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn flags_override_config_file() {
    let cfg = temp_path("config.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": {"n_tx": 3, "n_users": 2, "error_model": {"kind": "fixed", "sigma_e2": 0.2}, "sample_size": 10},
            "snr_grid_db": [12.0], "seed": 5}"#,
    )
    .unwrap();
    let path = cfg.to_str().unwrap();
    let from_file = json(&["solve", "--config", path, "--mode", "bc"]);
    assert_eq!(from_file["snr_db"], 12.0);
    assert_eq!(from_file["mode"], "bc");
    assert!((from_file["error_var"].as_f64().unwrap() - 0.2).abs() < 1e-15);

    let overridden = json(&["solve", "--config", path, "--sigma-e2", "0.05", "--snr-db", "18"]);
    assert_eq!(overridden["snr_db"], 18.0);
    assert!((overridden["error_var"].as_f64().unwrap() - 0.05).abs() < 1e-15);
    std::fs::remove_file(cfg).ok();
}

#[test]
fn bad_config_is_rejected() {
    let cfg = temp_path("bad.json");
    std::fs::write(&cfg, r#"{"n_channel": 4}"#).unwrap();
    let out = jmb(&["solve", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    std::fs::remove_file(cfg).ok();

    assert!(!jmb(&["solve", "--ntx", "1", "--k", "2"]).status.success());
}

#[test]
fn qcqp_dump_round_trips() {
    let path = temp_path("qcqp.txt");
    stdout(&jmb(&["solve", "--m", "10", "--dump-qcqp", path.to_str().unwrap()]));
    let text = std::fs::read_to_string(&path).unwrap();
    let q = ConvexQcqp::from_text(&text).unwrap();
    assert_eq!(q.dimension(), 14);
    std::fs::remove_file(path).ok();
}

#[test]
fn converge_csv_has_expected_columns() {
    let text = stdout(&jmb(&["converge", "--snr-db", "5,10", "--m", "20", "--n-max", "5"]));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap(),
        vec!["iteration", "snr_db", "init", "objective_bits"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(!rows.is_empty() && rows.len() <= 2 * 2 * 5);
    for r in &rows {
        assert!(r[3].parse::<f64>().unwrap().is_finite());
        assert!(!r[3].contains(','));
    }
    assert!(rows.iter().any(|r| &r[2] == "zf-svd"));
}

#[test]
fn ergodic_csv_has_one_row_per_cell() {
    let out = temp_path("er.csv");
    stdout(&jmb(&[
        "ergodic",
        "--snr-db",
        "5,15",
        "--channels",
        "3",
        "--m",
        "20",
        "--inits",
        "zf-e,zf-svd",
        "--output",
        out.to_str().unwrap(),
    ]));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        rdr.headers().unwrap(),
        vec![
            "snr_db",
            "mode",
            "init",
            "ergodic_rate_bits",
            "std_error",
            "n_channels",
            "m"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // Two joint-mode inits plus one broadcast row per SNR point.
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(&r[5], "3");
        assert_eq!(&r[6], "20");
    }
    std::fs::remove_file(out).ok();
}

#[test]
fn verify_quick_passes() {
    let text = stdout(&jmb(&["verify", "--quick", "--seed", "1"]));
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
