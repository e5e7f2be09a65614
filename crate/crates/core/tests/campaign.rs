use std::fs;
use std::path::Path;
use std::process::Command;

use nwfpp::experiments::{run_config, ExperimentConfig, ExperimentError};

fn small_config(out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{"experiment": ["distance", "hopcount", "epidemic", "collision"],
            "n_list": [2000, 4000], "rho": 2.0, "reps": 6, "pairs_per_graph": 4,
            "master_seed": 99, "bp_reps": 300, "limit_draws": 300,
            "mgf": {{"theta_max": 100.0, "grid_points": 512}},
            "output_dir": {:?}}}"#,
        out.to_str().unwrap()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

const CSVS: [&str; 6] = [
    "distance.csv",
    "distance_limit.csv",
    "hopcount.csv",
    "epidemic.csv",
    "fcurve.csv",
    "collision.csv",
];

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let sa = run_config(&small_config(&a), Some(1)).unwrap();
    let sb = run_config(&small_config(&b), Some(8)).unwrap();
    for f in CSVS {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert!(x.len() > 20, "{f} is empty");
        assert_eq!(x, y, "{f} differs");
    }
    assert_eq!(sa.reports.len(), 4);
    assert_eq!(sa.all_pass, sb.all_pass);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["master_seed"], 99);
    let header = fs::read_to_string(a.join("collision.csv")).unwrap();
    assert!(header.starts_with("n,rep,s,color_pair,remaining\n"));
}

#[test]
fn malformed_configs_are_rejected() {
    let base = r#"{"experiment": "distance", "n_list": [100], "rho": 2.0, "reps": 1,
        "pairs_per_graph": 1, "master_seed": 0, "output_dir": "/tmp/unused"}"#;
    let e = ExperimentConfig::from_json(&base.replace("\"reps\"", "\"repz\"")).unwrap_err();
    assert!(matches!(e, ExperimentError::Parse(_)));
    assert!(e.to_string().contains("repz"), "{e}");
    let e = ExperimentConfig::from_json(&base.replace("\"distance\"", "\"nonsense\"")).unwrap_err();
    assert!(matches!(e, ExperimentError::Parse(_)));
    let e = ExperimentConfig::from_json(&base.replace("\"master_seed\": 0,", "")).unwrap_err();
    assert!(e.to_string().contains("master_seed"), "{e}");
    let e = ExperimentConfig::from_json(&base.replace("[100]", "[]")).unwrap_err();
    assert!(e.to_string().contains("n_list"), "{e}");
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_nwfpp");
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"experiment": "distance", "bogus": 1}"#).unwrap();
    let out = Command::new(bin).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = Command::new(bin).args(["constants", "--rho", "1"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["lambda"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-15);
    for key in ["rho", "lambda", "lambda2", "pi_R", "pi_B", "u_R", "u_B", "c", "c_ihrg"] {
        assert!(v.get(key).is_some(), "{key}");
    }

    let csv = dir.path().join("g.csv");
    let out = Command::new(bin)
        .args(["graph", "--n", "10", "--rho", "2", "--seed", "4", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("u,v,kind,weight\n"));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.csv.json")).unwrap()).unwrap();
    assert_eq!(side["n"], 10);
    assert_eq!(side["seed"], 4);
}
