use std::path::Path;
use std::process::{Command, Output};

use gmip::tradeoff::{onestep_beta, OneStepParams};
use gmip::Probability;

fn gmip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmip"))
        .args(args)
        .env("GMIP_OUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv_rows(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON")
}

#[test]
fn accountant_reports_verification_setup() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(dir.path(), &["accountant", "--n", "500", "--d", "650", "--steps", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("mu_step: 1.13961\n"), "{text}");
    assert!(text.contains("mu: 2.54824\n"), "{text}");
}

#[test]
fn accountant_json_round_trips_through_config() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        &["--steps", "3", "--clip", "inf"][..],
        &["--subsample", "48000", "10", "--clip", "500", "--tau2", "2.5"][..],
        &["--convert", "mip-to-dp", "--mu", "0.5", "--clip", "2"][..],
    ] {
        let mut args = vec!["accountant", "--n", "400", "--d", "650", "--format", "json"];
        args.extend(extra);
        let first = gmip(dir.path(), &args);
        assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
        let cfg = dir.path().join("report.json");
        std::fs::write(&cfg, &first.stdout).unwrap();
        let again = gmip(dir.path(), &["accountant", "--format", "json", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&again), 0);
        assert_eq!(first.stdout, again.stdout);
    }
}

#[test]
fn conversion_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(
        dir.path(),
        &["accountant", "--n", "500", "--d", "650", "--convert", "mip-to-dp", "--mu", "5", "--format", "json"],
    );
    assert_eq!(json(&out)["converted_mu"], "inf");
    let out = gmip(
        dir.path(),
        &["accountant", "--n", "500", "--d", "650", "--convert", "dp-to-mip", "--mu", "1", "--format", "json"],
    );
    let got = json(&out)["converted_mu"].as_f64().unwrap();
    let want = gmip::accountant::dp_to_mip(1.0, 500, 650, 1.0).unwrap();
    assert_eq!(got, want);
}

#[test]
fn onestep_curve_file_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(dir.path(), &["tradeoff", "--onestep", "500", "650", "0", "inf", "650"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("mu_step: 1.13961"));
    let rows = csv_rows(&dir.path().join("tradeoff.csv"));
    let (_, beta) = rows.iter().find(|(a, _)| *a == 0.05).copied().unwrap();
    let params = OneStepParams::new(500, 650, 0.0, f64::INFINITY, 650.0).unwrap();
    let want = onestep_beta(&params, Probability::new(0.05).unwrap()).get();
    assert!((beta - want).abs() <= 1e-12);
}

#[test]
fn gaussian_grid_is_convex_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(dir.path(), &["tradeoff", "--gmip", "1.14", "--grid", "1001"]);
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&dir.path().join("tradeoff.csv"));
    assert_eq!(rows.len(), 1001);
    for w in rows.windows(3) {
        let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
        assert!(s2 >= s1 - 1e-9);
    }

    let out = gmip(dir.path(), &["tradeoff", "--gmip", "0", "--output", "diag.csv"]);
    assert_eq!(code(&out), 0);
    for (a, b) in csv_rows(&dir.path().join("diag.csv")) {
        assert!((a + b - 1.0).abs() < 1e-15);
    }
}

#[test]
fn calibrate_matches_table_and_flags_unreachable_targets() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(
        dir.path(),
        &["calibrate", "--notion", "gdp", "--mu", "0.40", "--dataset", "cifar10-preset", "--format", "json"],
    );
    assert_eq!(code(&out), 0);
    let tau = json(&out)["tau"].as_f64().unwrap();
    assert!((tau - 2.84).abs() <= 0.01, "{tau}");

    let out = gmip(dir.path(), &["calibrate", "--notion", "gdp", "--mu", "1e-9", "--dataset", "cifar10"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("infimum"));
}

#[test]
fn tau_table_reproduces_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = gmip(dir.path(), &["reproduce", "tau-table"]);
    let b = gmip(dir.path(), &["reproduce", "tau-table"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("more than 0.01: 0 of 120"));
    let csv = gmip(dir.path(), &["reproduce", "tau-table", "--format", "csv"]);
    assert_eq!(csv.stdout, std::fs::read(dir.path().join("tau_table.csv")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gmip(dir.path(), &["tradeoff"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["tradeoff", "--gmip", "-1"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["tradeoff", "--onestep", "1", "650", "0", "inf", "650"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["tradeoff", "--onestep", "2.5", "650", "0", "inf", "650"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["calibrate", "--notion", "gdp", "--mu", "1", "--dataset", "mnist"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["audit", "linreg", "--n", "5", "--p", "10"])), 2);
    assert_eq!(code(&gmip(dir.path(), &["bogus"])), 2);
}

#[test]
fn glir_sim_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["audit", "glir-sim", "--n", "100", "--d", "20", "--trials", "500", "--seed", "7"];
    let a = gmip(dir.path(), &args);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    let roc_a = std::fs::read(dir.path().join("glir_sim_roc.csv")).unwrap();
    let b = gmip(dir.path(), &args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(roc_a, std::fs::read(dir.path().join("glir_sim_roc.csv")).unwrap());
}

#[test]
fn linreg_audit_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmip(dir.path(), &["audit", "linreg", "--n", "100", "--p", "10", "--trials", "10000", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let v = json(&out);
    assert_eq!(v["pass"], true);
    assert!(v["convention"].as_str().unwrap().contains("nonmember"));
}

#[test]
fn train_then_score_traces() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"task":{"kind":"logistic_regression","feature_dim":4,"label_noise":0.1,"true_params":[1,-1,0.5,0]},
            "config":{"learning_rate":0.1,"batch_size":10,"iterations":5,"clip":1.0,"tau":0.05,"seed":3,"dataset_size":50},
            "probes":{"members":1,"nonmembers":1,"background":20}}"#,
    )
    .unwrap();
    let out = gmip(dir.path(), &["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let member = dir.path().join("probe_0000_member.gmip");
    let bg = dir.path().join("background.gmbg");
    let score = gmip(
        dir.path(),
        &["audit", "glir-trace", member.to_str().unwrap(), "--background", bg.to_str().unwrap(), "--format", "json"],
    );
    assert_eq!(code(&score), 0);
    assert!(json(&score)["scores"][0]["log_pvalue"].as_f64().unwrap() <= 0.0);

    let csv_dir = dir.path().join("csv");
    let out = gmip(dir.path(), &["train", spec.to_str().unwrap(), "--csv", "--out-dir", csv_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let csv_trace = csv_dir.join("probe_0000_member.csv");
    let args = ["audit", "glir-trace", csv_trace.to_str().unwrap(), "--background", bg.to_str().unwrap(), "--format", "json"];
    assert_eq!(code(&gmip(dir.path(), &args)), 2);
    let mut with_n = args.to_vec();
    with_n.extend(["--batch-size", "10"]);
    let from_csv = gmip(dir.path(), &with_n);
    assert_eq!(code(&from_csv), 0);
    assert_eq!(
        json(&from_csv)["scores"][0]["log_pvalue"],
        json(&score)["scores"][0]["log_pvalue"]
    );
}

#[test]
fn malformed_trace_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.gmip");
    std::fs::write(&bad, b"NOPE").unwrap();
    let bg = dir.path().join("missing.gmbg");
    assert_eq!(
        code(&gmip(dir.path(), &["audit", "glir-trace", bad.to_str().unwrap(), "--background", bg.to_str().unwrap()])),
        4
    );
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"task":{"kind":"linear_regression","feature_dim":2,"label_noise":0.1,"true_params":[1,2]},
            "config":{"learning_rate":0.1,"batch_size":4,"iterations":2,"clip":1.0,"tau":0.0,"seed":1,"dataset_size":8},
            "probes":{"members":0,"nonmembers":0,"background":4}}"#,
    )
    .unwrap();
    assert_eq!(code(&gmip(dir.path(), &["train", spec.to_str().unwrap()])), 0);
    let bg = dir.path().join("background.gmbg");
    let out = gmip(dir.path(), &["audit", "glir-trace", bad.to_str().unwrap(), "--background", bg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte offset 0"));
}
