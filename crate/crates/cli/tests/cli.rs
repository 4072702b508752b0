use std::path::PathBuf;
use std::process::Command;

use serde_json::{json, Value};

use seculex_cli::{run, ExitCode, Outcome};

fn feeder_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/four-customer-feeder.json")
}

fn feeder_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(feeder_path()).unwrap()).unwrap()
}

fn write(name: &str, text: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn seculex(args: &[&str]) -> Outcome {
    let mut all = vec!["seculex"];
    all.extend_from_slice(args);
    run(all, false)
}

fn on(cmd: &str, path: &PathBuf, extra: &[&str]) -> Outcome {
    let mut args = vec![cmd, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    seculex(&args)
}

#[test]
fn allocate_feeder() {
    let out = on("allocate", &feeder_path(), &["--format", "json"]);
    assert_eq!(out.code, ExitCode::Success, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(v["envelopes"]["C1"], json!({ "lower_kw": 0.0, "upper_kw": 15.0 }));
    assert_eq!(v["envelopes"]["C4"], json!({ "lower_kw": -20.0, "upper_kw": 15.0 }));
    assert_eq!(v["rounds"][1]["fixed"], json!(["C2", "C3", "C4"]));
}

#[test]
fn allocate_without_customers() {
    let mut v = feeder_json();
    v["customers"] = json!([]);
    v["orders"] = json!([]);
    v["flexibility_responses"] = json!([]);
    let out = on("allocate", &write("empty.json", &v.to_string()), &[]);
    assert_eq!(out.code, ExitCode::Success, "{}", out.stderr);
    assert!(out.stdout.contains("customer"));
    assert!(!out.stdout.contains("C1"));
}

#[test]
fn malformed_file_reports_position() {
    let path = write("broken.json", "{\n  \"network\": {\n    \"nodes\": [\"T\",,]\n  }\n}\n");
    let out = on("allocate", &path, &[]);
    assert_eq!(out.code, ExitCode::Usage);
    assert!(out.stderr.contains("line 3 column"), "{}", out.stderr);
}

#[test]
fn missing_file_is_usage_error() {
    let out = seculex(&["compare", "/nonexistent/scenario.json"]);
    assert_eq!(out.code, ExitCode::Usage);
}

#[test]
fn infeasible_guarantees_exit_3() {
    let mut v = feeder_json();
    for c in v["customers"].as_array_mut().unwrap() {
        c["bounds"]["guaranteed_upper_kw"] = json!(16);
    }
    let out = on("allocate", &write("infeasible.json", &v.to_string()), &[]);
    assert_eq!(out.code, ExitCode::Infeasible, "{}", out.stderr);
    assert!(out.stderr.contains("(T,B)"), "{}", out.stderr);
}

#[test]
fn unknown_fields_strict_and_lenient() {
    let mut v = feeder_json();
    v["colour"] = json!("blue");
    let path = write("unknown.json", &v.to_string());
    let strict = on("allocate", &path, &[]);
    assert_eq!(strict.code, ExitCode::Usage);
    assert!(strict.stderr.contains("colour"));
    let lenient = on("allocate", &path, &["--lenient"]);
    assert_eq!(lenient.code, ExitCode::Success);
    assert!(lenient.stderr.contains("warning: ignoring unknown field colour"));
}

#[test]
fn clear_feeder_remaining_book() {
    let out = on("clear", &feeder_path(), &["--format", "json"]);
    assert_eq!(out.code, ExitCode::Success, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(
        v["remaining_book"],
        json!([{ "id": 2, "customer": "C3", "type": "buy", "bound": "lower", "price_eur_per_kw": 0.02, "quantity_kw": 1.0 }])
    );
    assert_eq!(v["social_welfare_eur"], json!(0.01));
    assert_eq!(v["payments_eur"]["C4"], json!(-0.12));
}

#[test]
fn clear_without_orders_is_identity() {
    let mut v = feeder_json();
    v["orders"] = json!([]);
    let out = on("clear", &write("no-orders.json", &v.to_string()), &["--format", "json"]);
    assert_eq!(out.code, ExitCode::Success, "{}", out.stderr);
    let r: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(r["updated_limits"]["C2"], json!({ "lower_kw": -20.0, "upper_kw": 15.0 }));
    assert_eq!(r["remaining_book"], json!([]));
    assert_eq!(r["social_welfare_eur"], json!(0.0));
}

#[test]
fn clear_that_cannot_trade_echoes_book() {
    let mut v = feeder_json();
    v["orders"] = json!([
        { "id": 1, "customer": "C2", "type": "buy", "bound": "lower", "delta_kw": 1, "price_eur_per_kw": 0.05, "product_time": "12:00" }
    ]);
    let out = on("clear", &write("stuck.json", &v.to_string()), &["--format", "json"]);
    let r: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(r["acceptances"][0]["accepted_kw"], json!(0.0));
    assert_eq!(r["remaining_book"][0]["quantity_kw"], json!(1.0));
}

#[test]
fn clear_with_insecure_limits_exit_3() {
    let mut v = feeder_json();
    v["limits"] = json!({
        "C1": { "lower_kw": 0, "upper_kw": 15 },
        "C2": { "lower_kw": -20, "upper_kw": 15 },
        "C3": { "lower_kw": -20, "upper_kw": 15 },
        "C4": { "lower_kw": -21, "upper_kw": 15 }
    });
    let path = write("insecure.json", &v.to_string());
    assert_eq!(on("clear", &path, &[]).code, ExitCode::Infeasible);
    let verify = on("verify", &path, &["--format", "json"]);
    assert_eq!(verify.code, ExitCode::Insecure);
    let r: Value = serde_json::from_str(&verify.stdout).unwrap();
    assert_eq!(r["boundary_margin_kw"], json!(1.0));
    assert_eq!(r["oracle_secure"], json!(false));
}

#[test]
fn verify_feeder() {
    let out = on("verify", &feeder_path(), &["--samples", "1000", "--seed", "42", "--format", "json"]);
    assert_eq!(out.code, ExitCode::Success);
    let r: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(r["boundary_margin_kw"], json!(0.0));
    assert_eq!(r["oracle_secure"], json!(true));
    assert_eq!(r["profiles_checked"], json!(1016));
}

#[test]
fn verify_rejects_zero_samples() {
    assert_eq!(on("verify", &feeder_path(), &["--samples", "0"]).code, ExitCode::Usage);
}

#[test]
fn unknown_format_is_usage_error() {
    assert_eq!(on("compare", &feeder_path(), &["--format", "xml"]).code, ExitCode::Usage);
}

#[test]
fn compare_csv_matches_table_numbers() {
    let out = on("compare", &feeder_path(), &["--format", "csv"]);
    assert_eq!(out.code, ExitCode::Success);
    let mut reader = csv::Reader::from_reader(out.stdout.as_bytes());
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    let curtail: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    let util: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(curtail, ["0", "9", "17", "7", "1"]);
    assert_eq!(util, ["100", "87", "76", "90", "99"]);
    assert_eq!(rows[4][5], "0.01");
}

#[test]
fn compare_json_keeps_full_precision() {
    let out = on("compare", &feeder_path(), &["--format", "json"]);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    let util = v[1]["renewable_utilization_pct"].as_f64().unwrap();
    assert!((util - 100.0 * 62.0 / 71.0).abs() < 1e-9);
    assert_eq!(v[4]["market_social_welfare_eur"], json!(0.01));
    assert_eq!(v[0]["market_social_welfare_eur"], Value::Null);
}

#[test]
fn dump_lp_goes_to_stderr() {
    let out = on("allocate", &feeder_path(), &["--dump-lp", "--format", "json"]);
    assert!(out.stderr.contains("round 2"));
    assert!(out.stderr.contains("lower_max(T,B)"), "{}", out.stderr);
    serde_json::from_str::<Value>(&out.stdout).unwrap();
    let out = on("clear", &feeder_path(), &["--dump-lp"]);
    assert!(out.stderr.to_lowercase().contains("maximize"), "{}", out.stderr);
}

#[test]
fn colour_only_when_enabled() {
    assert!(run(["seculex", "compare", feeder_path().to_str().unwrap()], true)
        .stdout
        .contains("\x1b[1m"));
    let out = Command::new(env!("CARGO_BIN_EXE_seculex"))
        .args(["compare", feeder_path().to_str().unwrap()])
        .env("SECULEX_COLOR", "0")
        .output()
        .unwrap();
    assert!(!String::from_utf8(out.stdout).unwrap().contains('\x1b'));
}

#[test]
fn binary_exit_codes() {
    let status = Command::new(env!("CARGO_BIN_EXE_seculex"))
        .args(["verify", feeder_path().to_str().unwrap(), "--samples", "0"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(env!("CARGO_BIN_EXE_seculex"))
        .arg("--help")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
}
