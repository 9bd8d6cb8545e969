//! End-to-end runs of the `finsler-berwald` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_finsler-berwald"))
}

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/models")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn model(name: &str) -> String {
    models().join(format!("{name}.toml")).display().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("finsler-berwald-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const FLAT_KROPINA: &str = r#"
[model]
name = "flat_kropina"
coordinates = ["x", "y"]

[metric]
g_xx = "1"
g_yy = "1"

[oneform]
x = "1"

[lagrangian]
kind = "alpha-beta"
profile = "kropina"
n = 2
m = 1
c = 1
"#;

#[test]
fn berwald_model_exits_zero() {
    let out = run(&["classify", &model("ccnv_randers")]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["verdict"], "berwald");
    assert!(r["classification"]["max_spread"].as_f64().unwrap() < 1e-7);
    let summary = String::from_utf8_lossy(&out.stderr);
    assert!(summary.contains("Berwald"), "{summary}");
}

#[test]
fn non_berwald_model_exits_one_with_witness() {
    let out = run(&["classify", &model("flat_randers_nonparallel")]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out);
    assert_eq!(r["verdict"], "not-berwald");
    let w = &r["classification"]["witness"];
    assert_eq!(w["x"].as_array().unwrap().len(), 2);
    assert!(w["spread"].as_f64().unwrap() > 1e-3);
}

#[test]
fn shipped_names_resolve_without_a_path() {
    let out = run(&["classify", "examples/ccnv_kropina"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["model"], "ccnv_kropina");
}

#[test]
fn corollary3_recovers_q() {
    let out = run(&["check-corollary3", &model("kundt_kropina")]);
    assert_eq!(out.status.code(), Some(0));
    let c = &json(&out)["corollary3"];
    assert!(c["max_fit_residual"].as_f64().unwrap() < 1e-8);
    assert!(!c["rows"].as_array().unwrap().is_empty());
}

#[test]
fn identities_and_report_all_pass_on_kundt() {
    for cmd in ["identities", "report-all", "check-theorem1", "check-ab"] {
        let out = run(&[cmd, &model("kundt_kropina")]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn overrides_round_trip_into_settings() {
    let out = run(&[
        "classify",
        &model("ccnv_randers"),
        "--seed",
        "9",
        "--samples",
        "12",
        "--fiber-samples",
        "5",
        "--tol",
        "1e-6",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s = &json(&out)["settings"];
    assert_eq!(s["seed"], 9);
    assert_eq!(s["base_points"], 12);
    assert_eq!(s["fiber_samples"], 5);
    assert_eq!(s["tolerances"]["spread"], 1e-6);
}

#[test]
fn output_flag_and_text_format() {
    let dir = std::env::temp_dir().join(format!("finsler-berwald-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let out = run(&[
        "classify",
        &model("flat_exponential_nonparallel"),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(written["verdict"], "not-berwald");

    let out = run(&["classify", &model("flat_exponential_nonparallel"), "--format", "text"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("verdict: not-Berwald"), "{text}");
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let a = run(&["report-all", &model("ccnv_gyraton_kropina"), "--jobs", "1"]);
    let b = run(&["report-all", &model("ccnv_gyraton_kropina"), "--jobs", "6"]);
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn malformed_expression_names_section_and_line() {
    let body = FLAT_KROPINA.replace("g_yy = \"1\"", "g_yy = \"1 +* x\"");
    let out = run(&["classify", scratch("bad_expr.toml", &body).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[metric] g_yy (line 8)"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let body = FLAT_KROPINA.replace("[oneform]", "colour = \"red\"\n\n[oneform]");
    let out = run(&["classify", scratch("unknown_key.toml", &body).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn missing_file_and_bad_flags_are_input_errors() {
    assert_eq!(run(&["classify", "/nonexistent/model.toml"]).status.code(), Some(3));
    assert_eq!(
        run(&["classify", &model("ccnv_randers"), "--tol", "abc"]).status.code(),
        Some(3)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(3));
}

#[test]
fn starved_sampler_is_inconclusive() {
    // κ ≥ 1 for Kropina, so a bound of 1 rejects almost every fiber proposal
    let body = format!("{FLAT_KROPINA}\n[sampling]\nkappa_max = 1.0\n");
    let out = run(&["classify", scratch("starved.toml", &body).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["verdict"], "inconclusive");
}
