use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cps-lab"));
    c.env_remove("CPS_LAB_OUT");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const PIECEWISE: &str = r#"
experiment = "condition-test"
n_paths = 1000
base_seed = 20240607

[model]
driver = "brownian"
sigma = 3.0
transform = "piecewise_ex3"

[grid]
steps = 256

[events]
tau = [{ rule = "deterministic", time = 0.0 }]
h = [0.5]
delta = [0.5]
c = [1.0]
"#;

const MONOTONE: &str = r#"
experiment = "condition-test"
n_paths = 2000
base_seed = 4

[model]
driver = "brownian"
sigma = 0.7
transform = "monotone_sigmoid_like"

[grid]
steps = 256

[hypothesis]
delta0 = 0.5
"#;

#[test]
fn validate_accepts_monotone_and_rejects_tight_cubic() {
    let dir = TempDir::new().unwrap();
    let ok = write_config(dir.path(), "mono.toml", MONOTONE);
    let o = run(&["validate", ok.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("valid `condition-test`"));

    let cubic = MONOTONE.replace("monotone_sigmoid_like", "cubic_plus_square").replace("delta0 = 0.5", "delta0 = 0.1");
    let bad = write_config(dir.path(), "cubic.toml", &cubic);
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("hypothesis.delta0"), "{err}");
    assert!(err.contains("-0.148"), "{err}");

    // `run` refuses the same config before simulating anything.
    let out = dir.path().join("never");
    let o = run(&["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn validate_rejects_stopping_rule_inside_last_window() {
    let dir = TempDir::new().unwrap();
    // tau = T - h/2 leaves no room for the second window.
    let text = PIECEWISE.replace("time = 0.0", "time = 0.75");
    let p = write_config(dir.path(), "tau.toml", &text);
    let o = run(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("events.tau[0]"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_report_their_line() {
    let dir = TempDir::new().unwrap();
    let text = MONOTONE.replace("sigma = 0.7", "sigma = 0.7\nvolatility = 2.0");
    let p = write_config(dir.path(), "typo.toml", &text);
    let o = run(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("volatility") && err.contains("line"), "{err}");
}

#[test]
fn missing_config_is_an_error() {
    let o = run(&["validate", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failing_condition_exits_2_and_names_the_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "pw.toml", PIECEWISE);
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("FAIL"), "{text}");
    assert!(text.contains("j=1 tau=deterministic(0) h=0.5 delta=0.5 c=1"), "{text}");

    let report = json(&out.join("report.json"));
    assert_eq!(report["verdict"], "FAIL");
    assert_eq!(report["schema_version"], 1);
    let failing = report["results"]["failing"].as_array().unwrap();
    assert!(failing.iter().any(|f| f.as_str().unwrap().starts_with("j=1 ")));
    assert!(!out.join("plots").exists());
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "mono.toml", MONOTONE);
    let mut reports = Vec::new();
    for (name, threads) in [("a", None), ("b", Some("1")), ("c", Some("3"))] {
        let out = dir.path().join(name);
        let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"];
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        reports.push((fs::read(out.join("report.json")).unwrap(), fs::read(out.join("summary.csv")).unwrap()));
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "mono.toml", MONOTONE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--no-plots"]).status.code(), Some(0));
    let o = run(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--no-plots", "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    let m = json(&b.join("manifest.json"));
    assert_eq!(m["base_seed"], 99);
    assert_eq!(m["seed_from_command_line"], true);
    assert_eq!(json(&b.join("report.json"))["base_seed"], 99);
}

#[test]
fn manifest_records_config_hash_version_and_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "mono.toml", MONOTONE);
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&out.join("manifest.json"));
    let digest: String = Sha256::digest(MONOTONE.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["config_sha256"], digest);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["base_seed"], 4);
    assert_eq!(m["n_paths"], 2000);
    assert_eq!(m["verdict"], "PASS");
    assert_eq!(m["seed_from_command_line"], false);
    let ts = m["created_utc"].as_str().unwrap();
    assert!(time::OffsetDateTime::parse(ts, &time::format_description::well_known::Rfc3339).is_ok(), "{ts}");
    for f in m["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).is_file(), "{f}");
    }
    let svg = fs::read_to_string(out.join("plots/event_cells.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn summary_csv_quotes_fields_with_commas() {
    let dir = TempDir::new().unwrap();
    let text = MONOTONE.replace(
        "[hypothesis]",
        "[events]\ntau = [{ rule = \"first_hit\", level = 0.2, cap = 0.4 }]\nh = [0.5]\n\n[hypothesis]",
    );
    let cfg = write_config(dir.path(), "hit.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let raw = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(raw.contains("\"first_hit(0.2, cap 0.4)\""), "{raw}");
    assert!(raw.contains("\r\n"));
    let mut reader = csv::Reader::from_reader(raw.as_bytes());
    let header = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.len() == header.len()));
    assert_eq!(&rows[0][1], "first_hit(0.2, cap 0.4)");
}

#[test]
fn output_dir_precedence() {
    let dir = TempDir::new().unwrap();
    let env_dir = dir.path().join("from_env");
    let cfg =
        write_config(dir.path(), "t.toml", "experiment = \"transform-analyze\"\n[transform]\nids = [\"identity\"]\n");
    let o = bin().args(["run", cfg.to_str().unwrap(), "--no-plots"]).env("CPS_LAB_OUT", &env_dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_dir.join("report.json").is_file());

    let cfg_dir = dir.path().join("from_config");
    let text = format!(
        "experiment = \"transform-analyze\"\noutput_dir = {:?}\n[transform]\nids = [\"identity\"]\n",
        cfg_dir.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), "t2.toml", &text);
    let o = bin().args(["run", cfg.to_str().unwrap(), "--no-plots"]).env("CPS_LAB_OUT", &env_dir).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(cfg_dir.join("report.json").is_file());

    let flag_dir = dir.path().join("from_flag");
    let o = bin()
        .args(["run", cfg.to_str().unwrap(), "--no-plots", "--out", flag_dir.to_str().unwrap()])
        .env("CPS_LAB_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.join("report.json").is_file());
}

#[test]
fn transform_analysis_flags_reference_mismatch_without_failing() {
    let dir = TempDir::new().unwrap();
    let text = r#"
experiment = "transform-analyze"
[transform]
ids = ["cubic_plus_square", "piecewise_ex3"]
delta0 = 1.0
[transform.reference_d]
cubic_plus_square = -0.4444444444444444
piecewise_ex3 = -1.0
"#;
    let cfg = write_config(dir.path(), "t.toml", text);
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&out.join("report.json"));
    let results = r["results"].as_array().unwrap();
    let cubic = &results[0];
    assert_eq!(cubic["agrees_with_reference"], false);
    assert!((cubic["d_on_box"].as_f64().unwrap() + 4.0 / 27.0).abs() < 1e-3);
    assert_eq!(cubic["alpha_interval"]["upper"]["finite"].as_f64().map(|u| (u - 6.75).abs() < 0.01), Some(true));
    let pw = &results[1];
    assert_eq!(pw["agrees_with_reference"], true);
    assert_eq!(pw["d0"], "unbounded");
    assert!(out.join("plots/transforms.svg").is_file());
}

#[test]
fn foreign_blocks_are_rejected() {
    let dir = TempDir::new().unwrap();
    let text = format!("{MONOTONE}\n[witness]\nalpha = [0.5]\n");
    let p = write_config(dir.path(), "w.toml", &text);
    let o = run(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("witness: block is not read"), "{}", stderr(&o));
}
