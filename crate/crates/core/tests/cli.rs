use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn tvbarc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvbarc"))
        .args(args)
        .env_remove("TVBARC_OUT_DIR")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn ingest_half_year_range() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.csv");
    std::fs::write(
        &records,
        "id,timestamp,keyword\n\
         1,2020-01-01T10:00:00Z,cyberbullying\n\
         1,2020-01-01T10:00:00Z,cyberbullying\n\
         2,2020-03-15 08:00:00,Twitter harassment\n\
         3,2020-06-07,online abuse\n\
         4,2020-06-08,online abuse\n\
         5,garbage,online abuse\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = tvbarc(&["ingest", s(&records), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for label in ["CY", "ON", "TW", "TOTAL"] {
        assert_eq!(data_lines(&out.join(format!("{label}.csv"))).len(), 159, "{label}");
    }
    let total: Vec<String> = data_lines(&out.join("TOTAL.csv"));
    assert_eq!(total[0], "2020-01-01,1");
    assert_eq!(total[158], "2020-06-07,1");
    let m = manifest(&out);
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["config"]["duplicates_dropped"], 1);
    assert_eq!(m["config"]["out_of_range_dropped"], 1);
    assert_eq!(m["config"]["rejected_lines"], serde_json::json!([7]));
    assert_eq!(m["inputs"][0]["file"], "records.csv");
}

#[test]
fn ingest_empty_file_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.jsonl");
    std::fs::write(&records, "").unwrap();
    let out = tmp.path().join("out");
    assert!(tvbarc(&["ingest", s(&records), "--out", s(&out)]).status.success());
    assert!(data_lines(&out.join("TOTAL.csv")).iter().all(|l| l.ends_with(",0")));
    let warnings = manifest(&out)["warnings"].as_array().unwrap().clone();
    assert_eq!(warnings.len(), 1);
}

#[test]
fn bad_class_map_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.csv");
    std::fs::write(&records, "id,timestamp,keyword\n1,2020-01-01,cyber\n").unwrap();
    let classes = tmp.path().join("classes.json");
    std::fs::write(&classes, "{\"CY\": [\"cyber\"], \"CY\": [\"x\"]}").unwrap();
    let out = tmp.path().join("out");
    let o = tvbarc(&["ingest", s(&records), "--classes", s(&classes), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(&classes, "{not json").unwrap();
    let o = tvbarc(&["ingest", s(&records), "--classes", s(&classes), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 2);
}

#[test]
fn changepoint_on_step_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cp");
    let o = tvbarc(&["changepoint", s(&fixture("synthetic_step.csv")), "--out", s(&out)]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("changepoint.json")).unwrap()).unwrap();
    assert_eq!(r["tau_hat"], 59);
    assert_eq!(r["date_at_tau"], "2020-02-28");
    assert_eq!(r["series"], "synthetic_step");
}

#[test]
fn acf_default_lags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("acf");
    assert!(tvbarc(&["acf", s(&fixture("synthetic_step.csv")), "--out", s(&out)]).status.success());
    let rows = data_lines(&out.join("acf.csv"));
    assert_eq!(rows.len(), 31);
    assert_eq!(rows[0], "0,1");
}

#[test]
fn simulate_uses_env_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_tvbarc"))
        .args(["simulate", s(&fixture("ramp_genspec.json")), "--seed", "3"])
        .env("TVBARC_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(data_lines(&out.join("counts.csv")).len(), 159);
    assert_eq!(manifest(&out)["config"]["seed"], 3);
}

#[test]
fn fit_writes_one_trend_per_lag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = tvbarc(&[
        "fit",
        s(&fixture("synthetic_step.csv")),
        "--p",
        "10",
        "--burnin",
        "200",
        "--samples",
        "300",
        "--proposal",
        "gradient-informed",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_lines(&out.join("mu_trend.csv")).len(), 100);
    for i in 1..=10 {
        assert!(out.join(format!("ar_{i}_trend.csv")).exists());
    }
    assert_eq!(data_lines(&out.join("chain.csv")).len(), 300);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("chain_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["chains"].as_array().unwrap().len(), 1);
    let m = manifest(&out);
    assert_eq!(m["config"]["sampler_config"]["burn_in"], 200);
    assert_eq!(m["config"]["model_spec"]["p"], 10);
    let trends: Value = serde_json::from_str(&std::fs::read_to_string(out.join("trends.json")).unwrap()).unwrap();
    assert_eq!(trends["trends"].as_array().unwrap().len(), 11);
}

#[test]
fn fit_failures_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let short = tmp.path().join("short.csv");
    std::fs::write(&short, "date,count\n2020-01-01,3\n2020-01-02,4\n").unwrap();
    let out = tmp.path().join("fit");
    assert_eq!(tvbarc(&["fit", s(&short), "--p", "2", "--out", s(&out)]).status.code(), Some(2));
    let step = fixture("synthetic_step.csv");
    assert_eq!(tvbarc(&["fit", s(&step), "--level", "1.5", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(tvbarc(&["fit", s(&step), "--k1", "2", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(tvbarc(&["fit", s(&step), "--proposal", "hmc", "--out", s(&out)]).status.code(), Some(1));
    let gap = tmp.path().join("gap.csv");
    std::fs::write(&gap, "date,count\n2020-01-01,3\n2020-01-03,4\n").unwrap();
    let o = tvbarc(&["fit", s(&gap), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!out.exists());
}

#[test]
fn chains_run_in_parallel_and_sequentially_alike() {
    let tmp = tempfile::tempdir().unwrap();
    let step = fixture("synthetic_step.csv");
    let mut outputs = Vec::new();
    for (name, extra) in [("par", None), ("seq", Some("--sequential"))] {
        let out = tmp.path().join(name);
        let mut args = vec!["fit", s(&step), "--chains", "3", "--burnin", "400", "--samples", "200", "--out", s(&out)];
        args.extend(extra);
        assert!(tvbarc(&args).status.success());
        outputs.push(std::fs::read(out.join("chain.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(String::from_utf8_lossy(&outputs[0]).lines().count(), 601);
}
