use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frogsim_cli::ExperimentConfig;
use serde_json::Value;

fn frogsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frogsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FROGSIM_SEED")
        .output()
        .unwrap()
}

fn artifacts(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            assert!(v["timestamp"].is_u64());
            v.as_object_mut().unwrap().remove("timestamp");
            v
        })
        .collect()
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (args, key) in [
        (vec!["hit", "--a", "1.5"], "`a`"),
        (vec!["hit", "--dist", "exppareto:0"], "s = 0"),
        (vec!["hit", "--alpha", "2"], "`alpha`"),
    ] {
        let o = frogsim(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(key), "{args:?}");
    }
    let o = frogsim(dir.path(), &["hit", "--zeta", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = frogsim(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`command`"));
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--seeds", "5,6", "--dist", "geom:0.5,det:2", "--window", "4,8", "--workers", "2"];
    assert_eq!(frogsim(a.path(), &args).status.code(), Some(0));
    let mut other = args.to_vec();
    let last = other.len() - 1;
    other[last] = "1";
    assert_eq!(frogsim(b.path(), &other).status.code(), Some(0));
    let ra = records(&artifacts(a.path(), "jsonl")[0]);
    let mut rb = records(&artifacts(b.path(), "jsonl")[0]);
    assert_eq!(ra.len(), 8);
    // Only the echoed worker count and output directory differ.
    for r in &mut rb {
        r["config"]["workers"] = Value::from("2");
        r["config"]["out"] = ra[0]["config"]["out"].clone();
    }
    assert_eq!(ra, rb);
    assert_eq!(ra[0]["seed"], 5);
    assert_eq!(ra[0]["config"]["seeds"], "5,6");
}

#[test]
fn env_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_frogsim"))
        .args(["simulate", "--window", "4", "--out"])
        .arg(dir.path())
        .env("FROGSIM_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let r = records(&artifacts(dir.path(), "jsonl")[0]);
    assert_eq!(r[0]["seed"], 77);
}

#[test]
fn recorded_config_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(dir.path(), &["simulate", "--seeds", "9", "--window", "6", "--dist", "geom:0.3"]);
    assert_eq!(o.status.code(), Some(0));
    let first = records(&artifacts(dir.path(), "jsonl")[0]);
    let cfg = first[0]["config"].as_object().unwrap();
    let text: String = cfg
        .iter()
        .map(|(k, v)| format!("{k} = {}\n", v.as_str().unwrap()))
        .collect();
    let parsed = ExperimentConfig::from_text(&text).unwrap();
    assert_eq!(ExperimentConfig::from_text(&parsed.to_text()).unwrap(), parsed);
    let conf = dir.path().join("rerun.conf");
    fs::write(&conf, &text).unwrap();
    let again = tempfile::tempdir().unwrap();
    let o = frogsim(again.path(), &["--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut second = records(&artifacts(again.path(), "jsonl")[0]);
    second[0]["config"]["out"] = first[0]["config"]["out"].clone();
    assert_eq!(first, second);
}

#[test]
fn frog_cap_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(dir.path(), &["simulate", "--dist", "det:3", "--window", "10", "--frog-cap", "2"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn vacuous_certificate_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(dir.path(), &["certify", "--k-max", "3", "--b", "1e-9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("vacuous certificate"));
    let o = frogsim(dir.path(), &["certify", "--c1", "0.4", "--b", "0.3", "--level", "0.999"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("smallest k"));
}

#[test]
fn cascade_reports_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(dir.path(), &["cascade", "--d", "1", "--c1", "0.34", "--i-max", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let levels = artifacts(dir.path(), "csv")
        .into_iter()
        .find(|p| p.to_string_lossy().ends_with("-levels.csv"))
        .unwrap();
    let mut rdr = csv::Reader::from_path(levels).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..5], ["n", "exact", "formula", "lower", "upper"]);
    assert_eq!(rdr.records().count(), 4);
}

#[test]
fn phase_scan_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(
        dir.path(),
        &["phase-scan", "--dist", "exppareto:0.5,geom:0.5", "--window", "8,32", "--seeds", "0..4", "--site-cap", "50"],
    );
    assert_eq!(o.status.code(), Some(0));
    let table = artifacts(dir.path(), "csv")
        .into_iter()
        .find(|p| !p.to_string_lossy().ends_with("-growth.csv"))
        .unwrap();
    let mut rdr = csv::Reader::from_path(table).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    for col in ["dist", "w", "mean", "stderr"] {
        assert!(header.iter().any(|h| h == col));
    }
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[0][0], "exppareto:0.5");
    assert_eq!(&rows[3][1], "32");
}

#[test]
fn hit_and_extremes_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(dir.path(), &["hit", "--a", "0.2", "--distances", "1,3", "--samples", "2000"]);
    assert_eq!(o.status.code(), Some(0));
    let r = records(&artifacts(dir.path(), "jsonl")[0]);
    assert_eq!(r[0]["result"]["eps_violations"], 0);
    let dir = tempfile::tempdir().unwrap();
    let o = frogsim(
        dir.path(),
        &["extremes", "--dist", "geom:0.5,exppareto:1", "--r", "1.5", "--traces", "20", "--samples", "2000"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(artifacts(dir.path(), "csv").len() == 2);
}
