#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub const EPOCH: &str = "1718000000";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo() -> PathBuf {
    repo_root().join("fixtures/demo")
}

/// Runs the binary in `dir` with a pinned clock and no ambient config.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foresight"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env_remove("FORESIGHT_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The full mock workflow, asserting every step exits 0.
pub fn golden_run(dir: &Path) {
    let mock = demo();
    let mock = mock.to_str().unwrap();
    let steps: [&[&str]; 10] = [
        &["generate", "--topic", "automotive", "-n", "6", "--as-of", "2024-02-15"],
        &["generate", "--topic", "energy", "-n", "5", "--as-of", "2024-02-15"],
        &["generate", "--topic", "climate-change", "-n", "5", "--as-of", "2024-02-15"],
        &["estimate", "--all-pending", "--trace", "--jobs", "3"],
        &["reconcile"],
        &["factcheck", "--as-of", "2024-10-15", "--screen"],
        &["calibrate", "--seed", "7"],
        &["report", "--out", "report"],
        &["status"],
        &["reconcile"],
    ];
    for args in steps {
        let mut full = vec!["--mock", mock];
        full.extend_from_slice(args);
        let o = run(dir, &full);
        assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    }
}

pub fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

/// `(p, u, outcome)` for every forecast that counts towards calibration,
/// joined directly from the raw ledger lines.
pub fn scored_records(ledger: &Path) -> Vec<(f64, f64, u8)> {
    #[derive(Default)]
    struct F {
        est: Option<(u64, f64, f64)>,
        rec: Option<(u64, f64)>,
        invalid: bool,
        outcome: Option<Option<u8>>,
    }
    let mut by_id: BTreeMap<String, F> = BTreeMap::new();
    for line in fs::read_to_string(ledger).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let pos = v["position"].as_u64().unwrap();
        let p = &v["payload"];
        let id = p.get("forecast_id").or_else(|| p.get("id")).unwrap().as_str().unwrap().to_string();
        let f = by_id.entry(id).or_default();
        match v["entry_kind"].as_str().unwrap() {
            "estimate" => f.est = Some((pos, p["p_hat"].as_f64().unwrap(), p["u_hat"].as_f64().unwrap())),
            "calibrated" if p["method"] == "reconciled" => f.rec = Some((pos, p["probability"].as_f64().unwrap())),
            "outcome" if p["purpose"] == "screening" => f.invalid = p["verdict"] == "happened",
            "outcome" => {
                f.outcome = Some(match p["verdict"].as_str().unwrap() {
                    "happened" => Some(1),
                    "did_not_happen" => Some(0),
                    _ => None,
                })
            }
            _ => {}
        }
    }
    by_id
        .into_values()
        .filter(|f| !f.invalid)
        .filter_map(|f| {
            let (ep, p, u) = f.est?;
            let o = f.outcome??;
            let p = match f.rec {
                Some((rp, r)) if rp > ep => r,
                _ => p,
            };
            Some((p, u, o))
        })
        .collect()
}

/// Groups records into ten equal-width bins by integer decile and renders
/// the rows the way calibration.csv writes them.
pub fn oracle_calibration_rows(records: &[(f64, f64, u8)]) -> Vec<String> {
    let mut groups: Vec<Vec<(f64, f64, u8)>> = vec![Vec::new(); 10];
    for &r in records {
        let mut k = 0;
        while k < 9 && r.0 >= (k + 1) as f64 / 10.0 {
            k += 1;
        }
        groups[k].push(r);
    }
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let (lo, hi) = (k as f64 / 10.0, (k + 1) as f64 / 10.0);
            if g.is_empty() {
                return format!("{lo:.6},{hi:.6},0,,,");
            }
            let n = g.len() as f64;
            let mean = |f: &dyn Fn(&(f64, f64, u8)) -> f64| g.iter().map(f).sum::<f64>() / n;
            format!(
                "{lo:.6},{hi:.6},{},{:.6},{:.6},{:.6}",
                g.len(),
                mean(&|r| r.0),
                mean(&|r| f64::from(r.2)),
                mean(&|r| r.1)
            )
        })
        .collect()
}
