use std::path::Path;
use std::process::{Command, Output};

use chrono::TimeZone;
use sieve_core::harness::experiment::{ExperimentReport, REPORT_SCHEMA};
use sieve_core::store::Store;
use sieve_core::{Comment, FilterPrompt};

fn sieve(db: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_sieve"))
        .arg("--db")
        .arg(db)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "sieve {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_comments(path: &Path, n: usize) {
    let t0 = chrono::Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
    let text: String = (0..n)
        .map(|i| {
            let c = Comment::new(format!("c{i}"), format!("comment number {i}"), t0 + chrono::Duration::minutes(i as i64));
            sieve_core::jsonl::to_line(&c) + "\n"
        })
        .collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn ingest_twice_adds_once() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    let src = dir.path().join("c.jsonl");
    write_comments(&src, 12);
    let first: serde_json::Value = serde_json::from_slice(&sieve(&db, &["ingest", "--source", src.to_str().unwrap()]).stdout).unwrap();
    assert_eq!(first["added"], 12);
    let again: serde_json::Value = serde_json::from_slice(&sieve(&db, &["ingest", "--source", src.to_str().unwrap()]).stdout).unwrap();
    assert_eq!((again["added"].as_u64(), again["duplicates"].as_u64()), (Some(0), Some(12)));
    let polled: serde_json::Value =
        serde_json::from_slice(&sieve(&db, &["ingest", "--poll", "--source", src.to_str().unwrap()]).stdout).unwrap();
    assert_eq!(polled["added"], 0);
    assert_eq!(Store::open(&db).unwrap().comment_count().unwrap(), 12);
}

#[test]
fn export_import_and_compact() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    {
        let store = Store::open(&db).unwrap();
        store.create_filter("spam", "Spam").unwrap();
        store
            .put_filter_version("spam", &FilterPrompt::draft("spam", "Spam", "Catch casino ads"))
            .unwrap();
    }
    let out = dir.path().join("spam.json");
    sieve(&db, &["export-filter", "--id", "spam", "--out", out.to_str().unwrap()]);
    let other = dir.path().join("other.db");
    sieve(&other, &["import-filter", "--in", out.to_str().unwrap()]);
    sieve(&other, &["import-filter", "--in", out.to_str().unwrap(), "--as-id", "copy"]);
    let store = Store::open(&other).unwrap();
    assert_eq!(store.latest_version("copy").unwrap().description, "Catch casino ads");
    assert_eq!(store.latest_version("spam").unwrap().version, 1);
    drop(store);
    let msg = String::from_utf8(sieve(&other, &["compact", "--latest-only"]).stdout).unwrap();
    assert!(msg.starts_with("removed 0 predictions"), "{msg}");
}

#[test]
fn experiment_writes_a_versioned_report() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("s.db");
    let out = dir.path().join("report.json");
    sieve(
        &db,
        &[
            "experiment",
            "--corpus",
            "synthetic",
            "--conditions",
            "promptimizer,protegi",
            "--iterations",
            "1",
            "--seed",
            "7",
            "--n",
            "120",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    let report = ExperimentReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.schema, REPORT_SCHEMA);
    assert_eq!(report.conditions.len(), 2);
    assert!(!report.partial);
}

#[test]
fn bad_arguments_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_sieve"))
        .args(["experiment", "--conditions", "nonsense"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
