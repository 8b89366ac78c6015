use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use veilmod_core::fixture::write_corpus;
use veilmod_core::corpus::{Category, Realism};

fn veilmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_veilmod"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run veilmod")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn small_corpus(dir: &Path) -> PathBuf {
    let out = dir.join("corpus");
    write_corpus(
        &out,
        &[
            (Category::SexNudity, Realism::Realistic, 2),
            (Category::Graphic, Realism::Synthetic, 2),
            (Category::Safe, Realism::Realistic, 2),
        ],
    )
    .expect("corpus");
    out
}

fn small_config(dir: &Path, corpus: &Path) -> PathBuf {
    let path = dir.join("veilmod.toml");
    std::fs::write(
        &path,
        format!(
            "experiment_id = \"t\"\ncorpus = {:?}\nlog_dir = \"logs\"\ncache_dir = \"cache\"\n\
             tasks_per_session = 6\nseed = 7\nregion_radius = 4\nfsync = false\n",
            s(corpus)
        ),
    )
    .unwrap();
    path
}

#[test]
fn ingest_prints_the_count_table() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let out = dir.path().join("copy");
    let o = veilmod(&["ingest", "--manifest", s(&corpus.join("manifest.csv")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("sex_nudity"), "{text}");
    assert!(out.join("manifest.csv").exists());
}

#[test]
fn ingest_rejects_bad_records_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let manifest = corpus.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let first_id = text.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    std::fs::write(&manifest, text.replacen("sex_nudity", "violence", 1)).unwrap();
    let o = veilmod(&["ingest", "--manifest", s(&manifest), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("violence") || err.contains(&first_id), "{err}");

    let o = veilmod(&["ingest", "--manifest", s(&dir.path().join("absent.csv")), "--out", s(&dir.path().join("y"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn prewarm_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let cache = dir.path().join("cache");
    let args = ["prewarm", "--corpus", s(&corpus), "--sigmas", "7,14", "--cache", s(&cache)];
    let o = veilmod(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rendered 12 rendition(s), 0 already cached"));
    let o = veilmod(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rendered 0 rendition(s), 12 already cached"));

    let o = veilmod(&["prewarm", "--corpus", s(&corpus), "--sigmas", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn simulate_then_report_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let config = small_config(dir.path(), &corpus);
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/identity.toml");
    let out = dir.path().join("out");
    let o = veilmod(&[
        "simulate",
        "--experiment",
        s(&config),
        "--workers",
        "6",
        "--accuracy-profile",
        s(&profile),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let live = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(out.join("trace.jsonl").exists());

    let log = dir.path().join("logs/t");
    let o = veilmod(&["report", "--log", s(&log)]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), live);

    let o = veilmod(&["report", "--log", s(&log), "--format", "csv"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("stage"));

    let o = veilmod(&["report", "--log", s(&log), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("json report");
    assert_eq!(v["stages"].as_array().map(Vec::len), Some(6));

    let o = veilmod(&["report", "--log", s(&log), "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));

    // A second run into the same log is refused.
    let o = veilmod(&[
        "simulate",
        "--experiment",
        s(&config),
        "--workers",
        "1",
        "--accuracy-profile",
        s(&profile),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("events.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = veilmod(&["report", "--log", s(&empty)]);
    assert_eq!(o.status.code(), Some(3));

    let o = veilmod(&["report", "--log", s(&dir.path().join("nothing"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn instruments_file_round_trips_through_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("battery.toml");
    let o = veilmod(&["instruments", "--out", s(&path)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let b = veilmod_core::survey::Battery::from_toml_str(&text).unwrap();
    assert_eq!(b, veilmod_core::survey::Battery::standard());
}
