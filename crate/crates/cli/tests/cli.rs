use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn retrans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retrans"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gen(dir: &Path) {
    let out = retrans(&[
        "gen-corpus",
        "--out",
        dir.to_str().unwrap(),
        "--documents",
        "2",
        "--sentences-per-document",
        "20",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn inputs(dir: &Path) -> Vec<String> {
    [
        "--corpus",
        "corpus.tsv",
        "--lexicon",
        "lexicon.tsv",
        "--vocab",
        "vocab.txt",
    ]
    .chunks(2)
    .flat_map(|p| [p[0].to_string(), dir.join(p[1]).display().to_string()])
    .collect()
}

fn simulate(dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["simulate".to_string()];
    args.extend(inputs(dir));
    args.extend(extra.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = retrans(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Drops the fields that depend on wall-clock time or the machine.
fn strip_timing(v: &mut Value) {
    if let Value::Object(map) = v {
        map.retain(|k, _| !k.starts_with("latency") && k != "environment");
        map.values_mut().for_each(strip_timing);
    } else if let Value::Array(items) = v {
        items.iter_mut().for_each(strip_timing);
    }
}

#[test]
fn simulate_modes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let adaptive = simulate(dir.path(), &[]);
    let base = simulate(dir.path(), &["--mode", "base"]);
    let fixed0 = simulate(dir.path(), &["--mode", "knnmt", "--lambda", "0"]);
    assert_eq!(adaptive["schema_version"], 1);
    assert!(
        adaptive["aggregate"]["bleu"].as_f64().unwrap()
            > base["aggregate"]["bleu"].as_f64().unwrap()
    );
    assert_eq!(base["datastores"]["token"], 0);
    assert_eq!(base["aggregate"]["bleu"], fixed0["aggregate"]["bleu"]);
    for (a, b) in base["documents"]
        .as_array()
        .unwrap()
        .iter()
        .zip(fixed0["documents"].as_array().unwrap())
    {
        assert_eq!(a["hypotheses"], b["hypotheses"]);
    }
}

#[test]
fn simulate_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let mut a = simulate(dir.path(), &[]);
    let mut b = simulate(dir.path(), &[]);
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
}

#[test]
fn report_file_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let report = dir.path().join("report.json");
    let snaps = dir.path().join("snaps");
    let mut args = vec!["simulate".to_string()];
    args.extend(inputs(dir.path()));
    args.extend([
        "--report".into(),
        report.display().to_string(),
        "--snapshot-out".into(),
        snaps.display().to_string(),
    ]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = retrans(&args);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();

    let out = retrans(&[
        "snapshot",
        "info",
        snaps.join("token.snap").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let header: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(header["kind"], "token");
    assert_eq!(header["count"], written["datastores"]["token"]);

    let out = retrans(&["snapshot", "check", snaps.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let sizes: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sizes, written["datastores"]);

    let out = retrans(&["snapshot", "info", report.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_at_zero_is_base() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let base = simulate(dir.path(), &["--mode", "base"]);
    let mut args = vec!["sweep-lambda".to_string()];
    args.extend(inputs(dir.path()));
    args.extend(["--lambdas".into(), "0,0.3,0.3".into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = retrans(&args);
    assert_eq!(code(&out), 0);
    let points: Value = serde_json::from_slice(&out.stdout).unwrap();
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points[0]["bleu"], base["aggregate"]["bleu"]);
    assert_eq!(points[1], points[2]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path());
    let d = |f: &str| dir.path().join(f).display().to_string();

    assert_eq!(code(&retrans(&["--help"])), 0);
    assert_eq!(code(&retrans(&["--version"])), 0);
    assert_eq!(code(&retrans(&["simulate", "--help"])), 0);
    assert_eq!(code(&retrans(&[])), 1);
    assert_eq!(code(&retrans(&["frobnicate"])), 1);
    assert_eq!(
        code(&retrans(&["simulate", "--corpus", &d("corpus.tsv")])),
        1
    );
    assert_eq!(
        code(&retrans(&[
            "simulate",
            "--corpus",
            "c",
            "--lexicon",
            "l",
            "--mode",
            "greedy"
        ])),
        1
    );
    assert_eq!(
        code(&retrans(&[
            "simulate",
            "--corpus",
            "c",
            "--lexicon",
            "l",
            "--lambda",
            "1.5"
        ])),
        1
    );
    assert_eq!(
        code(&retrans(&[
            "simulate",
            "--corpus",
            "c",
            "--lexicon",
            "l",
            "--k",
            "0"
        ])),
        1
    );
    assert_eq!(
        code(&retrans(&[
            "sweep-lambda",
            "--corpus",
            "c",
            "--lexicon",
            "l",
            "--lambdas",
            "1"
        ])),
        1
    );

    let missing = retrans(&[
        "simulate",
        "--corpus",
        &d("absent.tsv"),
        "--lexicon",
        &d("lexicon.tsv"),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.tsv"));

    std::fs::write(dir.path().join("bad.tsv"), "only-one-column\n").unwrap();
    let bad = retrans(&[
        "simulate",
        "--corpus",
        &d("bad.tsv"),
        "--lexicon",
        &d("lexicon.tsv"),
        "--vocab",
        &d("vocab.txt"),
    ]);
    assert_eq!(code(&bad), 2);
    assert_eq!(
        code(&retrans(&[
            "serve",
            "--lexicon",
            &d("absent.tsv"),
            "--port",
            "0"
        ])),
        2
    );
}
