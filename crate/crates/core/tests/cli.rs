use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_MODEL: &[&str] = &["--layers", "1", "--M", "3", "--cond-width", "4", "--iters", "30", "--lr", "1e-2"];

fn nhpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhpp"))
        .args(args)
        .env("NHPP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nhpp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn with_model(base: &[&str]) -> Vec<String> {
    base.iter().chain(SMALL_MODEL).map(|s| s.to_string()).collect()
}

fn run_owned(args: &[String]) -> String {
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

/// Runs the whole pipeline into `dir` and returns the printed text.
fn pipeline(dir: &Path) -> String {
    let mut log = String::new();
    log += &ok(&["generate", "--intensity", "lambda1", "--seed", "3", "--out", &p(dir, "pts.csv")]);
    log += &ok(&["generate", "--intensity", "lambda3", "--seed", "3", "--out", &p(dir, "pts2.csv")]);
    log += &run_owned(&with_model(&[
        "fit",
        "--input",
        &p(dir, "pts.csv"),
        "--seed",
        "9",
        "--out",
        &p(dir, "model.json"),
    ]));
    log += &ok(&["simulate", "--model", &p(dir, "model.json"), "--n", "40", "--seed", "1", "--out", &p(dir, "sim.csv")]);
    log += &ok(&["simulate", "--model", &p(dir, "model.json"), "--poisson", "--seed", "1", "--out", &p(dir, "simp.csv")]);
    log += &ok(&["density", "--model", &p(dir, "model.json"), "--grid", "50", "--out", &p(dir, "dens.csv")]);
    log += &ok(&["kde", "--input", &p(dir, "pts2.csv"), "--grid", "20", "--out", &p(dir, "kde.csv")]);
    log += &ok(&["evaluate", "--model", &p(dir, "model.json"), "--truth", "lambda1", "--grid", "200"]);
    log += &ok(&["qq", "--model", &p(dir, "model.json"), "--input", &p(dir, "pts.csv"), "--out", &p(dir, "qq.csv")]);
    log += &run_owned(&with_model(&[
        "bootstrap",
        "--input",
        &p(dir, "pts.csv"),
        "--B",
        "4",
        "--grid",
        "30",
        "--thresholds",
        "400,600",
        "--seed",
        "5",
        "--out-se",
        &p(dir, "se.csv"),
        "--out-exceed",
        &p(dir, "exceed.csv"),
    ]));
    log += &ok(&[
        "experiment",
        "--name",
        "table2",
        "--reps",
        "2",
        "--iters",
        "10",
        "--M",
        "3",
        "--cond-width",
        "4",
        "--layers",
        "1,2",
        "--seed",
        "4",
        "--out",
        &p(dir, "exp.csv"),
    ]);
    log
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path.file_name().unwrap().into(), bytes)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let log_a = pipeline(a.path());
    let log_b = pipeline(b.path());
    assert_eq!(log_a, log_b);
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, fb);
}

#[test]
fn seed_changes_the_output() {
    let d = TempDir::new().unwrap();
    ok(&["generate", "--intensity", "lambda2", "--seed", "1", "--out", &p(d.path(), "a.csv")]);
    ok(&["generate", "--intensity", "lambda2", "--seed", "2", "--out", &p(d.path(), "b.csv")]);
    assert_ne!(fs::read(d.path().join("a.csv")).unwrap(), fs::read(d.path().join("b.csv")).unwrap());
}

#[test]
fn zero_points_writes_header_only() {
    let d = TempDir::new().unwrap();
    let dir = d.path();
    ok(&["generate", "--intensity", "lambda3", "--seed", "2", "--out", &p(dir, "pts.csv")]);
    run_owned(&with_model(&["fit", "--input", &p(dir, "pts.csv"), "--out", &p(dir, "m.json")]));
    ok(&["simulate", "--model", &p(dir, "m.json"), "--n", "0", "--out", &p(dir, "none.csv")]);
    assert_eq!(fs::read_to_string(dir.join("none.csv")).unwrap(), "x1,x2\n");
}

#[test]
fn exit_codes_follow_error_class() {
    let d = TempDir::new().unwrap();
    let dir = d.path();
    // usage
    assert_eq!(nhpp(&["fit"]).status.code(), Some(2));
    assert_eq!(nhpp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        nhpp(&["simulate", "--model", "m.json", "--n", "3", "--poisson", "--out", "x.csv"]).status.code(),
        Some(2)
    );
    // data
    let missing = nhpp(&["fit", "--input", &p(dir, "absent.csv"), "--out", &p(dir, "m.json")]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    fs::write(dir.join("bad.csv"), "x\n1\nfoo\n").unwrap();
    assert_eq!(
        nhpp(&["fit", "--input", &p(dir, "bad.csv"), "--out", &p(dir, "m.json")]).status.code(),
        Some(3)
    );
    fs::write(dir.join("junk.json"), "{\"format\": 1}").unwrap();
    assert_eq!(
        nhpp(&["density", "--model", &p(dir, "junk.json"), "--out", &p(dir, "d.csv")]).status.code(),
        Some(3)
    );
    // numerical: a step size this large overflows the first update
    ok(&["generate", "--intensity", "lambda1", "--seed", "1", "--out", &p(dir, "pts.csv")]);
    let diverged = nhpp(&[
        "fit", "--input", &p(dir, "pts.csv"), "--layers", "1", "--M", "3", "--cond-width", "4", "--iters", "50", "--lr",
        "1e300", "--out", &p(dir, "m.json"),
    ]);
    assert_eq!(diverged.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverged.stderr));
    assert!(!dir.join("m.json").exists());
}

#[test]
fn help_exits_cleanly() {
    let out = nhpp(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["fit", "simulate", "generate", "density", "bootstrap", "kde", "evaluate", "qq", "experiment"] {
        assert!(text.contains(sub), "missing {sub}");
    }
}
