use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesturebench"))
        .args(args)
        .env_remove("GESTUREBENCH_THREADS")
        .output()
        .expect("spawn gesturebench")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Raw synthetic masks plus their normalized copies.
fn dataset(classes: usize, per_class: usize) -> (TempDir, std::path::PathBuf, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let norm = dir.path().join("norm");
    let (c, k) = (classes.to_string(), per_class.to_string());
    let o = cli(&["synth", "--out", p(&raw), "--classes", &c, "--per-class", &k]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cli(&["normalize", "--in", p(&raw), "--out", p(&norm)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir, raw, norm)
}

/// Three raw masks: a 2x2 synthetic set minus one image.
fn three_raw() -> (TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let o = cli(&["synth", "--out", p(&raw), "--classes", "2", "--per-class", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::remove_file(raw.join("g01_001.pgm")).unwrap();
    (dir, raw)
}

fn pgm_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count()
}

#[test]
fn normalize_three_valid_masks() {
    let (d, raw) = three_raw();
    let norm = d.path().join("norm");
    let o = cli(&["normalize", "--in", p(&raw), "--out", p(&norm)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(pgm_count(&norm), 3);
    let log = fs::read_to_string(norm.join("normalize_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "id,rotation_applied,scale_applied,width,height");
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn normalize_reports_missing_wrist() {
    let (d, raw) = three_raw();
    let wrists = fs::read_to_string(raw.join("wrists.csv")).unwrap();
    let kept: Vec<&str> = wrists.lines().filter(|l| !l.starts_with("g01_000")).collect();
    fs::write(raw.join("wrists.csv"), kept.join("\n") + "\n").unwrap();
    let out = d.path().join("partial");
    let o = cli(&["normalize", "--in", p(&raw), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("g01_000"), "{}", stderr(&o));
    assert_eq!(pgm_count(&out), 2);
}

#[test]
fn normalize_empty_directory() {
    let d = tempfile::tempdir().unwrap();
    let o = cli(&["normalize", "--in", p(d.path()), "--out", p(&d.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no inputs"));
}

#[test]
fn classify_against_itself_ranks_everything_first() {
    let (d, _, norm) = dataset(3, 2);
    let out = d.path().join("res.csv");
    let o = cli(&[
        "classify", "--gallery", p(&norm), "--probes", p(&norm), "--method", "scdt", "--threads", "2", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("1")), "{text}");
}

#[test]
fn unknown_method_lists_all_methods() {
    let d = tempfile::tempdir().unwrap();
    let o = cli(&["classify", "--gallery", p(d.path()), "--probes", p(d.path()), "--method", "sift", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for m in ["sc", "scdt", "sch", "hog", "dt", "tm", "hd", "hm"] {
        assert!(err.contains(m), "{m} missing from: {err}");
    }
}

#[test]
fn bench_without_baseline_thread_count_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = cli(&["bench", "--dataset", p(d.path()), "--threads", "2,4", "--out", "b.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("include 1"));
}

#[test]
fn single_thread_bench_has_unit_speedup() {
    let (d, _, norm) = dataset(3, 2);
    let (out, log) = (d.path().join("bench.csv"), d.path().join("bench.jsonl"));
    let o = cli(&[
        "bench", "--dataset", p(&norm), "--methods", "hm", "--threads", "1", "--log", p(&log), "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["HM", "1", "1"]);
    assert_eq!(row[6].parse::<f64>().unwrap(), 1.0);
    assert_eq!(row[7].parse::<f64>().unwrap(), 1.0);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
}

#[test]
fn evaluate_is_reproducible() {
    let (d, _, norm) = dataset(4, 3);
    let run = |name: &str| {
        let out = d.path().join(name);
        let o = cli(&[
            "evaluate", "--dataset", p(&norm), "--methods", "sc,hog", "--repeats", "3", "--seed", "11", "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("r=1"));
        fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(a.lines().count(), 1 + 2 * 4);
}

#[test]
fn config_rejects_unknown_keys() {
    let (d, _, norm) = dataset(2, 2);
    let cfg = d.path().join("params.txt");
    fs::write(&cfg, "alpha = 0.5\ngamma = 2\n").unwrap();
    let o = cli(&[
        "--config", p(&cfg), "classify", "--gallery", p(&norm), "--probes", p(&norm), "--method", "sc", "--out",
        p(&d.path().join("r.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gamma") && err.contains("hog_bins"), "{err}");

    fs::write(&cfg, "alpha = 0.5\nbeta = 0.5\n").unwrap();
    let o = cli(&[
        "--config", p(&cfg), "classify", "--gallery", p(&norm), "--probes", p(&norm), "--method", "scdt", "--out",
        p(&d.path().join("r.csv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn thread_count_falls_back_to_environment() {
    let (d, _, norm) = dataset(2, 2);
    let out = d.path().join("r.csv");
    let args = ["classify", "--gallery", p(&norm), "--probes", p(&norm), "--method", "dt", "--out", p(&out)];
    let with_env = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_gesturebench"))
            .args(args)
            .env("GESTUREBENCH_THREADS", v)
            .output()
            .unwrap()
    };
    let bad = with_env("many");
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("GESTUREBENCH_THREADS"));
    assert!(with_env("3").status.success());
    // the flag wins over the environment
    let o = Command::new(env!("CARGO_BIN_EXE_gesturebench"))
        .args(args)
        .args(["--threads", "1"])
        .env("GESTUREBENCH_THREADS", "many")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
