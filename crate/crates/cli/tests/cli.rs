use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};

use kprism_cli::bench::{bench_overhead, BenchError, Instrumenter, NoInstrumentation};

fn kprism(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kprism"))
        .args(args)
        .current_dir(cwd)
        .env("KPRISM_PIN_DIR", cwd.join("no-probes"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn record_needs_exactly_one_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = kprism(
        &["record", "--duration", "5", "--out", "m.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = kprism(
        &[
            "record",
            "--tgid",
            "1",
            "--comm",
            "x",
            "--duration",
            "5",
            "--out",
            "m.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn record_validation_and_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let me = std::process::id().to_string();
    let o = kprism(
        &["record", "--tgid", &me, "--duration", "0", "--out", "m"],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = kprism(
        &[
            "record",
            "--comm",
            "no-such-process-name",
            "--duration",
            "1",
            "--out",
            "m",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("target not found"));
    let o = kprism(
        &[
            "record",
            "--tgid",
            &me,
            "--duration",
            "1",
            "--out",
            "m",
            "--lossy-policy",
            "drop",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    // Probes not loaded: a runtime failure, not a usage error.
    let o = kprism(
        &["record", "--tgid", &me, "--duration", "1", "--out", "m"],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("no-probes"));
}

#[test]
fn generate_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let o = kprism(
        &[
            "generate",
            "--scenario",
            "meltdown",
            "--threads",
            "2",
            "--duration",
            "5",
            "--seed",
            "1",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    let o = kprism(
        &[
            "generate",
            "--scenario",
            "idle",
            "--threads",
            "0",
            "--duration",
            "5",
            "--seed",
            "1",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("t").exists());
}

#[test]
fn generate_replay_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = kprism(
        &[
            "generate",
            "--scenario",
            "lock_contention",
            "--threads",
            "3",
            "--duration",
            "60",
            "--seed",
            "4",
            "--out",
            "t.jsonl",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["t.jsonl", "t.jsonl.kpi.csv", "t.jsonl.truth.json"] {
        assert!(p.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(p.join("t.jsonl.kpi.csv"))
        .unwrap()
        .starts_with("ts,value\n"));
    assert_eq!(
        code(&kprism(
            &["replay", "--trace", "t.jsonl", "--out", "m.jsonl"],
            p
        )),
        0
    );
    let first = fs::read_to_string(p.join("m.jsonl")).unwrap();
    let first_sample = first.lines().find(|l| !l.starts_with("{\"ep\"")).unwrap();
    assert!(
        first_sample.starts_with("{\"ts\":1700000000,\"iv\":0,"),
        "{first_sample}"
    );

    let o = kprism(
        &[
            "analyze",
            "--metrics",
            "m.jsonl",
            "--kpi",
            "t.jsonl.kpi.csv",
            "--threshold",
            "0.6",
            "--window",
            "1700000010,1700000049",
            "--report",
            "r.json",
            "--plot-dir",
            "plots",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "kprism.tracking_report/v1");
    assert_eq!(report["threshold"], 0.6);
    assert_eq!(
        report["window"],
        serde_json::json!([1700000010u64, 1700000049u64])
    );
    assert_eq!(report["seconds"], 40);
    assert!(p.join("plots/kpi.csv").exists());
    let plots = fs::read_dir(p.join("plots")).unwrap().count();
    assert_eq!(plots, 1 + report["candidates"].as_array().unwrap().len());

    let o = kprism(&["report", "--report", "r.json"], p);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(
        text.contains("entrypoints:") && text.contains("futex_wait_time"),
        "{text}"
    );
}

#[test]
fn analyze_argument_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    kprism(
        &[
            "generate",
            "--scenario",
            "idle",
            "--threads",
            "1",
            "--duration",
            "5",
            "--seed",
            "0",
            "--out",
            "t",
        ],
        p,
    );
    kprism(&["replay", "--trace", "t", "--out", "m"], p);
    let base = [
        "analyze",
        "--metrics",
        "m",
        "--kpi",
        "t.kpi.csv",
        "--report",
        "r",
    ];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend_from_slice(extra);
        code(&kprism(&v, p))
    };
    assert_eq!(with(&["--threshold", "1.5"]), 1);
    assert_eq!(with(&["--window", "9,3"]), 1);
    assert_eq!(with(&["--window", "3"]), 1);
    // Five seconds of overlap is below the minimum.
    assert_eq!(with(&[]), 2);
    assert_eq!(
        code(&kprism(&["replay", "--trace", "absent", "--out", "m2"], p)),
        2
    );
    assert_eq!(code(&kprism(&["report", "--report", "absent"], p)), 2);
}

fn script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path.display().to_string()
}

#[test]
fn bench_harness_pools_latencies_per_side() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(
        dir.path(),
        "wl",
        "echo warmup\necho latency_ms 1.5\necho latency_ms 2.5",
    );
    let s = bench_overhead(&cmd, 3, &mut NoInstrumentation).unwrap();
    assert_eq!(s.baseline.n, 6);
    assert_eq!(s.instrumented.n, 6);
    assert!((s.baseline.mean - 2.0).abs() < 1e-12);
    assert!(s.delta_ms().abs() < 1e-12);
    let text = s.to_string();
    assert!(
        text.contains("baseline") && text.contains("delta"),
        "{text}"
    );
}

#[derive(Default)]
struct Counting {
    attached: Vec<u32>,
    detached: usize,
}

impl Instrumenter for Counting {
    fn attach(&mut self, pid: u32) -> Result<(), BenchError> {
        self.attached.push(pid);
        Ok(())
    }

    fn detach(&mut self) -> Result<(), BenchError> {
        self.detached += 1;
        Ok(())
    }
}

#[test]
fn bench_attaches_once_per_instrumented_run() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "wl", "echo latency_ms 0.5");
    let mut inst = Counting::default();
    bench_overhead(&cmd, 4, &mut inst).unwrap();
    assert_eq!(inst.attached.len(), 4);
    assert_eq!(inst.detached, 4);
    assert!(inst.attached.iter().all(|p| *p != 0));
}

#[test]
fn bench_failures() {
    let dir = tempfile::tempdir().unwrap();
    let silent = script(dir.path(), "silent", "echo done");
    assert!(matches!(
        bench_overhead(&silent, 1, &mut NoInstrumentation),
        Err(BenchError::NoLatencies)
    ));
    let failing = script(dir.path(), "failing", "echo latency_ms 1\nexit 3");
    assert!(matches!(
        bench_overhead(&failing, 2, &mut NoInstrumentation),
        Err(BenchError::Workload(_))
    ));
    let o = kprism(
        &["bench-overhead", "--cmd", &silent, "--reps", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("no `latency_ms` lines"),
        "{}",
        stderr(&o)
    );
    let o = kprism(
        &["bench-overhead", "--cmd", &silent, "--reps", "0"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}
