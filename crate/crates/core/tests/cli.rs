// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use damq_noc::report::{load_records, RUN_RECORD_COLUMNS};

const SHORT: [&str; 6] = [
    "--warmup_cycles=100",
    "--measure_cycles=400",
    "--drain_limit_cycles=5000",
    "--width=4",
    "--height=4",
    "--packet_len=8",
];

fn damqsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_damqsim"))
        .args(args)
        .output()
        .expect("spawn damqsim")
}

fn with_short<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SHORT).collect()
}

#[test]
fn run_prints_one_row_with_header() {
    let out = damqsim(&with_short(&["run", "--scheme=DAMQS", "--injection_rate=0.1"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], RUN_RECORD_COLUMNS.join(","));
    assert!(lines[1].starts_with("DAMQS,"));
}

#[test]
fn exit_codes() {
    assert_eq!(damqsim(&["run", "--scheme=BOGUS"]).status.code(), Some(2));
    assert_eq!(damqsim(&["run"]).status.code(), Some(2));
    assert_eq!(damqsim(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(damqsim(&["run", "--config=/nonexistent/x.cfg"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "scheme=SAMQ\ncolour=red\n").unwrap();
    let out = damqsim(&["run", &format!("--config={}", bad.display())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    // A trace file that does not exist is a run failure, not a usage one.
    let out = damqsim(&with_short(&["run", "--scheme=SAMQ", "--traffic=trace:/nonexistent.noctrace"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_appends_and_config_file_is_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    std::fs::write(&cfg, "# base\nscheme=SAMQ\ninjection_rate=0.05\n").unwrap();
    let csv = dir.path().join("out.csv");
    let c = format!("--config={}", cfg.display());
    let o = format!("--out={}", csv.display());
    for extra in ["--seed=1", "--scheme=DAMQA"] {
        let out = damqsim(&with_short(&["run", &c, &o, extra]));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    let recs = load_records(&csv).unwrap();
    assert_eq!(recs[0].scheme, "SAMQ");
    assert_eq!(recs[1].scheme, "DAMQA");
    assert_eq!(recs[0].injection_rate, 0.05);
}

fn sweep(out: &Path, jobs: &str) -> Output {
    damqsim(&with_short(&[
        "sweep",
        "--scheme=SAMQ,DAMQS",
        "--injection_rate=0.05,0.2",
        "--seed=1,2",
        "--fault_rate=0.05",
        &format!("--jobs={jobs}"),
        &format!("--out={}", out.display()),
    ]))
}

#[test]
fn sweep_is_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for (i, jobs) in ["1", "3", "0", "1"].iter().enumerate() {
        let p = dir.path().join(format!("s{i}.csv"));
        let out = sweep(&p, jobs);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push(std::fs::read(&p).unwrap());
    }
    assert!(texts.windows(2).all(|w| w[0] == w[1]));
    let recs = load_records(&dir.path().join("s0.csv")).unwrap();
    assert_eq!(recs.len(), 8);
    // Last key varies fastest.
    assert_eq!((recs[0].seed, recs[1].seed), (1, 2));
    assert_eq!(recs[0].scheme, "SAMQ");
    assert_eq!(recs[7].scheme, "DAMQS");
}

#[test]
fn compare_reports_groups_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    assert!(sweep(&p, "0").status.success());
    let out = damqsim(&["compare", p.to_str().unwrap(), "--metric=throughput"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("SAMQ"));
    assert!(text.contains("DAMQS/SAMQ"));
    assert!(text.contains("# series DAMQS"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "scheme,width\nSAMQ,8\n").unwrap();
    let out = damqsim(&["compare", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert_eq!(damqsim(&["compare", p.to_str().unwrap(), "--metric=colour"]).status.code(), Some(2));
}
