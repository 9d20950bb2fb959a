use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};

use onesided_oram::audit::AuditReport;
use onesided_oram::bench::CSV_COLUMNS;
use onesided_oram::config::Config;
use onesided_oram::transport::wire::{read_response, Opcode, RequestHeader, Status};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_onesided-oram"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut c = Config::default();
    c.workload.record_count = 256;
    c.workload.op_count = 1_000;
    c.workload.read_fraction = 0.5;
    c.client.block_count = 256;
    c.audit.labeled_reads = 500;
    c.audit.labeled_writes = 500;
    c.audit.invisibility_ops = 200;
    c.audit.invisibility_reads = 300;
    c.audit.detector_trials = 3;
    c.audit.detector_block_count = 64;
    c.audit.detector_accesses = 20;
    c.audit.detector_max_reads = 100;
    let path = dir.join("config.json");
    std::fs::write(&path, c.to_json()).unwrap();
    path
}

#[test]
fn init_prints_the_default_config() {
    let out = bin().arg("init").output().unwrap();
    assert!(out.status.success());
    let c = Config::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(c, Config::default());
}

#[test]
fn verify_passes_on_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("verify").arg("--config").arg(small_config(dir.path())).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"workload": {"read_fraction": 3}}"#).unwrap();
    for args in [vec!["verify", "--config"], vec!["bench", "--config"]] {
        let out = bin().args(&args).arg(&bad).output().unwrap();
        assert_eq!(out.status.code(), Some(2));
    }
    let missing = bin().args(["verify", "--config"]).arg(dir.path().join("none.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let bad_x = bin().args(["bench", "--x", "150", "--config"]).arg(small_config(dir.path())).output().unwrap();
    assert_eq!(bad_x.status.code(), Some(2));
    let bad_profile = bin().args(["bench", "--profile", "ib9", "--config"]).arg(small_config(dir.path())).output().unwrap();
    assert_eq!(bad_profile.status.code(), Some(2));
}

#[test]
fn bench_writes_a_stable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let csv = dir.path().join("out.csv");
    let run = |path: &Path| {
        let st = bin().args(["bench", "--x", "20,60", "--profile", "ib100", "--config"]).arg(&config).arg("--csv").arg(path).status().unwrap();
        assert!(st.success());
        std::fs::read_to_string(path).unwrap()
    };
    let text = run(&csv);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("20.0,ib100,1000,"));
    assert_eq!(text, run(&dir.path().join("again.csv")));
}

#[test]
fn audit_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("audit.json");
    let out = bin().args(["audit", "--snap-freq", "2", "--config"]).arg(small_config(dir.path())).arg("--json").arg(&json).output().unwrap();
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let report: AuditReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report.snap_every, 2);
    assert!(report.invisible);
    assert_eq!(out.status.code() == Some(0), report.pass);
}

#[test]
fn serve_answers_wire_requests() {
    let mut child = bin()
        .args(["serve", "--region-bytes", "5640", "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(&RequestHeader { opcode: Opcode::Read, offset: 5636, length: 4 }.encode()).unwrap();
    assert_eq!(read_response(&mut s).unwrap(), (Status::Ok as u8, vec![0; 4]));
    s.write_all(&RequestHeader { opcode: Opcode::Read, offset: 5638, length: 4 }.encode()).unwrap();
    assert_eq!(read_response(&mut s).unwrap().0, Status::Range as u8);
    child.kill().unwrap();
    child.wait().unwrap();
}
