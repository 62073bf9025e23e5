use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noteflow"));
    c.env_remove("NOTEFLOW_BACKEND_TOKEN").env_remove("NOTEFLOW_BACKEND_URL").env("RUST_LOG", "warn");
    c
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/session.jsonl")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stage_commands_match_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    let out = run(&["run", "--input", s(&fixture()), "--out", s(&full)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    assert!(run(&["normalize", "--input", s(&fixture()), "--out", s(&staged)]).status.success());
    let log = staged.join("log.jsonl");
    assert!(run(&["snapshots", "--log", s(&log), "--out", s(&staged)]).status.success());
    assert!(run(&["transitions", "--log", s(&log), "--out", s(&staged)]).status.success());
    assert!(run(&["annotate", "--transitions", s(&staged.join("transitions.jsonl")), "--out", s(&staged)]).status.success());
    let out = run(&["report", "--annotations", s(&staged.join("annotations.jsonl")), "--log", s(&log), "--out", s(&staged)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for name in ["log.jsonl", "snapshots.jsonl", "transitions.jsonl", "annotations.jsonl", "self_matrix.csv", "time_stats.csv"] {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(staged.join(name)).unwrap(), "{name}");
    }
    // the hash names the configuration, which differs between the two invocations
    let report = |dir: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config_hash");
        v
    };
    assert_eq!(report(&full), report(&staged));
}

#[test]
fn config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("out");
    fs::write(
        &cfg,
        serde_json::json!({ "input": fixture(), "output": out_dir, "export_ipynb": true, "audit_sample": 2, "seed": 3 }).to_string(),
    )
    .unwrap();
    let out = run(&["run", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest.json").is_file());
    assert_eq!(fs::read_to_string(out_dir.join("audit_sample.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--input", s(&dir.path().join("missing.jsonl")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["run", "--input", s(&fixture()), "--out", s(&dir.path().join("o")), "--backend"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NOTEFLOW_BACKEND_TOKEN"));

    let log = dir.path().join("log.jsonl");
    fs::write(
        &log,
        r#"{"kind":"execute_cell","session_id":"s","kernel_id":"k","notebook_name":"n","timestamp":1,"seq":1,"user_id":"u","cell_id":"x","cell_ordinal":0,"source":"1","seq_no":0,"repaired":[]}"#.to_string() + "\n",
    )
    .unwrap();
    let out = run(&["snapshots", "--log", s(&log), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn replay_steps_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["normalize", "--input", s(&fixture()), "--out", s(dir.path())]).status.success());
    let nb = dir.path().join("at3.ipynb");
    let mut child = bin()
        .args(["replay", "--log", s(&dir.path().join("log.jsonl")), "--user", "u1", "--notebook", "analysis.ipynb"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    write!(child.stdin.take().unwrap(), "p\nn\nn\ng 3\nbogus\ng 9999\ne {}\nq\n", nb.display()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("(at start)"));
    assert!(text.contains("[3/"));
    assert!(text.contains("? unknown command `bogus`"));
    assert!(text.contains("out of range"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&nb).unwrap()).unwrap();
    assert_eq!(doc["nbformat"], 4);

    let out = run(&["replay", "--log", s(&dir.path().join("log.jsonl")), "--user", "nobody", "--notebook", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

fn request(port: u16, raw: &str) -> String {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).unwrap();
    stream.write_all(raw.as_bytes()).unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    resp
}

#[test]
fn serve_accepts_then_export_reads_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("events.jsonl");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .args(["serve", "--addr", &format!("127.0.0.1:{port}"), "--store", s(&store)])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    let body = fs::read_to_string(fixture()).unwrap();
    let resp = request(
        port,
        &format!("POST /events HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Length: {}\r\n\r\n{body}", body.len()),
    );
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"duplicates\":1"), "{resp}");
    child.kill().unwrap();
    child.wait().unwrap();

    let out = run(&["export", "--store", s(&store), "--session", "s-da-1"]);
    assert!(out.status.success());
    let seqs: Vec<u64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seq"].as_u64().unwrap())
        .collect();
    assert!(!seqs.is_empty());
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}
