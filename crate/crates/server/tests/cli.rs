use std::path::Path;
use std::process::{Command, Output};

fn complyctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_complyctl")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let help = complyctl(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for verb in ["train-svm", "train-seq", "train-doc", "train-dqn", "simulate", "serve", "bench", "report", "rules"] {
        assert!(text.contains(verb), "help lists {verb}");
    }
    assert_eq!(code(&complyctl(&["--version"])), 0);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    assert_eq!(code(&complyctl(&[])), 1);
    assert_eq!(code(&complyctl(&["frobnicate"])), 1);
    assert_eq!(code(&complyctl(&["generate", "--preset", "no-such-preset", "--out", "x"])), 1);
    assert_eq!(code(&complyctl(&["bench", "--levels", "1", "--duration-secs", "0"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.rules");
    std::fs::write(&bad, "R1 1 amount >> 5 -> approve\n").unwrap();
    let out = complyctl(&["rules", "check", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let cfg = dir.path().join("server.toml");
    std::fs::write(&cfg, "port = 1\nnot_a_key = true\n").unwrap();
    assert_eq!(code(&complyctl(&["serve", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let target = format!("http://127.0.0.1:{port}");
    let out = complyctl(&["bench", "--target", &target, "--levels", "1", "--duration-secs", "0.2", "--count", "50"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
    assert_eq!(code(&complyctl(&["rules", "check", "/no/such/file.rules"])), 2);
}

#[test]
fn rules_check_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.rules");
    std::fs::write(&path, "B 2 amount > 5 -> reject\nA 1 region = \"eu\" -> approve\n").unwrap();
    let out = complyctl(&["rules", "check", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let a = text.find("A 1").unwrap();
    let b = text.find("B 2").unwrap();
    assert!(a < b);
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn generate_simulate_and_report_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = d.join("gen");
    let out = complyctl(&["generate", "--count", "300", "--out", gen.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&gen.join("events.jsonl")), 300);
    assert_eq!(lines(&gen.join("labels.jsonl")), 300);

    let report = d.join("report");
    let models = d.join("models");
    let out = complyctl(&[
        "simulate",
        "--count",
        "300",
        "--quick",
        "--save-models",
        models.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "tables.csv", "run-manifest.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
    for f in ["features.json", "svm.json", "policy.json"] {
        assert!(models.join(f).exists(), "{f}");
    }

    // Rerun from the saved bundle; the report is the same bytes.
    let again = d.join("again");
    let out = complyctl(&["simulate", "--count", "300", "--models", models.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m1 = std::fs::read(report.join("metrics.csv")).unwrap();
    let m2 = std::fs::read(again.join("metrics.csv")).unwrap();
    assert_eq!(m1, m2);

    let out = complyctl(&["report", "--wal-dir", d.join("missing").to_str().unwrap(), "--out", d.join("r2").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_dqn_writes_a_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let out = complyctl(&["train-dqn", "--episodes", "300", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v.as_object().unwrap().len(), 12);
}

#[test]
fn serve_answers_health_until_killed() {
    use std::io::{BufRead, BufReader, Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("server.toml");
    std::fs::write(&cfg, format!("port = 0\nwal_dir = {:?}\n", dir.path().join("wal").to_str().unwrap())).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_complyctl"))
        .args(["serve", "--config", cfg.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("listening line").to_owned();
    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /v1/health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""));
}
