use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ragcheck(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ragcheck"));
    for (key, _) in std::env::vars() {
        if key.starts_with("PROVENANCE_") {
            cmd.env_remove(key);
        }
    }
    cmd.env("RUST_LOG", "warn")
        .args(args)
        .envs(env.iter().copied());
    cmd.output().unwrap()
}

fn stub_args() -> Vec<String> {
    let f = fixtures();
    vec![
        "--relevance".into(),
        format!("table:{}", f.join("relevance.json").display()),
        "--nli".into(),
        format!("table:{}", f.join("nli.json").display()),
    ]
}

fn check_args(extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "check",
        "--query",
        "Who wrote Hamlet?",
        "--answer",
        "William Shakespeare",
        "--sources",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.push(fixtures().join("ctx.json").display().to_string());
    args.extend(stub_args());
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn run_json(args: &[String], env: &[(&str, &str)]) -> Value {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ragcheck(&refs, env);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn check_prints_a_report_without_verdict() {
    let report = run_json(&check_args(&["--strategy", "topp", "--top-p", "0.9"]), &[]);
    assert!(report.get("verdict").is_none());
    assert_eq!(report["aggregate"], 0.96);
    assert_eq!(report["strategy"], "topp");
    assert_eq!(report["per_source"].as_array().unwrap().len(), 1);
}

#[test]
fn threshold_adds_a_verdict() {
    let report = run_json(&check_args(&["--threshold", "0.5"]), &[]);
    assert_eq!(report["verdict"], true);
    assert_eq!(report["threshold"], 0.5);
}

#[test]
fn usage_errors_exit_2() {
    let out = ragcheck(&["check", "--answer", "a", "--sources", "x.json"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--query"));

    let args = check_args(&["--top-p", "1.5"]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(ragcheck(&refs, &[]).status.code(), Some(2));

    let out = ragcheck(
        &[
            "check",
            "--query",
            "q",
            "--answer",
            "a",
            "--sources",
            "x",
            "--nli",
            "gpu:0",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_1() {
    let out = ragcheck(
        &[
            "check",
            "--query",
            "q",
            "--answer",
            "a",
            "--sources",
            "/no/such/file.json",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));

    // The lookup table has no entry for an unknown source.
    let dir = tempfile::tempdir().unwrap();
    let ctx = dir.path().join("ctx.json");
    std::fs::write(&ctx, r#"["An unknown passage."]"#).unwrap();
    let mut args = vec![
        "check",
        "--query",
        "q",
        "--answer",
        "a",
        "--sources",
        ctx.to_str().unwrap(),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(stub_args());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ragcheck(&refs, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("relevance"));
}

#[test]
fn precedence_is_flags_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ragcheck.toml");
    std::fs::write(
        &config,
        "[pipeline]\nselection_strategy = \"topk\"\ntop_k = 3\n",
    )
    .unwrap();
    let config = config.display().to_string();

    let from_file = run_json(&check_args(&["--config", &config]), &[]);
    assert_eq!(from_file["parameter"]["top_k"], 3);

    let from_env = run_json(
        &check_args(&["--config", &config]),
        &[("PROVENANCE_TOP_K", "2")],
    );
    assert_eq!(from_env["parameter"]["top_k"], 2);

    let from_flag = run_json(
        &check_args(&["--config", &config, "--top-k", "1"]),
        &[("PROVENANCE_TOP_K", "2")],
    );
    assert_eq!(from_flag["parameter"]["top_k"], 1);

    let config_via_env = run_json(&check_args(&[]), &[("PROVENANCE_CONFIG", &config)]);
    assert_eq!(config_via_env["strategy"], "topk");
}

#[test]
fn eval_prints_auc_and_writes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let roc = dir.path().join("roc.csv");
    let dataset = fixtures().join("tiny.jsonl").display().to_string();
    let mut args = vec![
        "eval".to_string(),
        "--dataset".into(),
        dataset,
        "--aggregation".into(),
        "max".into(),
        "--top-k".into(),
        "5".into(),
        "--runs-dir".into(),
        runs.display().to_string(),
        "--roc-out".into(),
        roc.display().to_string(),
    ];
    args.extend(stub_args());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ragcheck(&refs, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.starts_with("AUC 0.944444444 (12 records, 0 excluded)"),
        "{stdout}"
    );

    let csv = std::fs::read_to_string(&roc).unwrap();
    assert!(csv.starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    assert!(csv.trim_end().ends_with("1,1,0.06"));

    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    for file in ["report.json", "config.json", "roc.csv"] {
        assert!(run_dir.join(file).exists(), "{file}");
    }
    assert_eq!(
        std::fs::read_to_string(run_dir.join("roc.csv")).unwrap(),
        csv
    );

    // `roc` regenerates the same table from the stored report.
    let report = run_dir.join("report.json").display().to_string();
    let out = ragcheck(&["roc", "--report", &report], &[]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
}

#[test]
fn eval_on_a_missing_dataset_exits_1() {
    let out = ragcheck(&["eval", "--dataset", "/no/such/data.jsonl"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_reports_parse_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    std::fs::write(
        &data,
        "{\"id\":\"a\",\"query\":\"q\",\"answer\":\"a\",\"sources\":[\"s\"],\"label\":1}\n{not json}\n",
    )
    .unwrap();
    let out = ragcheck(&["eval", "--dataset", data.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn convert_writes_dataset_lines() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("halueval.jsonl");
    std::fs::write(
        &input,
        r#"{"knowledge":"Paris is the capital of France.","question":"Capital of France?","right_answer":"Paris","hallucinated_answer":"Lyon"}"#,
    )
    .unwrap();
    let output = dir.path().join("out.jsonl");
    let out = ragcheck(
        &[
            "convert",
            "--format",
            "halueval-qa",
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = ragcheck_core::load_dataset(&output, false).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1].answer, "Lyon");
    assert_eq!(records[1].label, 0);

    let out = ragcheck(&["convert", "--format", "hotpot", "--input", "x"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[cfg(unix)]
#[test]
fn serve_answers_and_stops_on_sigterm() {
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::time::{Duration, Instant};

    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let config = fixtures().join("ragcheck.toml");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ragcheck"))
        .env("RUST_LOG", "warn")
        .args([
            "serve",
            "--config",
            config.to_str().unwrap(),
            "--listen",
            &format!("127.0.0.1:{port}"),
        ])
        .spawn()
        .unwrap();

    let get = |path: &str| -> Option<String> {
        let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
        write!(
            stream,
            "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n"
        )
        .ok()?;
        let mut body = String::new();
        stream.read_to_string(&mut body).ok()?;
        Some(body)
    };
    let deadline = Instant::now() + Duration::from_secs(20);
    let health = loop {
        if let Some(body) = get("/healthz") {
            break body;
        }
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(health.starts_with("HTTP/1.1 200"));
    assert!(health.ends_with(r#"{"status":"ok"}"#));
    assert!(get("/v1/config")
        .unwrap()
        .contains(r#""selection_strategy":"topp""#));

    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let exit = child.wait().unwrap();
    assert!(exit.success(), "{exit:?}");
}
