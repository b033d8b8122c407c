use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use interfaze_cli::{router, COMPLETIONS_PATH};
use interfaze_core::gateway::{CompletionRequest, Gateway};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn e2e_config() -> PathBuf {
    fixtures().join("e2e/gateway.json")
}

fn interfaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interfaze"))
        .args(args)
        .env_remove("INTERFAZE_CONFIG")
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

async fn post(gateway: &Gateway, body: Vec<u8>) -> (StatusCode, String, Value) {
    let req = Request::post(COMPLETIONS_PATH)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = router(gateway.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers()["content-type"].to_str().unwrap().to_string();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, ctype, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn http_endpoint_matches_gateway() {
    let gateway = Gateway::from_path(&e2e_config()).unwrap();
    let body = serde_json::to_vec(&CompletionRequest::user("What is 2+2?", vec![], vec![])).unwrap();
    let direct: Value = serde_json::from_slice(&gateway.handle_completion(&body).body).unwrap();
    let (status, ctype, v) = post(&gateway, body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "application/json");
    assert_eq!(v, direct);
    assert_eq!(v["object"], "chat.completion");
    assert!(v["interfaze"]["context_digest"].is_string());
}

#[tokio::test(flavor = "multi_thread")]
async fn http_errors_carry_status_and_code() {
    let gateway = Gateway::from_path(&e2e_config()).unwrap();
    let (status, _, v) = post(&gateway, b"{".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "PROTOCOL");

    let req = Request::get(COMPLETIONS_PATH).body(Body::empty()).unwrap();
    let resp = router(gateway).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_requests_are_independent() {
    let gateway = Gateway::from_path(&e2e_config()).unwrap();
    let queries: Vec<String> = (0..8).map(|i| format!("question number {i}")).collect();
    let mut handles = Vec::new();
    for q in &queries {
        let g = gateway.clone();
        let body = serde_json::to_vec(&CompletionRequest::user(q, vec![], vec![])).unwrap();
        handles.push(tokio::spawn(async move { post(&g, body).await.2 }));
    }
    for (q, h) in queries.iter().zip(handles) {
        let concurrent = h.await.unwrap();
        let body = serde_json::to_vec(&CompletionRequest::user(q, vec![], vec![])).unwrap();
        let alone: Value = serde_json::from_slice(&gateway.handle_completion(&body).body).unwrap();
        assert_eq!(concurrent, alone, "{q}");
    }
}

#[test]
fn run_prints_response_and_trace() {
    let config = e2e_config();
    let pdf = fixtures().join("e2e/assets/report.pdf");
    let o = interfaze(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--query",
        "Summarize the report",
        "--file",
        pdf.to_str().unwrap(),
        "--emit-trace",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["interfaze"]["chain_id"], "document");
    let steps: Vec<Value> = String::from_utf8_lossy(&o.stderr)
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter(|v| v.get("step_index").is_some())
        .collect();
    assert_eq!(steps.len(), v["interfaze"]["trace"].as_array().unwrap().len());
}

#[test]
fn config_path_falls_back_to_env() {
    let o = Command::new(env!("CARGO_BIN_EXE_interfaze"))
        .args(["run", "--query", "2+2?"])
        .env("INTERFAZE_CONFIG", e2e_config())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["choices"][0]["message"]["content"].as_str().unwrap().starts_with("ANSWER("));
}

#[test]
fn exit_codes_separate_config_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    assert_eq!(interfaze(&["run", "--config", missing.to_str().unwrap(), "--query", "x"]).status.code(), Some(2));

    let mut bad: Value = serde_json::from_slice(&std::fs::read(e2e_config()).unwrap()).unwrap();
    bad["q_min"] = json!(3.0);
    let bad_path = dir.path().join("bad.json");
    std::fs::write(&bad_path, bad.to_string()).unwrap();
    let o = interfaze(&["run", "--config", bad_path.to_str().unwrap(), "--query", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q_min"));

    let mut failing: Value = serde_json::from_slice(&std::fs::read(e2e_config()).unwrap()).unwrap();
    failing["mocks"]["llm"]["fail_ops"] = json!(["complete"]);
    failing["indexes"] = json!({});
    let failing_path = dir.path().join("failing.json");
    std::fs::write(&failing_path, failing.to_string()).unwrap();
    let o = interfaze(&["run", "--config", failing_path.to_str().unwrap(), "--query", "x"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stdout_json(&o)["error"]["code"], "CHAINS_EXHAUSTED");

    let config = e2e_config();
    let o = interfaze(&["run", "--config", config.to_str().unwrap(), "--query", "x", "--file", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn index_build_matches_committed_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("code.json");
    let input = fixtures().join("corpus/code");
    let o = interfaze(&[
        "index",
        "build",
        "--kind",
        "code",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--timestamp",
        "2026-01-01T00:00:00Z",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixtures().join("e2e/indexes/code.json")).unwrap());

    let o = interfaze(&["index", "build", "--kind", "images", "--input", ".", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compile_emits_canonical_state_and_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let frag = |id: &str, text: &str| {
        json!({
            "observations": [{"id": id, "text": text, "score": 0.5, "provenance": [{
                "source_id": "notes.txt", "content_hash": "00", "timestamp": "2026-01-01T00:00:00Z"}]}],
            "entities": [], "relations": [], "provenance_index": {}
        })
    };
    std::fs::write(dir.path().join("a.json"), frag("o1", "the launch is on friday").to_string()).unwrap();
    std::fs::write(dir.path().join("b.json"), frag("o2", "lunch menu").to_string()).unwrap();
    // the same fragment twice compiles to the same state
    std::fs::write(dir.path().join("c.json"), frag("o1", "the launch is on friday").to_string()).unwrap();
    let other = tempfile::tempdir().unwrap();
    let budgets = other.path().join("budgets.json");
    std::fs::write(&budgets, r#"{"observations_max": 6, "entities_max": 4, "relations_max": 4, "provenance_max": 40}"#).unwrap();
    let d = dir.path().to_str().unwrap();
    let b = budgets.to_str().unwrap();

    let o = interfaze(&["compile", "--fragments", d, "--query", "when is the launch", "--budgets", b, "--emit-json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let state = stdout_json(&o);
    let texts: Vec<&str> = state["observations"].as_array().unwrap().iter().map(|o| o["text"].as_str().unwrap()).collect();
    assert_eq!(texts, ["the launch is on friday"]);

    let o = interfaze(&["compile", "--fragments", d, "--query", "when is the launch", "--budgets", b]);
    let prompt = String::from_utf8(o.stdout).unwrap();
    assert!(prompt.contains("the launch is on friday") && !prompt.contains("lunch menu"), "{prompt}");
}

#[test]
fn stdio_adapter_answers_like_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("llm.json");
    std::fs::write(&spec, r#"{"behavior": "llm"}"#).unwrap();
    let config = |transport: Value| {
        let mut llm = json!({"adapter_id": "llm", "tool": "llm", "timeout_ms": 5000, "batch_max": 1, "cacheable": false});
        llm.as_object_mut().unwrap().extend(transport.as_object().unwrap().clone());
        json!({
            "adapters": [llm],
            "chains": [{"chain_id": "direct", "steps": [{"kind": "call_llm"}], "tags": ["*"]}],
            "estimates": [{"chain_id": "direct", "predicted_quality": 0.8, "cost_proxy": 1.0, "latency_proxy_ms": 1.0}],
            "llm_adapter": "llm",
            "fixed_time": "2026-01-01T00:00:00Z"
        })
    };
    let bin = env!("CARGO_BIN_EXE_interfaze");
    let mut stdio = config(json!({"transport": "stdio", "command": [bin, "adapter-mock", "--spec", spec.to_str().unwrap()]}));
    let mut mock = config(json!({"transport": "in_process_mock"}));
    mock["mocks"] = json!({"llm": {"behavior": "llm"}});
    stdio["model"] = json!("m");
    mock["model"] = json!("m");
    let mut answers = Vec::new();
    for (name, cfg) in [("stdio.json", stdio), ("mock.json", mock)] {
        let path = dir.path().join(name);
        std::fs::write(&path, cfg.to_string()).unwrap();
        let o = interfaze(&["run", "--config", path.to_str().unwrap(), "--query", "hello adapters"]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        answers.push(stdout_json(&o));
    }
    assert_eq!(answers[0], answers[1]);
}

#[test]
fn adapter_mock_replays_the_conformance_transcript() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = fixtures().join("conformance");
    let spec = tempfile::tempdir().unwrap();
    let spec_path = spec.path().join("reference.json");
    std::fs::write(&spec_path, r#"{"behavior":"reference"}"#).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_interfaze"))
        .args(["adapter-mock", "--spec", spec_path.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&std::fs::read(dir.join("requests.jsonl")).unwrap()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(dir.join("responses.jsonl")).unwrap());
}
