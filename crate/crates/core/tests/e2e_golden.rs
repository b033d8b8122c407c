mod common;

use interfaze_core::canonical::value_to_canonical;
use serde_json::Value;

#[test]
fn scripted_requests_match_golden_responses() {
    let gateway = common::e2e_gateway();
    let mut mismatched = Vec::new();
    for (name, body) in common::e2e_script() {
        let reply = gateway.handle_completion(&body);
        assert_eq!(reply.status, 200, "{name}: {}", String::from_utf8_lossy(&reply.body));
        if !common::check_golden(&format!("e2e/{name}.json"), &reply.body) {
            mismatched.push(name);
        }
    }
    assert!(mismatched.is_empty(), "golden mismatch: {mismatched:?}");
}

#[test]
fn responses_are_repeatable() {
    let gateway = common::e2e_gateway();
    for (name, body) in common::e2e_script() {
        let a = gateway.handle_completion(&body);
        let b = gateway.handle_completion(&body);
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn each_request_takes_the_expected_chain() {
    let gateway = common::e2e_gateway();
    let expected = [
        ("01_text", "lookup", "general"),
        ("02_pdf", "document", "document"),
        ("03_audio", "transcribe", "transcribe"),
        ("04_html", "document", "document"),
        ("05_code", "code-sandbox", "code"),
    ];
    let script = common::e2e_script();
    for ((name, body), (want_name, chain, task)) in script.iter().zip(expected) {
        assert_eq!(name, want_name);
        let v: Value = serde_json::from_slice(&gateway.handle_completion(body).body).unwrap();
        assert_eq!(v["interfaze"]["chain_id"], chain, "{name}: {}", value_to_canonical(&v));
        assert_eq!(v["interfaze"]["task_type"], task, "{name}");
    }
}
