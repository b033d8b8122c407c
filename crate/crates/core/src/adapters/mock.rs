//! Deterministic in-process adapters.
//!
//! Mocks are table driven: a fixture maps requests (by cache key, or by op
//! plus the `sha256` field of the payload) to canned results. A few built-in
//! behaviors cover the LLM, the sandbox and the reference protocol peer.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{cache_key, decode_binary, AdapterRequest, AdapterResponse, ErrorBody, Transport, TransportEvent, PROTOCOL, UNSUPPORTED};

/// What a mock does with one request.
#[derive(Debug, Clone)]
pub enum MockReply {
    Ok(Value),
    Err(ErrorBody),
    Delay(Duration, Box<MockReply>),
    /// Answers with a different id.
    WrongId(Value),
    /// Emits a line that does not parse.
    Malformed,
    /// Behaves as if the process died.
    Exit,
}

impl MockReply {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        MockReply::Err(ErrorBody {
            code: code.into(),
            message: message.into(),
        })
    }
}

pub type MockHandler = Arc<dyn Fn(&AdapterRequest) -> MockReply + Send + Sync>;

/// Runs a handler per item on its own thread, so one slow item never delays
/// its batch siblings.
pub struct MockTransport {
    handler: MockHandler,
    dispatches: AtomicU64,
}

impl MockTransport {
    pub fn from_fn(f: impl Fn(&AdapterRequest) -> MockReply + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            handler: Arc::new(f),
            dispatches: AtomicU64::new(0),
        })
    }

    pub fn echo() -> Arc<Self> {
        Self::from_fn(|r| MockReply::Ok(r.payload.clone()))
    }

    pub fn from_spec(spec: MockSpec) -> Arc<Self> {
        Self::from_fn(move |r| spec.reply(r))
    }

    pub fn dispatches(&self) -> u64 {
        self.dispatches.load(Ordering::Relaxed)
    }
}

impl Transport for MockTransport {
    fn dispatch(&self, batch: Vec<AdapterRequest>, events: Sender<TransportEvent>) {
        self.dispatches.fetch_add(1, Ordering::Relaxed);
        for request in batch {
            let handler = Arc::clone(&self.handler);
            let events = events.clone();
            std::thread::spawn(move || {
                let reply = handler(&request);
                deliver(&request, reply, &events);
            });
        }
    }
}

fn deliver(request: &AdapterRequest, reply: MockReply, events: &Sender<TransportEvent>) {
    let event = match reply {
        MockReply::Ok(v) => TransportEvent::Reply(AdapterResponse::ok(request.id.clone(), v)),
        MockReply::Err(e) => TransportEvent::Reply(AdapterResponse {
            id: request.id.clone(),
            outcome: Err(e),
        }),
        MockReply::Delay(d, inner) => {
            std::thread::sleep(d);
            return deliver(request, *inner, events);
        }
        MockReply::WrongId(v) => TransportEvent::Reply(AdapterResponse::ok(format!("{}#wrong", request.id), v)),
        MockReply::Malformed => TransportEvent::Malformed("mock emitted a malformed line".into()),
        MockReply::Exit => TransportEvent::Closed("mock adapter exited".into()),
    };
    let _ = events.send(event);
}

/// One fixture row. `key` matches a full cache key; otherwise `op`,
/// `sha256` (compared with `payload.sha256`) and every entry of `fields`
/// (compared with the payload member of that name) must match when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub fields: serde_json::Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl MockEntry {
    fn matches(&self, request: &AdapterRequest, key: &str) -> bool {
        if let Some(k) = &self.key {
            return k == key;
        }
        if self.op.as_ref().is_some_and(|op| op != &request.op) {
            return false;
        }
        if let Some(h) = &self.sha256 {
            if request.payload.get("sha256").and_then(Value::as_str) != Some(h.as_str()) {
                return false;
            }
        }
        self.fields.iter().all(|(k, v)| request.payload.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

impl MockTable {
    pub fn lookup(&self, request: &AdapterRequest) -> MockReply {
        let key = cache_key(request);
        if let Some(entry) = self.entries.iter().find(|e| e.matches(request, &key)) {
            return match (&entry.result, &entry.error) {
                (_, Some(err)) => MockReply::Err(err.clone()),
                (Some(v), None) => MockReply::Ok(v.clone()),
                (None, None) => MockReply::Ok(Value::Null),
            };
        }
        match &self.default {
            Some(v) => MockReply::Ok(v.clone()),
            None => MockReply::error("NO_FIXTURE", format!("no fixture for op {} key {key}", request.op)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Result is the payload.
    Echo,
    Table(MockTable),
    /// `{"prompt": p}` → `{"text": mock_llm_answer(p)}`.
    Llm,
    /// `{"code": c}` → `{"stdout": c, "exit_status": 0}`.
    SandboxEcho,
    /// The ops of the out-of-process reference adapter: `vad`, `classify`
    /// and `complete`.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(flatten)]
    pub behavior: MockBehavior,
    /// Added before every reply.
    #[serde(default)]
    pub delay_ms: u64,
    /// Ops that fail with code `FAILED`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fail_ops: Vec<String>,
}

impl MockSpec {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            delay_ms: 0,
            fail_ops: Vec::new(),
        }
    }

    pub fn reply(&self, request: &AdapterRequest) -> MockReply {
        let reply = if self.fail_ops.iter().any(|op| op == &request.op || op == "*") {
            MockReply::error("FAILED", format!("injected failure for op {}", request.op))
        } else {
            self.behavior.reply(request)
        };
        if self.delay_ms > 0 {
            MockReply::Delay(Duration::from_millis(self.delay_ms), Box::new(reply))
        } else {
            reply
        }
    }
}

impl MockBehavior {
    pub fn reply(&self, request: &AdapterRequest) -> MockReply {
        match self {
            MockBehavior::Echo => MockReply::Ok(request.payload.clone()),
            MockBehavior::Table(t) => t.lookup(request),
            MockBehavior::Llm => match request.payload.get("prompt").and_then(Value::as_str) {
                Some(p) => MockReply::Ok(json!({"text": crate::gateway::mock_llm_answer(p)})),
                None => MockReply::error("BAD_REQUEST", "payload.prompt missing"),
            },
            MockBehavior::SandboxEcho => match request.payload.get("code").and_then(Value::as_str) {
                Some(code) => MockReply::Ok(json!({"stdout": code, "exit_status": 0})),
                None => MockReply::error("BAD_REQUEST", "payload.code missing"),
            },
            MockBehavior::Reference => reference_reply(request),
        }
    }
}

/// Framewise speech probability from energy:
/// `min(1, rms / (threshold * peak_rms))`, zero everywhere for silence.
pub fn energy_vad(samples: &[f64], sample_rate: u32, frame_ms: f64, energy_threshold: f64) -> Vec<f64> {
    let frame = ((sample_rate as f64) * frame_ms / 1000.0).round().max(1.0) as usize;
    let rms: Vec<f64> = samples
        .chunks(frame)
        .map(|c| (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    let scale = energy_threshold * peak;
    rms.into_iter()
        .map(|r| {
            if peak == 0.0 {
                0.0
            } else if scale == 0.0 {
                if r > 0.0 { 1.0 } else { 0.0 }
            } else {
                (r / scale).min(1.0)
            }
        })
        .collect()
}

fn reference_reply(request: &AdapterRequest) -> MockReply {
    let p = &request.payload;
    match request.op.as_str() {
        "vad" => {
            let mut rate = p.get("sample_rate").and_then(Value::as_u64).unwrap_or(16_000) as u32;
            let samples: Option<Vec<f64>> = match p.get("audio") {
                Some(audio) => match decode_binary(audio).map_err(|e| e.to_string()).and_then(|b| {
                    crate::audio::Waveform::from_wav_bytes(&b).map_err(|e| e.to_string())
                }) {
                    Ok(w) => {
                        rate = w.sample_rate;
                        Some(w.samples)
                    }
                    Err(e) => return MockReply::error("BAD_REQUEST", format!("payload.audio: {e}")),
                },
                None => p
                    .get("samples")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_f64).collect()),
            };
            let Some(samples) = samples.filter(|s| !s.is_empty()) else {
                return MockReply::error("BAD_REQUEST", "payload.samples must be a non-empty array");
            };
            let frame_ms = p.get("frame_ms").and_then(Value::as_f64).unwrap_or(10.0);
            let threshold = p.get("energy_threshold").and_then(Value::as_f64).unwrap_or(0.5);
            MockReply::Ok(json!({"probs": energy_vad(&samples, rate, frame_ms, threshold)}))
        }
        "classify" => {
            let text = p.get("text").and_then(Value::as_str).unwrap_or("").to_lowercase();
            let label = if text.contains("```") {
                "code"
            } else if text.contains("how do i") || text.contains("how to") {
                "tool_usage"
            } else {
                "general"
            };
            MockReply::Ok(json!({"label": label}))
        }
        "complete" => {
            let prompt = p.get("prompt").and_then(Value::as_str).unwrap_or("");
            MockReply::Ok(json!({"text": prompt}))
        }
        other => MockReply::error(UNSUPPORTED, format!("unsupported op {other:?}")),
    }
}

/// Serves the line protocol synchronously: one response line per request
/// line, in order. Unparseable lines get a `PROTOCOL` error naming the
/// 1-based line number and an empty id.
pub fn serve_lines(
    spec: &MockSpec,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<usize> {
    let mut served = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<AdapterRequest>(&line) {
            Ok(request) => resolve(&request, spec.reply(&request)),
            Err(e) => AdapterResponse::error("", PROTOCOL, format!("line {}: {e}", i + 1)),
        };
        writeln!(output, "{}", response.to_line())?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

fn resolve(request: &AdapterRequest, reply: MockReply) -> AdapterResponse {
    match reply {
        MockReply::Ok(v) => AdapterResponse::ok(request.id.clone(), v),
        MockReply::Err(e) => AdapterResponse {
            id: request.id.clone(),
            outcome: Err(e),
        },
        MockReply::Delay(d, inner) => {
            std::thread::sleep(d);
            resolve(request, *inner)
        }
        MockReply::WrongId(v) => AdapterResponse::ok(format!("{}#wrong", request.id), v),
        MockReply::Malformed | MockReply::Exit => {
            AdapterResponse::error(request.id.clone(), PROTOCOL, "mock cannot emit raw failures on a stream")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::ToolKind;
    use super::*;

    fn req(op: &str, payload: Value) -> AdapterRequest {
        AdapterRequest::new("1", ToolKind::Ocr, op, payload)
    }

    #[test]
    fn table_matches_by_hash_then_default() {
        let table = MockTable {
            entries: vec![MockEntry {
                key: None,
                op: Some("recognize".into()),
                sha256: Some("abc".into()),
                fields: serde_json::Map::new(),
                result: Some(json!({"pages": []})),
                error: None,
            }],
            default: None,
        };
        assert!(matches!(table.lookup(&req("recognize", json!({"sha256": "abc"}))), MockReply::Ok(_)));
        assert!(matches!(table.lookup(&req("recognize", json!({"sha256": "zzz"}))), MockReply::Err(_)));
        assert!(matches!(table.lookup(&req("other", json!({"sha256": "abc"}))), MockReply::Err(_)));
    }

    #[test]
    fn table_matches_payload_fields() {
        let entry = |w: i64, text: &str| MockEntry {
            key: None,
            op: Some("transcribe".into()),
            sha256: Some("h".into()),
            fields: json!({"span": w}).as_object().unwrap().clone(),
            result: Some(json!({"text": text})),
            error: None,
        };
        let table = MockTable {
            entries: vec![entry(0, "first"), entry(1, "second")],
            default: None,
        };
        let got = table.lookup(&req("transcribe", json!({"sha256": "h", "span": 1})));
        assert!(matches!(got, MockReply::Ok(v) if v["text"] == "second"));
    }

    #[test]
    fn table_matches_full_key() {
        let r = req("x", json!({"a": 1}));
        let table = MockTable {
            entries: vec![MockEntry {
                key: Some(cache_key(&r)),
                op: None,
                sha256: None,
                fields: serde_json::Map::new(),
                result: Some(json!(42)),
                error: None,
            }],
            default: Some(json!(0)),
        };
        assert!(matches!(table.lookup(&r), MockReply::Ok(v) if v == json!(42)));
        assert!(matches!(table.lookup(&req("x", json!({"a": 2}))), MockReply::Ok(v) if v == json!(0)));
    }

    #[test]
    fn energy_vad_edges() {
        assert!(energy_vad(&[0.0; 480], 16_000, 10.0, 0.5).iter().all(|&p| p == 0.0));
        assert!(energy_vad(&[1.0; 480], 16_000, 10.0, 0.5).iter().all(|&p| p == 1.0));
        let mut burst = vec![0.0; 1600];
        burst[800..960].iter_mut().for_each(|x| *x = 0.5);
        let probs = energy_vad(&burst, 16_000, 10.0, 0.5);
        assert_eq!(probs.len(), 10);
        assert_eq!(probs[5], 1.0);
        assert_eq!(probs[0], 0.0);
    }

    #[test]
    fn spec_fail_and_delay() {
        let spec = MockSpec {
            behavior: MockBehavior::Echo,
            delay_ms: 5,
            fail_ops: vec!["bad".into()],
        };
        match spec.reply(&req("bad", json!(1))) {
            MockReply::Delay(_, inner) => assert!(matches!(*inner, MockReply::Err(ref e) if e.code == "FAILED")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serve_lines_reports_line_numbers() {
        let spec = MockSpec::new(MockBehavior::Reference);
        let input = "{\"id\":\"a\",\"tool\":\"classify\",\"op\":\"frobnicate\",\"payload\":{}}\nnot json\n";
        let mut out = Vec::new();
        assert_eq!(serve_lines(&spec, input.as_bytes(), &mut out).unwrap(), 2);
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("UNSUPPORTED"));
        assert!(lines[1].contains("PROTOCOL") && lines[1].contains("line 2"));
    }

    #[test]
    fn spec_serde_shape() {
        let spec: MockSpec = serde_json::from_value(json!({"behavior": "llm", "delay_ms": 3})).unwrap();
        assert_eq!(spec.behavior, MockBehavior::Llm);
        let t: MockSpec = serde_json::from_value(json!({"behavior": "table", "entries": [], "default": 1})).unwrap();
        assert!(matches!(t.behavior, MockBehavior::Table(_)));
    }
}
