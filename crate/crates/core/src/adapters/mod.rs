//! Uniform invocation layer for perception, LLM and sandbox tools.
//!
//! Every tool sits behind an [`Adapter`]: a descriptor, a [`Transport`]
//! (in-process mock, child process over stdio, or TCP) and an optional LRU
//! cache. Messages are newline-delimited JSON objects `{id, tool, op,
//! payload}` answered by `{id, ok, result}` or `{id, ok, error}`; replies are
//! matched to requests by id, never by arrival order.

mod cache;
pub mod mock;
mod transport;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical;
pub use cache::ResponseCache;
pub use transport::{LineTransport, StdioTransport, TcpTransport};

pub const TIMEOUT: &str = "TIMEOUT";
pub const PROTOCOL: &str = "PROTOCOL";
pub const UNAVAILABLE: &str = "UNAVAILABLE";
pub const UNSUPPORTED: &str = "UNSUPPORTED";

#[derive(Debug, thiserror::Error)]
pub enum AdapterSetupError {
    #[error("adapter {0}: {1}")]
    Invalid(String, String),
    #[error("adapter {0}: failed to start transport: {1}")]
    Transport(String, #[source] std::io::Error),
    #[error("no adapter registered for tool {0}")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Ocr,
    Asr,
    Vad,
    DiarizeEmbed,
    Detect,
    Classify,
    RenderPage,
    SegmentMask,
    Llm,
    Sandbox,
}

impl ToolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ToolKind::Ocr => "ocr",
            ToolKind::Asr => "asr",
            ToolKind::Vad => "vad",
            ToolKind::DiarizeEmbed => "diarize_embed",
            ToolKind::Detect => "detect",
            ToolKind::Classify => "classify",
            ToolKind::RenderPage => "render_page",
            ToolKind::SegmentMask => "segment_mask",
            ToolKind::Llm => "llm",
            ToolKind::Sandbox => "sandbox",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    InProcessMock,
    Stdio,
    Tcp,
}

fn default_cache_capacity() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub adapter_id: String,
    pub tool: ToolKind,
    pub transport: TransportKind,
    pub timeout_ms: u64,
    pub batch_max: usize,
    pub cacheable: bool,
    /// Maximum cached entries; least recently used entries are evicted.
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
    /// Program and arguments for the stdio transport.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// `host:port` for the tcp transport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

impl AdapterDescriptor {
    pub fn new(adapter_id: impl Into<String>, tool: ToolKind, transport: TransportKind) -> Self {
        Self {
            adapter_id: adapter_id.into(),
            tool,
            transport,
            timeout_ms: 1_000,
            batch_max: 8,
            cacheable: false,
            cache_capacity: default_cache_capacity(),
            command: Vec::new(),
            address: None,
        }
    }

    pub fn validate(&self) -> Result<(), AdapterSetupError> {
        let bad = |why: &str| Err(AdapterSetupError::Invalid(self.adapter_id.clone(), why.into()));
        if self.adapter_id.is_empty() {
            return bad("adapter_id is empty");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        if self.batch_max == 0 {
            return bad("batch_max must be at least 1");
        }
        if self.cacheable && self.cache_capacity == 0 {
            return bad("cache_capacity must be positive when cacheable");
        }
        match self.transport {
            TransportKind::Stdio if self.command.is_empty() => bad("stdio transport needs a command"),
            TransportKind::Tcp if self.address.is_none() => bad("tcp transport needs an address"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: String,
    pub tool: ToolKind,
    pub op: String,
    pub payload: Value,
}

impl AdapterRequest {
    pub fn new(id: impl Into<String>, tool: ToolKind, op: impl Into<String>, payload: Value) -> Self {
        Self {
            id: id.into(),
            tool,
            op: op.into(),
            payload,
        }
    }

    /// One wire line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self).expect("requests are plain JSON")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResponse", into = "RawResponse")]
pub struct AdapterResponse {
    pub id: String,
    pub outcome: Result<Value, ErrorBody>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: String,
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<ErrorBody>,
}

impl TryFrom<RawResponse> for AdapterResponse {
    type Error = String;

    fn try_from(raw: RawResponse) -> Result<Self, String> {
        let outcome = match (raw.ok, raw.result, raw.error) {
            (true, Some(result), None) => Ok(result),
            (false, None, Some(error)) => Err(error),
            _ => return Err("response must carry exactly one of result/error, consistent with ok".into()),
        };
        Ok(AdapterResponse { id: raw.id, outcome })
    }
}

impl From<AdapterResponse> for RawResponse {
    fn from(r: AdapterResponse) -> Self {
        match r.outcome {
            Ok(result) => RawResponse {
                id: r.id,
                ok: true,
                result: Some(result),
                error: None,
            },
            Err(error) => RawResponse {
                id: r.id,
                ok: false,
                result: None,
                error: Some(error),
            },
        }
    }
}

impl AdapterResponse {
    pub fn ok(id: impl Into<String>, result: Value) -> Self {
        Self {
            id: id.into(),
            outcome: Ok(result),
        }
    }

    pub fn error(id: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            outcome: Err(ErrorBody {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn error_code(&self) -> Option<&str> {
        self.outcome.as_ref().err().map(|e| e.code.as_str())
    }

    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self).expect("responses are plain JSON")
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

/// Digest of `(tool, op, canonical payload)`; the request id is excluded.
pub fn cache_key(request: &AdapterRequest) -> String {
    let keyed = json!({"tool": request.tool, "op": request.op, "payload": request.payload});
    crate::sha256_hex(canonical::value_to_canonical(&keyed).as_bytes())
}

/// Binary payload field: `{"encoding": "base64", "data": ...}`.
pub fn encode_binary(bytes: &[u8]) -> Value {
    json!({
        "encoding": "base64",
        "data": base64::engine::general_purpose::STANDARD.encode(bytes),
    })
}

pub fn decode_binary(value: &Value) -> Result<Vec<u8>, String> {
    match value.get("encoding").and_then(Value::as_str) {
        Some("base64") => {}
        Some(other) => return Err(format!("unsupported encoding {other}")),
        None => return Err("binary field lacks an encoding".into()),
    }
    let data = value
        .get("data")
        .and_then(Value::as_str)
        .ok_or("binary field lacks data")?;
    base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| e.to_string())
}

/// What a transport reports back while a batch is in flight.
#[derive(Debug)]
pub enum TransportEvent {
    Reply(AdapterResponse),
    /// A line that did not parse, or a reply naming an id not in flight.
    Malformed(String),
    /// The peer went away.
    Closed(String),
}

pub trait Transport: Send + Sync {
    /// Starts delivering `batch`. Replies, in any order, go to `events`.
    /// Must not block for the duration of the work.
    fn dispatch(&self, batch: Vec<AdapterRequest>, events: mpsc::Sender<TransportEvent>);
}

/// One tool behind one transport.
pub struct Adapter {
    descriptor: AdapterDescriptor,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    transport_batches: AtomicU64,
    transport_items: AtomicU64,
}

impl std::fmt::Debug for Adapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapter")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

impl Adapter {
    pub fn new(descriptor: AdapterDescriptor, transport: Arc<dyn Transport>) -> Result<Self, AdapterSetupError> {
        descriptor.validate()?;
        let cache = descriptor
            .cacheable
            .then(|| ResponseCache::new(descriptor.cache_capacity));
        Ok(Self {
            descriptor,
            transport,
            cache,
            transport_batches: AtomicU64::new(0),
            transport_items: AtomicU64::new(0),
        })
    }

    pub fn descriptor(&self) -> &AdapterDescriptor {
        &self.descriptor
    }

    /// Number of batches handed to the transport so far.
    pub fn transport_calls(&self) -> u64 {
        self.transport_batches.load(Ordering::Relaxed)
    }

    pub fn transport_items(&self) -> u64 {
        self.transport_items.load(Ordering::Relaxed)
    }

    pub fn invoke(&self, request: AdapterRequest) -> AdapterResponse {
        self.invoke_batched(vec![request])
            .pop()
            .expect("one response per request")
    }

    /// Responses are positionally aligned with `requests`. Per-item failures
    /// are reported in place.
    pub fn invoke_batched(&self, requests: Vec<AdapterRequest>) -> Vec<AdapterResponse> {
        let n = requests.len();
        let mut out: Vec<Option<AdapterResponse>> = vec![None; n];
        let keys: Vec<Option<String>> = requests
            .iter()
            .map(|r| self.cache.as_ref().map(|_| cache_key(r)))
            .collect();

        // cache hits, then collapse identical misses onto one wire request
        let mut wire: Vec<AdapterRequest> = Vec::new();
        let mut fan_out: Vec<Vec<usize>> = Vec::new();
        let mut by_key: HashMap<String, usize> = HashMap::new();
        for (i, req) in requests.iter().enumerate() {
            if let (Some(cache), Some(key)) = (&self.cache, &keys[i]) {
                if let Some(result) = cache.get(key) {
                    out[i] = Some(AdapterResponse::ok(req.id.clone(), result));
                    continue;
                }
                if let Some(&slot) = by_key.get(key) {
                    fan_out[slot].push(i);
                    continue;
                }
                by_key.insert(key.clone(), wire.len());
            }
            wire.push(req.clone());
            fan_out.push(vec![i]);
        }

        if !wire.is_empty() {
            let replies = self.exchange(wire.clone());
            for (slot, reply) in replies.into_iter().enumerate() {
                if let (Some(cache), Ok(result)) = (&self.cache, &reply.outcome) {
                    if let Some(key) = &keys[fan_out[slot][0]] {
                        cache.insert(key.clone(), result.clone());
                    }
                }
                for &i in &fan_out[slot] {
                    out[i] = Some(AdapterResponse {
                        id: requests[i].id.clone(),
                        outcome: reply.outcome.clone(),
                    });
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    /// Sends `wire` in batches of at most `batch_max` and waits for replies
    /// until the shared deadline. Output is aligned with `wire`.
    fn exchange(&self, wire: Vec<AdapterRequest>) -> Vec<AdapterResponse> {
        let timeout = Duration::from_millis(self.descriptor.timeout_ms);
        let deadline = Instant::now() + timeout;
        let mut in_flight = Vec::new();
        for (b, chunk) in wire.chunks(self.descriptor.batch_max).enumerate() {
            let (tx, rx) = mpsc::channel();
            self.transport_batches.fetch_add(1, Ordering::Relaxed);
            self.transport_items.fetch_add(chunk.len() as u64, Ordering::Relaxed);
            self.transport.dispatch(chunk.to_vec(), tx);
            in_flight.push((b * self.descriptor.batch_max, chunk.len(), rx));
        }

        let mut out: Vec<Option<AdapterResponse>> = vec![None; wire.len()];
        for (offset, len, rx) in in_flight {
            let mut waiting: HashMap<&str, VecDeque<usize>> = HashMap::new();
            for i in offset..offset + len {
                waiting.entry(wire[i].id.as_str()).or_default().push_back(i);
            }
            let mut remaining = len;
            let mut failure: Option<(&str, String)> = None;
            while remaining > 0 {
                let now = Instant::now();
                let left = deadline.saturating_duration_since(now);
                match rx.recv_timeout(left) {
                    Ok(TransportEvent::Reply(reply)) => {
                        match waiting.get_mut(reply.id.as_str()).and_then(VecDeque::pop_front) {
                            Some(i) => {
                                out[i] = Some(reply);
                                remaining -= 1;
                            }
                            None => {
                                failure = Some((PROTOCOL, format!("reply for unknown id {:?}", reply.id)));
                                break;
                            }
                        }
                    }
                    Ok(TransportEvent::Malformed(why)) => {
                        failure = Some((PROTOCOL, why));
                        break;
                    }
                    Ok(TransportEvent::Closed(why)) => {
                        failure = Some((UNAVAILABLE, why));
                        break;
                    }
                    Err(RecvTimeoutError::Timeout) => {
                        failure = Some((TIMEOUT, format!("no reply within {} ms", self.descriptor.timeout_ms)));
                        break;
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        failure = Some((UNAVAILABLE, "transport dropped the batch".into()));
                        break;
                    }
                }
            }
            if let Some((code, message)) = failure {
                for i in offset..offset + len {
                    if out[i].is_none() {
                        out[i] = Some(AdapterResponse::error(wire[i].id.clone(), code, message.clone()));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("all slots resolved")).collect()
    }
}

/// All adapters known to a runtime, addressable by id or by tool.
#[derive(Debug, Default, Clone)]
pub struct AdapterRegistry {
    by_id: BTreeMap<String, Arc<Adapter>>,
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, adapter: Adapter) -> Arc<Adapter> {
        let adapter = Arc::new(adapter);
        self.by_id
            .insert(adapter.descriptor().adapter_id.clone(), Arc::clone(&adapter));
        adapter
    }

    pub fn get(&self, adapter_id: &str) -> Option<&Arc<Adapter>> {
        self.by_id.get(adapter_id)
    }

    /// First adapter (by id) serving `tool`.
    pub fn for_tool(&self, tool: ToolKind) -> Option<&Arc<Adapter>> {
        self.by_id.values().find(|a| a.descriptor().tool == tool)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &Arc<Adapter>> {
        self.by_id.values()
    }

    /// Total transport batches across every adapter.
    pub fn total_transport_calls(&self) -> u64 {
        self.by_id.values().map(|a| a.transport_calls()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockReply, MockTransport};
    use super::*;
    use std::collections::HashSet;

    fn descriptor(timeout_ms: u64, batch_max: usize, cacheable: bool) -> AdapterDescriptor {
        AdapterDescriptor {
            timeout_ms,
            batch_max,
            cacheable,
            ..AdapterDescriptor::new("m", ToolKind::Classify, TransportKind::InProcessMock)
        }
    }

    fn req(id: &str, payload: Value) -> AdapterRequest {
        AdapterRequest::new(id, ToolKind::Classify, "run", payload)
    }

    #[test]
    fn echo_returns_payload() {
        let t = MockTransport::echo();
        let a = Adapter::new(descriptor(500, 4, false), t).unwrap();
        let r = a.invoke(req("1", json!({"p": [1, 2]})));
        assert_eq!(r.id, "1");
        assert_eq!(r.outcome, Ok(json!({"p": [1, 2]})));
    }

    #[test]
    fn slow_adapter_times_out_within_bound() {
        let t = MockTransport::from_fn(|r| MockReply::Delay(Duration::from_millis(200), Box::new(MockReply::Ok(r.payload.clone()))));
        let a = Adapter::new(descriptor(100, 1, false), t).unwrap();
        let started = Instant::now();
        let r = a.invoke(req("1", json!(1)));
        assert_eq!(r.error_code(), Some(TIMEOUT));
        assert!(started.elapsed() < Duration::from_millis(100 + 150));
    }

    #[test]
    fn mismatched_id_is_protocol_error() {
        let t = MockTransport::from_fn(|_| MockReply::WrongId(json!(1)));
        let a = Adapter::new(descriptor(500, 1, false), t).unwrap();
        assert_eq!(a.invoke(req("1", json!(1))).error_code(), Some(PROTOCOL));
    }

    #[test]
    fn malformed_and_exit() {
        let t = MockTransport::from_fn(|_| MockReply::Malformed);
        let a = Adapter::new(descriptor(500, 1, false), t).unwrap();
        assert_eq!(a.invoke(req("1", json!(1))).error_code(), Some(PROTOCOL));
        let t = MockTransport::from_fn(|_| MockReply::Exit);
        let a = Adapter::new(descriptor(500, 1, false), t).unwrap();
        assert_eq!(a.invoke(req("1", json!(1))).error_code(), Some(UNAVAILABLE));
    }

    #[test]
    fn batching_uses_ceiling_division() {
        let t = MockTransport::echo();
        let a = Adapter::new(descriptor(500, 2, false), t.clone()).unwrap();
        let reqs: Vec<_> = (0..5).map(|i| req(&format!("r{i}"), json!(i))).collect();
        let out = a.invoke_batched(reqs.clone());
        assert_eq!(out.len(), 5);
        for (q, r) in reqs.iter().zip(&out) {
            assert_eq!(q.id, r.id);
            assert_eq!(r.outcome.as_ref().unwrap(), &q.payload);
        }
        assert!(a.transport_calls() >= 3);
        assert_eq!(t.dispatches(), 3);
    }

    #[test]
    fn cache_collapses_identical_requests() {
        let t = MockTransport::echo();
        let a = Adapter::new(descriptor(500, 8, true), t.clone()).unwrap();
        let out = a.invoke_batched((0..3).map(|i| req(&format!("x{i}"), json!({"same": true}))).collect());
        assert!(out.iter().all(|r| r.is_ok()));
        assert_eq!(out.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["x0", "x1", "x2"]);
        assert_eq!(t.dispatches(), 1);
        // later identical calls never reach the transport
        for i in 0..3 {
            a.invoke(req(&format!("y{i}"), json!({"same": true})));
        }
        assert_eq!(t.dispatches(), 1);
    }

    #[test]
    fn cache_is_transparent() {
        let payloads: Vec<Value> = (0..20).map(|i| json!({"k": i % 7})).collect();
        let run = |cacheable: bool| {
            let a = Adapter::new(descriptor(500, 3, cacheable), MockTransport::echo()).unwrap();
            payloads
                .iter()
                .enumerate()
                .map(|(i, p)| a.invoke(req(&format!("q{i}"), p.clone())))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn per_item_timeout_keeps_siblings() {
        let t = MockTransport::from_fn(|r| {
            if r.id == "2" {
                MockReply::Delay(Duration::from_millis(400), Box::new(MockReply::Ok(json!("late"))))
            } else {
                MockReply::Ok(r.payload.clone())
            }
        });
        let a = Adapter::new(descriptor(100, 3, false), t).unwrap();
        let out = a.invoke_batched(vec![req("1", json!(1)), req("2", json!(2)), req("3", json!(3))]);
        assert_eq!(out[0].outcome, Ok(json!(1)));
        assert_eq!(out[1].error_code(), Some(TIMEOUT));
        assert_eq!(out[2].outcome, Ok(json!(3)));
    }

    #[test]
    fn cache_key_properties() {
        let a = req("1", json!({"x": [1, 2, 3]}));
        let b = req("2", json!({"x": [1, 2, 3]}));
        assert_eq!(cache_key(&a), cache_key(&b));
        let mut c = b.clone();
        c.op = "other".into();
        assert_ne!(cache_key(&a), cache_key(&c));
    }

    #[test]
    fn cache_key_one_byte_differences_do_not_collide() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut keys = HashSet::new();
        for _ in 0..1000 {
            let mut bytes: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            let first = req("a", encode_binary(&bytes));
            let pos = rng.gen_range(0..bytes.len());
            bytes[pos] ^= 1 << rng.gen_range(0..8);
            let second = req("a", encode_binary(&bytes));
            let (ka, kb) = (cache_key(&first), cache_key(&second));
            assert_ne!(ka, kb);
            keys.insert(ka);
            keys.insert(kb);
        }
        assert!(keys.len() >= 1990);
    }

    #[test]
    fn response_wire_shape() {
        assert_eq!(AdapterResponse::ok("1", json!(5)).to_line(), r#"{"id":"1","ok":true,"result":5}"#);
        assert_eq!(
            AdapterResponse::error("1", TIMEOUT, "slow").to_line(),
            r#"{"error":{"code":"TIMEOUT","message":"slow"},"id":"1","ok":false}"#
        );
        assert!(AdapterResponse::parse_line(r#"{"id":"1","ok":true}"#).is_err());
        assert!(AdapterResponse::parse_line(r#"{"id":"1","ok":true,"result":1,"error":{"code":"X","message":""}}"#).is_err());
        assert!(AdapterResponse::parse_line(r#"{"id":"1","ok":false,"result":1}"#).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let bytes = vec![0u8, 255, 10, 13];
        assert_eq!(decode_binary(&encode_binary(&bytes)).unwrap(), bytes);
        assert!(decode_binary(&json!({"encoding": "hex", "data": "00"})).is_err());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = descriptor(0, 1, false);
        assert!(d.validate().is_err());
        d.timeout_ms = 5;
        d.batch_max = 0;
        assert!(d.validate().is_err());
        d.batch_max = 1;
        d.transport = TransportKind::Stdio;
        assert!(d.validate().is_err());
    }
}
