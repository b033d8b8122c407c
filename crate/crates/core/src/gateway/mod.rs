//! Chat-completions style front door: ingress, chain selection and
//! execution, and the response with its `interfaze` extension block.

mod config;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{AudioSettings, ConfigError, GatewayConfig, SandboxLimits, VisionSettings};
pub use pipeline::{fenced_code, truncate_utf8, BAD_INPUT, NO_CODE};

use crate::adapters::mock::MockTransport;
use crate::adapters::{Adapter, AdapterRegistry, StdioTransport, TcpTransport, Transport, TransportKind, PROTOCOL};
use crate::canonical::value_to_canonical;
use crate::controller::{
    enumerate_chains, execute_chain, predict_task_type, select_chain, summarize_trace, ChainEstimate, ChainError,
    CompileSettings, Execution, ExecutionError, StepRunner, TaskRules, TraceEntry, TraceSummary, NO_FEASIBLE_CHAIN,
};
use crate::ingress::{normalize_request, summarize, Attachment, MediaKind, Request, SafetyRules, SafetyVerdict};
use crate::retrieval::{IndexKind, SegmentIndex};
use crate::schema::{state_digest, ContextState};
use pipeline::PipelineRunner;

pub const SAFETY_DENY: &str = "SAFETY_DENY";
pub const INTERNAL: &str = "INTERNAL";
pub const REFUSAL_TEXT: &str = "This request was refused by the deployment's safety policy.";

/// The stand-in LLM: `ANSWER(` + first 16 hex digits of the prompt's
/// SHA-256 + `)`.
pub fn mock_llm_answer(prompt: &str) -> String {
    format!("ANSWER({})", &crate::sha256_hex(prompt.as_bytes())[..16])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireEncoding {
    #[default]
    Base64,
    Utf8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireAttachment {
    pub name: String,
    /// Declared kind; content sniffing may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_kind: Option<MediaKind>,
    #[serde(default)]
    pub encoding: WireEncoding,
    pub data: String,
}

impl WireAttachment {
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            name: name.into(),
            media_kind: None,
            encoding: WireEncoding::Base64,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Vec<u8>, String> {
        match self.encoding {
            WireEncoding::Utf8 => Ok(self.data.clone().into_bytes()),
            WireEncoding::Base64 => base64::engine::general_purpose::STANDARD
                .decode(self.data.as_bytes())
                .map_err(|e| format!("attachment {:?}: {e}", self.name)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<WireAttachment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub urls: Vec<String>,
}

/// Per-request knobs carried in the request's `interfaze` member.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestOptions {
    /// Template for structured extraction; requesting one forces it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract_template: Option<Value>,
}

/// Unknown top-level members (temperature and the like) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interfaze: Option<RequestOptions>,
}

impl CompletionRequest {
    /// One user message with `query`, `files` as base64 attachments and
    /// `urls`.
    pub fn user(query: &str, files: Vec<WireAttachment>, urls: Vec<String>) -> Self {
        Self {
            model: None,
            messages: vec![ChatMessage {
                role: "user".into(),
                content: Some(query.to_string()),
                attachments: files,
                urls,
            }],
            interfaze: None,
        }
    }

    /// The runtime request: the last user message is the query; attachments
    /// and URLs of every user message are gathered in order.
    pub fn to_request(&self, id: &str) -> Result<Request, GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::protocol("messages must not be empty"));
        }
        let mut query = None;
        let mut request = Request::text(id, "");
        for (i, m) in self.messages.iter().enumerate() {
            match m.role.as_str() {
                "system" | "assistant" => continue,
                "user" => {}
                other => return Err(GatewayError::protocol(format!("messages[{i}]: unknown role {other:?}"))),
            }
            query = Some(m.content.clone().unwrap_or_default());
            for a in &m.attachments {
                let bytes = a.decode().map_err(GatewayError::protocol)?;
                request
                    .attachments
                    .push(Attachment::new(a.name.clone(), a.media_kind.unwrap_or(MediaKind::Unknown), bytes));
            }
            request.declared_urls.extend(m.urls.iter().cloned());
        }
        let query = query.ok_or_else(|| GatewayError::protocol("no message has role \"user\""))?;
        request.text = Some(query);
        if let Some(t) = self.interfaze.as_ref().and_then(|o| o.extract_template.clone()) {
            request.overrides.insert("extract_template".into(), t);
        }
        Ok(request)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct GatewayError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub trace: Vec<TraceSummary>,
    /// Digest of the last compiled state, when a deadline cut execution.
    pub context_digest: Option<String>,
}

impl GatewayError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            trace: Vec::new(),
            context_digest: None,
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(400, PROTOCOL, message)
    }

    pub fn body(&self) -> Value {
        let mut error = json!({"code": self.code, "message": self.message});
        if !self.trace.is_empty() {
            error["trace"] = serde_json::to_value(&self.trace).expect("trace serializes");
        }
        if let Some(d) = &self.context_digest {
            error["context_digest"] = json!(d);
        }
        json!({"error": error})
    }
}

/// Status and canonical JSON body of one HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

pub(crate) struct Shared {
    config: GatewayConfig,
    registry: AdapterRegistry,
    indexes: BTreeMap<IndexKind, SegmentIndex>,
    safety: SafetyRules,
    task_rules: TaskRules,
    estimates: BTreeMap<String, ChainEstimate>,
    trace_log: Option<Mutex<File>>,
}

/// Shared, immutable runtime state; cheap to clone across request handlers.
#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("model", &self.shared.config.model).finish()
    }
}

/// Builds the adapters a config describes.
pub fn build_registry(config: &GatewayConfig) -> Result<AdapterRegistry, ConfigError> {
    let mut registry = AdapterRegistry::new();
    for d in &config.adapters {
        let transport: Arc<dyn Transport> = match d.transport {
            TransportKind::InProcessMock => {
                let spec = config.mocks.get(&d.adapter_id).cloned().ok_or_else(|| {
                    ConfigError::Invalid(format!("mocks: no entry for adapter {:?}", d.adapter_id))
                })?;
                MockTransport::from_spec(spec)
            }
            TransportKind::Stdio => Arc::new(
                StdioTransport::spawn(&d.command)
                    .map_err(|e| crate::adapters::AdapterSetupError::Transport(d.adapter_id.clone(), e))?,
            ),
            TransportKind::Tcp => {
                let addr = d.address.as_deref().unwrap_or_default();
                Arc::new(
                    TcpTransport::connect(addr, Duration::from_millis(d.timeout_ms))
                        .map_err(|e| crate::adapters::AdapterSetupError::Transport(d.adapter_id.clone(), e))?,
                )
            }
        };
        registry.insert(Adapter::new(d.clone(), transport)?);
    }
    Ok(registry)
}

impl Gateway {
    /// Loads the config at `path` and starts its adapters.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::new(GatewayConfig::load(path)?)
    }

    pub fn new(config: GatewayConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let registry = build_registry(&config)?;
        Self::with_registry(config, registry)
    }

    /// Uses `registry` instead of building adapters from the config; every
    /// configured adapter id must be present.
    pub fn with_registry(config: GatewayConfig, registry: AdapterRegistry) -> Result<Self, ConfigError> {
        config.validate()?;
        for d in &config.adapters {
            if registry.get(&d.adapter_id).is_none() {
                return Err(ConfigError::Invalid(format!("registry lacks adapter {:?}", d.adapter_id)));
            }
        }
        let mut indexes = BTreeMap::new();
        for (kind, path) in &config.indexes {
            let index = SegmentIndex::read_from(path).map_err(|e| ConfigError::Index {
                kind: kind.as_str(),
                path: path.clone(),
                reason: e.to_string(),
            })?;
            if index.index_kind != *kind {
                return Err(ConfigError::Index {
                    kind: kind.as_str(),
                    path: path.clone(),
                    reason: format!("file holds a {} index", index.index_kind.as_str()),
                });
            }
            indexes.insert(*kind, index);
        }
        let trace_log = match &config.trace_log {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ConfigError::TraceLog {
                        path: path.clone(),
                        source,
                    })?,
            )),
            None => None,
        };
        let safety = SafetyRules::from_lines(&config.safety_rules).map_err(|e| ConfigError::Invalid(format!("safety_rules: {e}")))?;
        let task_rules = match &config.task_rules {
            Some(r) => TaskRules::new(r.clone()).map_err(|e| ConfigError::Invalid(format!("task_rules: {e}")))?,
            None => TaskRules::default(),
        };
        let estimates = config.estimates.iter().map(|e| (e.chain_id.clone(), e.clone())).collect();
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                registry,
                indexes,
                safety,
                task_rules,
                estimates,
                trace_log,
            }),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.shared.config
    }

    pub fn registry(&self) -> &AdapterRegistry {
        &self.shared.registry
    }

    fn now(&self) -> DateTime<Utc> {
        self.shared.config.fixed_time.unwrap_or_else(Utc::now)
    }

    /// Full HTTP exchange: never fails, errors become error bodies.
    pub fn handle_completion(&self, body: &[u8]) -> Reply {
        match self.complete(body) {
            Ok(v) => Reply {
                status: 200,
                body: value_to_canonical(&v).into_bytes(),
            },
            Err(e) => Reply {
                status: e.status,
                body: value_to_canonical(&e.body()).into_bytes(),
            },
        }
    }

    /// Parses `body` and answers it. The response id derives from the
    /// body's digest.
    pub fn complete(&self, body: &[u8]) -> Result<Value, GatewayError> {
        let parsed: CompletionRequest =
            serde_json::from_slice(body).map_err(|e| GatewayError::protocol(format!("malformed request body: {e}")))?;
        let digest = crate::sha256_hex(body);
        self.complete_request(&parsed, &digest[..16])
    }

    pub fn complete_request(&self, parsed: &CompletionRequest, id_hex: &str) -> Result<Value, GatewayError> {
        self.run_request(parsed, id_hex).map(|(v, _)| v)
    }

    /// Like [`Gateway::complete_request`], also returning the execution
    /// behind the answer (absent for refusals).
    pub fn run_request(&self, parsed: &CompletionRequest, id_hex: &str) -> Result<(Value, Option<Execution>), GatewayError> {
        let shared = &self.shared;
        let request_id = format!("req-{id_hex}");
        let request = normalize_request(&parsed.to_request(&request_id)?);
        let summary = summarize(&request, &shared.safety).map_err(|e| GatewayError::protocol(e.to_string()))?;
        let now = self.now();
        let envelope = |content: &str, finish: &str, ext: Value| {
            json!({
                "id": format!("chatcmpl-{id_hex}"),
                "object": "chat.completion",
                "created": now.timestamp(),
                "model": shared.config.model,
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": finish,
                }],
                "interfaze": ext,
            })
        };

        if summary.safety == SafetyVerdict::Deny {
            let empty = state_digest(&ContextState::new()).expect("empty state serializes");
            let refusal = envelope(
                REFUSAL_TEXT,
                "content_filter",
                json!({
                    "chain_id": null,
                    "context_digest": empty,
                    "degraded": false,
                    "flags": [],
                    "provenance": [],
                    "refusal": SAFETY_DENY,
                    "task_type": null,
                    "trace": [],
                }),
            );
            return Ok((refusal, None));
        }

        let task = predict_task_type(&summary, request.query(), &shared.task_rules);
        let candidates = enumerate_chains(&task, &summary.modalities, &shared.config.chains).map_err(|e| match e {
            ChainError::NoFeasibleChain(_) => GatewayError::new(422, NO_FEASIBLE_CHAIN, e.to_string()),
            other => GatewayError::new(500, INTERNAL, other.to_string()),
        })?;
        let selection = select_chain(&candidates, &shared.estimates, shared.config.q_min)
            .map_err(|e| GatewayError::new(500, INTERNAL, e.to_string()))?;

        let runner = Arc::new(PipelineRunner::new(
            Arc::clone(shared),
            request_id.clone(),
            task.clone(),
            summary.modalities.clone(),
            now,
        ));
        let settings = CompileSettings {
            query: request.query().to_string(),
            budgets: shared.config.budgets,
            floors: shared.config.floors.clone(),
            base: Vec::new(),
        };
        let outcome = execute_chain(
            &selection.chains,
            Arc::new(request.clone()),
            Duration::from_millis(shared.config.deadline_ms),
            Arc::clone(&runner) as Arc<dyn StepRunner>,
            &settings,
        );
        let trace = match &outcome {
            Ok(e) => e.trace.as_slice(),
            Err(e) => e.trace(),
        };
        self.log_trace(&request_id, trace);

        let execution = match outcome {
            Ok(e) => e,
            Err(err) => {
                let mut g = match &err {
                    ExecutionError::Deadline { .. } => GatewayError::new(504, err.code(), "deadline exceeded before an answer"),
                    ExecutionError::ChainsExhausted { .. } => GatewayError::new(502, err.code(), "every fallback chain failed"),
                };
                g.trace = summarize_trace(err.trace());
                if let ExecutionError::Deadline { last_state: Some(s), .. } = &err {
                    g.context_digest = state_digest(s).ok();
                }
                return Err(g);
            }
        };

        let digest = state_digest(&execution.state).map_err(|e| GatewayError::new(500, INTERNAL, e.to_string()))?;
        let mut flags: BTreeSet<String> = runner.flags();
        flags.extend(request.flags.iter().cloned());
        if selection.degraded {
            flags.insert("degraded".into());
        }
        if summary.safety == SafetyVerdict::Flag {
            flags.insert("safety_flag".into());
        }
        let provenance: Vec<_> = execution.state.provenance_index.values().collect();
        let response = envelope(
            &execution.answer,
            "stop",
            json!({
                "chain_id": execution.chain_id,
                "context_digest": digest,
                "degraded": selection.degraded,
                "flags": flags,
                "provenance": provenance,
                "task_type": task,
                "trace": summarize_trace(&execution.trace),
            }),
        );
        Ok((response, Some(execution)))
    }

    fn log_trace(&self, request_id: &str, trace: &[TraceEntry]) {
        let Some(log) = &self.shared.trace_log else {
            return;
        };
        let mut file = log.lock().expect("trace log lock");
        for t in trace {
            let mut line = serde_json::to_value(t).expect("trace entry serializes");
            line["request_id"] = json!(request_id);
            if let Err(e) = writeln!(file, "{}", value_to_canonical(&line)) {
                tracing::warn!("trace log write failed: {e}");
                return;
            }
        }
    }
}
