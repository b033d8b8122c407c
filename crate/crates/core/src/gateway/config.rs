//! The single gateway configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapters::mock::MockSpec;
use crate::adapters::{AdapterDescriptor, AdapterSetupError, ToolKind, TransportKind};
use crate::controller::{validate_registry, ChainEstimate, PrimitiveKind, TaskRule, TaskRules, ToolChain, DEFAULT_Q_MIN};
use crate::document::DocumentParams;
use crate::ingress::SafetyRules;
use crate::retrieval::{IndexKind, RoutingTable, DEFAULT_TOP_K};
use crate::schema::{EntityKind, TokenBudget};
use crate::vision::DEFAULT_REGION_THRESHOLD;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Adapter(#[from] AdapterSetupError),
    #[error("index {kind} at {path}: {reason}")]
    Index { kind: &'static str, path: PathBuf, reason: String },
    #[error("cannot open trace log {path}: {source}")]
    TraceLog {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioSettings {
    /// Frame length sent to the VAD adapter; also the VAD hop.
    pub frame_ms: f64,
    pub energy_threshold: f64,
    pub vad_threshold: f64,
    pub merge_gap_frames: usize,
    pub min_len_frames: usize,
    /// Cosine distance at which speaker clustering stops.
    pub cluster_stop: f64,
    /// Longest audio window sent for one speaker embedding.
    pub embed_window_s: f64,
}

impl Default for AudioSettings {
    fn default() -> Self {
        Self {
            frame_ms: 10.0,
            energy_threshold: 0.5,
            vad_threshold: 0.5,
            merge_gap_frames: 10,
            min_len_frames: 25,
            cluster_stop: 0.3,
            embed_window_s: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionSettings {
    pub region_threshold: f64,
    /// Ask a segment_mask adapter for masks of the grouped boxes.
    pub refine_masks: bool,
}

impl Default for VisionSettings {
    fn default() -> Self {
        Self {
            region_threshold: DEFAULT_REGION_THRESHOLD,
            refine_masks: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxLimits {
    pub wall_ms: u64,
    pub output_bytes: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            wall_ms: 2_000,
            output_bytes: 4_096,
        }
    }
}

fn default_q_min() -> f64 {
    DEFAULT_Q_MIN
}

fn default_deadline_ms() -> u64 {
    30_000
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_model() -> String {
    "interfaze-beta".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub adapters: Vec<AdapterDescriptor>,
    /// Behaviour of each `in_process_mock` adapter, by adapter id.
    #[serde(default)]
    pub mocks: BTreeMap<String, MockSpec>,
    pub chains: Vec<ToolChain>,
    pub estimates: Vec<ChainEstimate>,
    #[serde(default)]
    pub budgets: TokenBudget,
    /// Lines of the form `deny:<regex>` or `flag:<regex>`.
    #[serde(default)]
    pub safety_rules: Vec<String>,
    /// Replaces the built-in task rules when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_rules: Option<Vec<TaskRule>>,
    #[serde(default = "default_q_min")]
    pub q_min: f64,
    pub llm_adapter: String,
    /// Standing index dumps; relative paths resolve against the config file.
    #[serde(default)]
    pub indexes: BTreeMap<IndexKind, PathBuf>,
    /// Minimum confidence per entity kind.
    #[serde(default)]
    pub floors: BTreeMap<EntityKind, f64>,
    #[serde(default = "default_deadline_ms")]
    pub deadline_ms: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Clock used for provenance and `created`; wall clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<DateTime<Utc>>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub document: DocumentParams,
    #[serde(default)]
    pub audio: AudioSettings,
    #[serde(default)]
    pub vision: VisionSettings,
    #[serde(default)]
    pub sandbox: SandboxLimits,
    #[serde(default)]
    pub routing: RoutingTable,
    /// One JSON line per executed step is appended here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_log: Option<PathBuf>,
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads, parses and validates `path`. Relative paths inside resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.indexes.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.trace_log.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for a in &mut self.adapters {
            // a relative program path names a file next to the config
            if let Some(program) = a.command.first_mut() {
                if program.starts_with("./") || program.starts_with("../") {
                    *program = base.join(&*program).to_string_lossy().into_owned();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));

        let mut ids = BTreeSet::new();
        for a in &self.adapters {
            a.validate()?;
            if !ids.insert(a.adapter_id.as_str()) {
                return invalid(format!("adapters: id {:?} is used twice", a.adapter_id));
            }
            if a.transport == TransportKind::InProcessMock && !self.mocks.contains_key(&a.adapter_id) {
                return invalid(format!(
                    "adapters: {:?} uses in_process_mock but mocks has no entry for it",
                    a.adapter_id
                ));
            }
        }
        for id in self.mocks.keys() {
            match self.adapters.iter().find(|a| &a.adapter_id == id) {
                None => return invalid(format!("mocks: {id:?} does not name an adapter")),
                Some(a) if a.transport != TransportKind::InProcessMock => {
                    return invalid(format!("mocks: adapter {id:?} does not use in_process_mock"))
                }
                _ => {}
            }
        }

        let llms: Vec<_> = self.adapters.iter().filter(|a| a.tool == ToolKind::Llm).collect();
        match llms.as_slice() {
            [one] if one.adapter_id == self.llm_adapter => {}
            [] => return invalid("adapters: no adapter with tool \"llm\"; exactly one is required".into()),
            [one] => {
                return invalid(format!(
                    "llm_adapter is {:?} but the only llm adapter is {:?}",
                    self.llm_adapter, one.adapter_id
                ))
            }
            _ => return invalid("adapters: more than one adapter with tool \"llm\"; the final LLM is fixed".into()),
        }

        if self.chains.is_empty() {
            return invalid("chains: at least one chain is required".into());
        }
        validate_registry(&self.chains).map_err(|e| ConfigError::Invalid(format!("chains: {e}")))?;
        let mut estimated = BTreeSet::new();
        for e in &self.estimates {
            e.validate().map_err(|e| ConfigError::Invalid(format!("estimates: {e}")))?;
            if !self.chains.iter().any(|c| c.chain_id == e.chain_id) {
                return invalid(format!("estimates: {:?} does not name a chain", e.chain_id));
            }
            if !estimated.insert(e.chain_id.as_str()) {
                return invalid(format!("estimates: chain {:?} has two estimates", e.chain_id));
            }
        }
        for c in &self.chains {
            if !estimated.contains(c.chain_id.as_str()) {
                return invalid(format!("estimates: chain {:?} has no estimate", c.chain_id));
            }
            for (i, step) in c.steps.iter().enumerate() {
                if let Some(id) = step.params.get("adapter").and_then(|v| v.as_str()) {
                    if !ids.contains(id) {
                        return invalid(format!("chains: {:?} step {i} names unknown adapter {id:?}", c.chain_id));
                    }
                }
                if step.kind == PrimitiveKind::RunSandbox && !self.adapters.iter().any(|a| a.tool == ToolKind::Sandbox) {
                    return invalid(format!("chains: {:?} runs the sandbox but no sandbox adapter is configured", c.chain_id));
                }
            }
        }

        if !(0.0..=1.0).contains(&self.q_min) {
            return invalid(format!("q_min must lie in [0,1], got {}", self.q_min));
        }
        for (kind, f) in &self.floors {
            if !(0.0..=1.0).contains(f) {
                return invalid(format!("floors: {} must lie in [0,1], got {f}", kind.as_str()));
            }
        }
        if self.deadline_ms == 0 {
            return invalid("deadline_ms must be positive".into());
        }
        if self.top_k == 0 {
            return invalid("top_k must be positive".into());
        }
        if self.sandbox.output_bytes == 0 || self.sandbox.wall_ms == 0 {
            return invalid("sandbox limits must be positive".into());
        }
        let a = &self.audio;
        if !(a.frame_ms > 0.0) || !(a.embed_window_s > 0.0) {
            return invalid("audio: frame_ms and embed_window_s must be positive".into());
        }
        if !(0.0..=1.0).contains(&a.energy_threshold) || !(0.0..=1.0).contains(&a.vad_threshold) {
            return invalid("audio: thresholds must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.vision.region_threshold) {
            return invalid("vision: region_threshold must lie in [0,1]".into());
        }
        if self.document.max_block_tokens == 0 {
            return invalid("document: max_block_tokens must be positive".into());
        }
        SafetyRules::from_lines(&self.safety_rules).map_err(|e| ConfigError::Invalid(format!("safety_rules: {e}")))?;
        if let Some(rules) = &self.task_rules {
            TaskRules::new(rules.clone()).map_err(|e| ConfigError::Invalid(format!("task_rules: {e}")))?;
        }
        Ok(())
    }
}
