//! Task typing, chain selection and fallback execution.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::compiler::{compile_context, CompileInput};
use crate::ingress::{IngressSummary, Modality, Request};
use crate::schema::{render_prompt, ContextState, EntityKind, TokenBudget};

pub const DEFAULT_Q_MIN: f64 = 0.7;
pub const DEFAULT_STEP_TIMEOUT_MS: u64 = 5_000;
/// Tag matching every task type.
pub const ANY_TASK: &str = "*";

pub const NO_FEASIBLE_CHAIN: &str = "NO_FEASIBLE_CHAIN";
pub const DEADLINE: &str = "DEADLINE";
pub const CHAINS_EXHAUSTED: &str = "CHAINS_EXHAUSTED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    QueryIndex,
    FetchParse,
    RunPerception,
    RunSandbox,
    CallLlm,
}

impl PrimitiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrimitiveKind::QueryIndex => "query_index",
            PrimitiveKind::FetchParse => "fetch_parse",
            PrimitiveKind::RunPerception => "run_perception",
            PrimitiveKind::RunSandbox => "run_sandbox",
            PrimitiveKind::CallLlm => "call_llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
}

impl Primitive {
    pub fn new(kind: PrimitiveKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(
            self.params
                .get("timeout_ms")
                .and_then(Value::as_u64)
                .unwrap_or(DEFAULT_STEP_TIMEOUT_MS),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolChain {
    pub chain_id: String,
    pub steps: Vec<Primitive>,
    #[serde(default)]
    pub required_modalities: BTreeSet<Modality>,
    /// Task types served; `*` serves all.
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("chain {0:?} has no steps")]
    Empty(String),
    #[error("chain {0:?} must end with call_llm")]
    NoTerminalLlm(String),
    #[error("chain {0:?} calls the LLM before its last step")]
    EarlyLlm(String),
    #[error("duplicate chain id {0:?}")]
    Duplicate(String),
    #[error("no estimate for chain {0:?}")]
    MissingEstimate(String),
    #[error("estimate for chain {0:?} has quality outside [0,1] or negative cost/latency")]
    BadEstimate(String),
    #[error("invalid task rule pattern {0:?}: {1}")]
    BadRule(String, String),
    #[error("no feasible chain for task {0:?}")]
    NoFeasibleChain(String),
}

impl ToolChain {
    pub fn validate(&self) -> Result<(), ChainError> {
        let last = self.steps.last().ok_or_else(|| ChainError::Empty(self.chain_id.clone()))?;
        if last.kind != PrimitiveKind::CallLlm {
            return Err(ChainError::NoTerminalLlm(self.chain_id.clone()));
        }
        if self.steps[..self.steps.len() - 1].iter().any(|s| s.kind == PrimitiveKind::CallLlm) {
            return Err(ChainError::EarlyLlm(self.chain_id.clone()));
        }
        Ok(())
    }
}

pub fn validate_registry(chains: &[ToolChain]) -> Result<(), ChainError> {
    let mut seen = BTreeSet::new();
    for c in chains {
        c.validate()?;
        if !seen.insert(c.chain_id.as_str()) {
            return Err(ChainError::Duplicate(c.chain_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEstimate {
    pub chain_id: String,
    pub predicted_quality: f64,
    pub cost_proxy: f64,
    pub latency_proxy_ms: f64,
}

impl ChainEstimate {
    pub fn validate(&self) -> Result<(), ChainError> {
        if !(0.0..=1.0).contains(&self.predicted_quality) || !(self.cost_proxy >= 0.0) || !(self.latency_proxy_ms >= 0.0) {
            return Err(ChainError::BadEstimate(self.chain_id.clone()));
        }
        Ok(())
    }
}

/// Matches when every given condition holds: the pattern finds the query,
/// the modality is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRule {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
}

#[derive(Debug, Clone)]
pub struct TaskRules {
    rules: Vec<(TaskRule, Option<Regex>)>,
}

impl TaskRules {
    pub fn new(rules: Vec<TaskRule>) -> Result<Self, ChainError> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let re = r
                    .pattern
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| ChainError::BadRule(r.pattern.clone().unwrap_or_default(), e.to_string()))?;
                Ok((r, re))
            })
            .collect::<Result<_, ChainError>>()?;
        Ok(Self { rules })
    }

    pub fn rules(&self) -> impl Iterator<Item = &TaskRule> {
        self.rules.iter().map(|(r, _)| r)
    }
}

impl Default for TaskRules {
    fn default() -> Self {
        Self::new(default_task_rules()).expect("built-in rules compile")
    }
}

pub fn default_task_rules() -> Vec<TaskRule> {
    let rule = |task: &str, pattern: Option<&str>, modality: Option<Modality>| TaskRule {
        task: task.into(),
        pattern: pattern.map(str::to_string),
        modality,
    };
    vec![
        rule("code", Some("```"), None),
        rule("transcribe", None, Some(Modality::Audio)),
        rule("tool_usage", Some(r"(?i)\bhow (do|can|should) i\b|\bhow to\b"), None),
        rule("document", None, Some(Modality::Document)),
        rule("vision", None, Some(Modality::Image)),
        rule("web", None, Some(Modality::Url)),
    ]
}

/// First matching rule wins; `general` otherwise.
pub fn predict_task_type(summary: &IngressSummary, query: &str, rules: &TaskRules) -> String {
    for (rule, re) in &rules.rules {
        if rule.pattern.is_none() && rule.modality.is_none() {
            continue;
        }
        let text_ok = re.as_ref().map_or(true, |re| re.is_match(query));
        let modality_ok = rule.modality.map_or(true, |m| summary.modalities.contains(&m));
        if text_ok && modality_ok {
            return rule.task.clone();
        }
    }
    "general".to_string()
}

/// Chains whose required modalities are present and whose tags cover the
/// task, in registry order.
pub fn enumerate_chains(task_type: &str, modalities: &BTreeSet<Modality>, registry: &[ToolChain]) -> Result<Vec<ToolChain>, ChainError> {
    let out: Vec<ToolChain> = registry
        .iter()
        .filter(|c| c.required_modalities.is_subset(modalities))
        .filter(|c| c.tags.contains(task_type) || c.tags.contains(ANY_TASK))
        .cloned()
        .collect();
    if out.is_empty() {
        return Err(ChainError::NoFeasibleChain(task_type.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chains: Vec<ToolChain>,
    /// Nothing met the quality threshold; ordered by quality instead.
    pub degraded: bool,
}

/// Feasible chains (quality ≥ `q_min`) by `(cost, latency, id)`; when none
/// is feasible, every candidate by quality descending then cost.
pub fn select_chain(candidates: &[ToolChain], estimates: &BTreeMap<String, ChainEstimate>, q_min: f64) -> Result<Selection, ChainError> {
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let e = estimates
            .get(&c.chain_id)
            .ok_or_else(|| ChainError::MissingEstimate(c.chain_id.clone()))?;
        rows.push((c, e));
    }
    let mut feasible: Vec<_> = rows.iter().filter(|(_, e)| e.predicted_quality >= q_min).cloned().collect();
    if !feasible.is_empty() {
        feasible.sort_by(|(a, ea), (b, eb)| {
            ea.cost_proxy
                .total_cmp(&eb.cost_proxy)
                .then(ea.latency_proxy_ms.total_cmp(&eb.latency_proxy_ms))
                .then_with(|| a.chain_id.cmp(&b.chain_id))
        });
        return Ok(Selection {
            chains: feasible.into_iter().map(|(c, _)| c.clone()).collect(),
            degraded: false,
        });
    }
    rows.sort_by(|(a, ea), (b, eb)| {
        eb.predicted_quality
            .total_cmp(&ea.predicted_quality)
            .then(ea.cost_proxy.total_cmp(&eb.cost_proxy))
            .then_with(|| a.chain_id.cmp(&b.chain_id))
    });
    Ok(Selection {
        chains: rows.into_iter().map(|(c, _)| c.clone()).collect(),
        degraded: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepError {
    pub code: String,
    pub message: String,
}

impl StepError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// Runs the primitives of a chain. Implementations must be shareable
/// across threads since steps run on workers with timeouts.
pub trait StepRunner: Send + Sync + 'static {
    /// Executes a non-LLM primitive, returning its state fragment.
    fn run_step(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError>;
    /// Calls the configured LLM with the rendered prompt.
    fn call_llm(&self, prompt: &str, step: &Primitive) -> Result<String, StepError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub chain_id: String,
    pub step_index: usize,
    pub kind: PrimitiveKind,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub duration_ms: u64,
}

/// Trace line without timing, stable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub chain_id: String,
    pub step: String,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

pub fn summarize_trace(trace: &[TraceEntry]) -> Vec<TraceSummary> {
    trace
        .iter()
        .map(|t| TraceSummary {
            chain_id: t.chain_id.clone(),
            step: format!("{}#{}", t.kind.as_str(), t.step_index),
            outcome: t.outcome.clone(),
            code: t.code.clone(),
        })
        .collect()
}

/// What the compile step needs besides the fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct CompileSettings {
    pub query: String,
    pub budgets: TokenBudget,
    pub floors: BTreeMap<EntityKind, f64>,
    /// Fragments every chain starts from.
    pub base: Vec<ContextState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub answer: String,
    pub chain_id: String,
    pub state: ContextState,
    pub prompt: String,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecutionError {
    #[error("deadline exceeded")]
    Deadline {
        trace: Vec<TraceEntry>,
        last_state: Option<ContextState>,
    },
    #[error("every chain failed")]
    ChainsExhausted { trace: Vec<TraceEntry> },
}

impl ExecutionError {
    pub fn code(&self) -> &'static str {
        match self {
            ExecutionError::Deadline { .. } => DEADLINE,
            ExecutionError::ChainsExhausted { .. } => CHAINS_EXHAUSTED,
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        match self {
            ExecutionError::Deadline { trace, .. } | ExecutionError::ChainsExhausted { trace } => trace,
        }
    }
}

enum Waited<T> {
    Done(Result<T, StepError>),
    TimedOut,
}

fn spawn_step<T: Send + 'static>(f: impl FnOnce() -> Result<T, StepError> + Send + 'static) -> mpsc::Receiver<Result<T, StepError>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(f());
    });
    rx
}

fn wait<T>(rx: &mpsc::Receiver<Result<T, StepError>>, until: Instant) -> Waited<T> {
    let left = until.saturating_duration_since(Instant::now());
    match rx.recv_timeout(left) {
        Ok(r) => Waited::Done(r),
        Err(mpsc::RecvTimeoutError::Timeout) => Waited::TimedOut,
        Err(mpsc::RecvTimeoutError::Disconnected) => Waited::Done(Err(StepError::new("PANIC", "step worker died"))),
    }
}

enum ChainResult {
    Answer(Execution),
    Failed,
    Deadline,
}

/// Runs chains in fallback order until one answers.
///
/// Steps run in order, each on a worker bounded by its own timeout and the
/// overall deadline; consecutive perception steps run concurrently. Any
/// failure abandons the chain for the next. The LLM sees only the rendered
/// prompt of the compiled state.
pub fn execute_chain(
    fallbacks: &[ToolChain],
    request: Arc<Request>,
    deadline: Duration,
    runner: Arc<dyn StepRunner>,
    settings: &CompileSettings,
) -> Result<Execution, ExecutionError> {
    let until = Instant::now() + deadline;
    let mut trace = Vec::new();
    let mut last_state = None;
    for chain in fallbacks {
        match run_one(chain, &request, until, &runner, settings, &mut trace, &mut last_state) {
            ChainResult::Answer(mut e) => {
                e.trace = trace;
                return Ok(e);
            }
            ChainResult::Failed => continue,
            ChainResult::Deadline => return Err(ExecutionError::Deadline { trace, last_state }),
        }
    }
    Err(ExecutionError::ChainsExhausted { trace })
}

fn record(
    trace: &mut Vec<TraceEntry>,
    chain: &ToolChain,
    step_index: usize,
    started: Instant,
    outcome: StepOutcome,
    code: Option<String>,
) {
    trace.push(TraceEntry {
        chain_id: chain.chain_id.clone(),
        step_index,
        kind: chain.steps[step_index].kind,
        outcome,
        code,
        duration_ms: started.elapsed().as_millis() as u64,
    });
}

fn run_one(
    chain: &ToolChain,
    request: &Arc<Request>,
    until: Instant,
    runner: &Arc<dyn StepRunner>,
    settings: &CompileSettings,
    trace: &mut Vec<TraceEntry>,
    last_state: &mut Option<ContextState>,
) -> ChainResult {
    let mut fragments = settings.base.clone();
    let llm_index = chain.steps.len() - 1;
    let mut i = 0;
    while i < llm_index {
        if Instant::now() >= until {
            return ChainResult::Deadline;
        }
        // a run of perception steps goes out together
        let mut j = i + 1;
        if chain.steps[i].kind == PrimitiveKind::RunPerception {
            while j < llm_index && chain.steps[j].kind == PrimitiveKind::RunPerception {
                j += 1;
            }
        }
        let started = Instant::now();
        let pending: Vec<_> = (i..j)
            .map(|k| {
                let (runner, request, step) = (Arc::clone(runner), Arc::clone(request), chain.steps[k].clone());
                let step_until = until.min(started + step.timeout());
                (k, step_until, spawn_step(move || runner.run_step(&request, &step)))
            })
            .collect();
        let mut failed = false;
        let mut hit_deadline = false;
        for (k, step_until, rx) in pending {
            match wait(&rx, step_until) {
                Waited::Done(Ok(fragment)) => {
                    record(trace, chain, k, started, StepOutcome::Ok, None);
                    fragments.push(fragment);
                }
                Waited::Done(Err(e)) => {
                    record(trace, chain, k, started, StepOutcome::Error, Some(e.code));
                    failed = true;
                }
                Waited::TimedOut => {
                    let code = if step_until >= until { DEADLINE } else { crate::adapters::TIMEOUT };
                    record(trace, chain, k, started, StepOutcome::Timeout, Some(code.to_string()));
                    hit_deadline |= step_until >= until;
                    failed = true;
                }
            }
        }
        if hit_deadline {
            return ChainResult::Deadline;
        }
        if failed {
            return ChainResult::Failed;
        }
        i = j;
    }

    let input = CompileInput {
        fragments,
        query: settings.query.clone(),
        budgets: settings.budgets,
        floors: settings.floors.clone(),
    };
    let started = Instant::now();
    let state = match compile_context(&input) {
        Ok(s) => s,
        Err(e) => {
            record(trace, chain, llm_index, started, StepOutcome::Error, Some(format!("COMPILE: {e}")));
            return ChainResult::Failed;
        }
    };
    *last_state = Some(state.clone());
    let prompt = match render_prompt(&state, &settings.query, &settings.budgets) {
        Ok(p) => p,
        Err(e) => {
            record(trace, chain, llm_index, started, StepOutcome::Error, Some(format!("RENDER: {e}")));
            return ChainResult::Failed;
        }
    };
    if Instant::now() >= until {
        return ChainResult::Deadline;
    }
    let step = chain.steps[llm_index].clone();
    let step_until = until.min(started + step.timeout());
    let rx = {
        let (runner, prompt) = (Arc::clone(runner), prompt.clone());
        spawn_step(move || runner.call_llm(&prompt, &step))
    };
    match wait(&rx, step_until) {
        Waited::Done(Ok(answer)) => {
            record(trace, chain, llm_index, started, StepOutcome::Ok, None);
            ChainResult::Answer(Execution {
                answer,
                chain_id: chain.chain_id.clone(),
                state,
                prompt,
                trace: Vec::new(),
            })
        }
        Waited::Done(Err(e)) => {
            record(trace, chain, llm_index, started, StepOutcome::Error, Some(e.code));
            ChainResult::Failed
        }
        Waited::TimedOut => {
            let at_deadline = step_until >= until;
            let code = if at_deadline { DEADLINE } else { crate::adapters::TIMEOUT };
            record(trace, chain, llm_index, started, StepOutcome::Timeout, Some(code.to_string()));
            if at_deadline {
                ChainResult::Deadline
            } else {
                ChainResult::Failed
            }
        }
    }
}
