//! Step execution against the configured adapters.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::Shared;
use crate::adapters::{encode_binary, Adapter, AdapterRequest, ErrorBody, ToolKind, PROTOCOL, UNAVAILABLE};
use crate::audio::{
    argmax_language, assign_speakers, build_transcript_state, cluster_speakers, vad_spans, SpeakerSegment, SpeechSpan,
    Utterance, VadParams, Waveform,
};
use crate::controller::{Primitive, PrimitiveKind, StepError, StepRunner};
use crate::document::{
    lines_to_state, order_pages, segment_document, should_escalate_extraction, validate_extraction, DocumentFixture,
    Line, PageSegment, Word,
};
use crate::ingress::{Attachment, MediaKind, Modality, Request};
use crate::retrieval::{build_index, hits_to_state, route_query, search, segments_from_file, IndexKind, IndexTarget};
use crate::schema::{content_id, count_tokens, ContextState, Observation, Provenance};
use crate::vision::{grid_to_pixels, group_regions_scored, refine_masks, regions_to_state, relevance_map, words_to_lines, TextEmbedding, VisualTokens};
use crate::web::{extract_blocks, page_to_state, strip_boilerplate};

pub const NO_CODE: &str = "NO_CODE";
pub const BAD_INPUT: &str = "BAD_INPUT";

/// A document after OCR and reading-order reconstruction.
struct DocRead {
    pages: Vec<(usize, Vec<Line>)>,
    segments: Vec<PageSegment>,
    source: Provenance,
}

/// Runs one request's steps. Documents and rendered pages are memoized so
/// perception and retrieval steps share adapter results.
pub(crate) struct PipelineRunner {
    shared: Arc<Shared>,
    request_id: String,
    task: String,
    modalities: BTreeSet<Modality>,
    timestamp: DateTime<Utc>,
    calls: AtomicU64,
    documents: Mutex<BTreeMap<String, Arc<DocRead>>>,
    rendered: Mutex<BTreeMap<String, Arc<String>>>,
    flags: Mutex<BTreeSet<String>>,
}

fn adapter_error(e: ErrorBody) -> StepError {
    StepError::new(&e.code, e.message)
}

fn protocol(msg: impl Into<String>) -> StepError {
    StepError::new(PROTOCOL, msg)
}

fn decode<T: DeserializeOwned>(v: Value, what: &str) -> Result<T, StepError> {
    serde_json::from_value(v).map_err(|e| protocol(format!("{what}: {e}")))
}

fn is_markup(att: &Attachment) -> bool {
    let name = att.name.to_ascii_lowercase();
    att.media_kind == MediaKind::Html
        || (att.media_kind == MediaKind::PlainText && (name.ends_with(".html") || name.ends_with(".htm")))
}

fn extend(into: &mut ContextState, from: ContextState) {
    into.observations.extend(from.observations);
    into.entities.extend(from.entities);
    into.relations.extend(from.relations);
    into.provenance_index.extend(from.provenance_index);
}

/// Text blocks of a markup page as segments, one per block.
fn markup_segments(markup: &str, source: &Provenance) -> Result<Vec<PageSegment>, StepError> {
    let blocks = strip_boilerplate(markup)
        .and_then(|s| extract_blocks(&s))
        .map_err(|e| StepError::new(BAD_INPUT, format!("{}: {e}", source.source_id)))?;
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| PageSegment {
            segment_id: format!("b{i}"),
            page_index: 0,
            block_index: i,
            oversize: false,
            provenance: source
                .clone()
                .with_locator(format!("chars={}-{}", b.source_offset.start, b.source_offset.end)),
            text: b.text,
        })
        .collect())
}

/// The first fenced code block of `text`, with its language tag.
pub fn fenced_code(text: &str) -> Option<(String, String)> {
    let re = Regex::new(r"(?s)```(?:([A-Za-z0-9_+.-]*)[ \t]*\n)?(.*?)```").expect("static pattern");
    re.captures(text)
        .map(|c| (c.get(1).map_or("", |m| m.as_str()).to_string(), c[2].to_string()))
}

/// Cuts `s` to at most `max` bytes on a character boundary.
pub fn truncate_utf8(s: &str, max: usize) -> (&str, bool) {
    if s.len() <= max {
        return (s, false);
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    (&s[..end], true)
}

impl PipelineRunner {
    pub(crate) fn new(
        shared: Arc<Shared>,
        request_id: String,
        task: String,
        modalities: BTreeSet<Modality>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            shared,
            request_id,
            task,
            modalities,
            timestamp,
            calls: AtomicU64::new(0),
            documents: Mutex::new(BTreeMap::new()),
            rendered: Mutex::new(BTreeMap::new()),
            flags: Mutex::new(BTreeSet::new()),
        }
    }

    pub(crate) fn flags(&self) -> BTreeSet<String> {
        self.flags.lock().expect("flags lock").clone()
    }

    fn flag(&self, f: impl Into<String>) {
        self.flags.lock().expect("flags lock").insert(f.into());
    }

    fn next_id(&self, op: &str) -> String {
        let n = self.calls.fetch_add(1, Ordering::Relaxed);
        format!("{}.{op}.{n}", self.request_id)
    }

    /// The adapter named by the step's `key` param, else the first one
    /// serving `tool`.
    fn adapter(&self, step: &Primitive, key: &str, tool: ToolKind) -> Result<&Arc<Adapter>, StepError> {
        match step.params.get(key).and_then(Value::as_str) {
            Some(id) => self
                .shared
                .registry
                .get(id)
                .ok_or_else(|| StepError::new(UNAVAILABLE, format!("adapter {id:?} is not registered"))),
            None => self
                .shared
                .registry
                .for_tool(tool)
                .ok_or_else(|| StepError::new(UNAVAILABLE, format!("no {} adapter is registered", tool.as_str()))),
        }
    }

    fn call(&self, adapter: &Adapter, op: &str, payload: Value) -> Result<Value, StepError> {
        let tool = adapter.descriptor().tool;
        adapter
            .invoke(AdapterRequest::new(self.next_id(op), tool, op, payload))
            .outcome
            .map_err(adapter_error)
    }

    fn call_batched(&self, adapter: &Adapter, op: &str, payloads: Vec<Value>) -> Result<Vec<Value>, StepError> {
        let tool = adapter.descriptor().tool;
        let requests = payloads
            .into_iter()
            .map(|p| AdapterRequest::new(self.next_id(op), tool, op, p))
            .collect();
        adapter
            .invoke_batched(requests)
            .into_iter()
            .map(|r| r.outcome.map_err(adapter_error))
            .collect()
    }

    fn provenance(&self, att: &Attachment) -> Provenance {
        Provenance::for_bytes(att.name.clone(), &att.payload, self.timestamp)
    }

    fn step_media(step: &Primitive) -> Option<MediaKind> {
        match step.params.get("media").and_then(Value::as_str) {
            Some("pdf") | Some("document") => Some(MediaKind::Pdf),
            Some("audio") => Some(MediaKind::Audio),
            Some("image") => Some(MediaKind::Image),
            _ => None,
        }
    }

    fn perception(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError> {
        let only = Self::step_media(step);
        let mut state = ContextState::new();
        for att in &request.attachments {
            if only.is_some_and(|k| k != att.media_kind) {
                continue;
            }
            let part = match att.media_kind {
                MediaKind::Pdf => self.document_state(request, att, step)?,
                MediaKind::Audio => self.audio_state(att, step)?,
                MediaKind::Image => self.image_state(request, att, step)?,
                _ => continue,
            };
            extend(&mut state, part);
        }
        state.reindex_provenance();
        Ok(state)
    }

    fn read_document(&self, att: &Attachment, step: &Primitive) -> Result<Arc<DocRead>, StepError> {
        if let Some(d) = self.documents.lock().expect("documents lock").get(&att.name) {
            return Ok(Arc::clone(d));
        }
        let source = self.provenance(att);
        let payload = json!({
            "sha256": source.content_hash,
            "name": att.name,
            "document": encode_binary(&att.payload),
        });
        let primary: DocumentFixture = decode(
            self.call(self.adapter(step, "ocr", ToolKind::Ocr)?, "recognize", payload.clone())?,
            "ocr reply",
        )?;
        let secondary: Option<DocumentFixture> = match step.params.get("secondary_ocr").and_then(Value::as_str) {
            Some(_) => Some(decode(
                self.call(self.adapter(step, "secondary_ocr", ToolKind::Ocr)?, "recognize", payload)?,
                "secondary ocr reply",
            )?),
            None => None,
        };
        let params = &self.shared.config.document;
        let pages = order_pages(&primary, secondary.as_ref(), params).map_err(|e| protocol(format!("ocr reply: {e}")))?;
        let segments = segment_document(&pages, params.max_block_tokens, &source);
        if segments.iter().any(|s| s.oversize) {
            self.flag(format!("oversize_block:{}", att.name));
        }
        let read = Arc::new(DocRead { pages, segments, source });
        self.documents
            .lock()
            .expect("documents lock")
            .insert(att.name.clone(), Arc::clone(&read));
        Ok(read)
    }

    fn document_state(&self, request: &Request, att: &Attachment, step: &Primitive) -> Result<ContextState, StepError> {
        let doc = self.read_document(att, step)?;
        let mut state = lines_to_state(&doc.pages, &doc.segments, &doc.source);
        let template = request.overrides.get("extract_template");
        let lines: Vec<Line> = doc.pages.iter().flat_map(|(_, ls)| ls.iter().cloned()).collect();
        let threshold = self.shared.config.document.ocr_threshold;
        if !should_escalate_extraction(&lines, threshold, template.is_some()) {
            return Ok(state);
        }
        let Ok(classifier) = self.adapter(step, "extractor", ToolKind::Classify) else {
            self.flag("extraction_unavailable");
            return Ok(state);
        };
        let text = lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n");
        // extraction refines OCR output; failing it keeps the OCR state
        let reply = match self.call(
            classifier,
            "extract_structured",
            json!({"sha256": doc.source.content_hash, "text": text, "template": template.cloned().unwrap_or(Value::Null)}),
        ) {
            Ok(r) => r,
            Err(e) => {
                self.flag(format!("extraction_failed:{}", e.code));
                return Ok(state);
            }
        };
        let fields = reply.get("fields").cloned().unwrap_or(Value::Null);
        if let Some(t) = template {
            if validate_extraction(t, &fields).is_err() {
                self.flag("extraction_rejected");
                return Ok(state);
            }
        }
        let Value::Object(map) = fields else {
            self.flag(format!("extraction_failed:{PROTOCOL}"));
            return Ok(state);
        };
        let prov = doc.source.clone().with_locator("extraction");
        for (key, value) in map {
            let shown = match &value {
                Value::String(s) => s.clone(),
                other => crate::canonical::value_to_canonical(other),
            };
            let text = format!("{key}: {shown}");
            state.observations.push(Observation {
                id: content_id("field", &[&doc.source.source_id, &key]),
                text,
                score: 0.0,
                provenance: vec![prov.clone()],
            });
        }
        state.reindex_provenance();
        Ok(state)
    }

    fn audio_state(&self, att: &Attachment, step: &Primitive) -> Result<ContextState, StepError> {
        let settings = &self.shared.config.audio;
        let wave = Waveform::from_wav_bytes(&att.payload).map_err(|e| StepError::new(BAD_INPUT, format!("{}: {e}", att.name)))?;
        let source = self.provenance(att);
        let sha = source.content_hash.clone();

        let reply = self.call(
            self.adapter(step, "vad", ToolKind::Vad)?,
            "vad",
            json!({
                "sha256": sha,
                "audio": encode_binary(&att.payload),
                "sample_rate": wave.sample_rate,
                "frame_ms": settings.frame_ms,
                "energy_threshold": settings.energy_threshold,
            }),
        )?;
        let probs: Vec<f64> = decode(reply.get("probs").cloned().unwrap_or(Value::Null), "vad reply probs")?;
        let params = VadParams {
            threshold: settings.vad_threshold,
            merge_gap_frames: settings.merge_gap_frames,
            min_len_frames: settings.min_len_frames,
        };
        let spans = vad_spans(&probs, settings.frame_ms / 1000.0, &params);

        let chunk = |span: &SpeechSpan| -> Value {
            let rate = wave.sample_rate as f64;
            let a = ((span.start_s * rate) as usize).min(wave.samples.len());
            let b = ((span.end_s * rate).ceil() as usize).clamp(a, wave.samples.len());
            match Waveform::new(wave.samples[a..b].to_vec(), wave.sample_rate) {
                Ok(w) => encode_binary(&w.to_wav_bytes()),
                Err(_) => Value::Null,
            }
        };

        let mut windows = Vec::new();
        for span in &spans {
            let mut t = span.start_s;
            while t < span.end_s {
                let end = (t + settings.embed_window_s).min(span.end_s);
                windows.push(SpeechSpan::new(t, end));
                t = end;
            }
        }
        let segments = match self.adapter(step, "diarize", ToolKind::DiarizeEmbed) {
            Ok(embedder) if !windows.is_empty() => {
                let payloads = windows
                    .iter()
                    .enumerate()
                    .map(|(i, w)| json!({"sha256": sha, "window": i, "start_s": w.start_s, "end_s": w.end_s, "audio": chunk(w)}))
                    .collect();
                let replies = self.call_batched(embedder, "embed", payloads)?;
                let mut segs = Vec::with_capacity(windows.len());
                for (w, r) in windows.iter().zip(replies) {
                    let emb: Vec<f64> = decode(r.get("embedding").cloned().unwrap_or(Value::Null), "embed reply")?;
                    segs.push(SpeakerSegment::new(*w, emb).map_err(|e| protocol(format!("embed reply: {e}")))?);
                }
                Some(cluster_speakers(&segs, settings.cluster_stop))
            }
            Ok(_) => Some(Vec::new()),
            Err(_) => {
                self.flag("diarization_unavailable");
                None
            }
        };

        let asr = self.adapter(step, "asr", ToolKind::Asr)?;
        let payloads = spans
            .iter()
            .enumerate()
            .map(|(i, s)| json!({"sha256": sha, "span": i, "start_s": s.start_s, "end_s": s.end_s, "audio": chunk(s)}))
            .collect();
        let replies = if spans.is_empty() { Vec::new() } else { self.call_batched(asr, "transcribe", payloads)? };
        let mut utterances = Vec::with_capacity(spans.len());
        for (span, r) in spans.iter().zip(replies) {
            let text = r
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("transcribe reply lacks text"))?;
            let posterior: BTreeMap<String, f64> = match r.get("language") {
                Some(v) if !v.is_null() => decode(v.clone(), "transcribe reply language")?,
                _ => BTreeMap::new(),
            };
            utterances.push(Utterance {
                span: *span,
                text: text.to_string(),
                language: argmax_language(&posterior),
                speaker: None,
            });
        }
        if let Some(segs) = segments {
            utterances = assign_speakers(&utterances, &segs);
        }
        build_transcript_state(&utterances, &source).map_err(|e| protocol(e.to_string()))
    }

    fn image_state(&self, request: &Request, att: &Attachment, step: &Primitive) -> Result<ContextState, StepError> {
        let source = self.provenance(att);
        let prompt = request.query();
        let reply = self.call(
            self.adapter(step, "detect", ToolKind::Detect)?,
            "embed",
            json!({"sha256": source.content_hash, "image": encode_binary(&att.payload), "prompt": prompt}),
        )?;
        let tokens: VisualTokens = decode(reply.get("tokens").cloned().unwrap_or(Value::Null), "detect reply tokens")?;
        let text: TextEmbedding = decode(reply.get("text").cloned().unwrap_or(Value::Null), "detect reply text")?;
        let map = relevance_map(&tokens, &text).map_err(|e| protocol(format!("detect reply: {e}")))?;
        let threshold = step
            .params
            .get("region_threshold")
            .and_then(Value::as_f64)
            .unwrap_or(self.shared.config.vision.region_threshold);
        let regions: Vec<_> = group_regions_scored(&map, threshold)
            .into_iter()
            .map(|(g, peak)| (grid_to_pixels(&g, &tokens), peak))
            .collect();
        if self.shared.config.vision.refine_masks && !regions.is_empty() {
            let masker = self.adapter(step, "segment_mask", ToolKind::SegmentMask)?;
            let boxes: Vec<_> = regions.iter().map(|(b, _)| *b).collect();
            // handles stay out of the context; only success matters here
            refine_masks(masker, &boxes, &source).map_err(adapter_error)?;
        }
        let mut state = regions_to_state(&regions, prompt, &source);
        let words: Vec<Word> = match reply.get("words") {
            Some(v) if !v.is_null() => decode(v.clone(), "detect reply words")?,
            _ => Vec::new(),
        };
        if !words.is_empty() {
            let pages = vec![(0, words_to_lines(&words))];
            let segments = segment_document(&pages, self.shared.config.document.max_block_tokens, &source);
            extend(&mut state, lines_to_state(&pages, &segments, &source));
            state.reindex_provenance();
        }
        Ok(state)
    }

    fn render(&self, url: &str, step: &Primitive) -> Result<Arc<String>, StepError> {
        if let Some(html) = self.rendered.lock().expect("rendered lock").get(url) {
            return Ok(Arc::clone(html));
        }
        let reply = self.call(self.adapter(step, "render", ToolKind::RenderPage)?, "render", json!({"url": url}))?;
        let html = reply
            .get("html")
            .and_then(Value::as_str)
            .ok_or_else(|| protocol("render reply lacks html"))?;
        let html = Arc::new(html.to_string());
        self.rendered
            .lock()
            .expect("rendered lock")
            .insert(url.to_string(), Arc::clone(&html));
        Ok(html)
    }

    fn fetch_parse(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError> {
        let mut state = ContextState::new();
        for att in &request.attachments {
            if is_markup(att) {
                let markup = String::from_utf8_lossy(&att.payload);
                let (_, part) = page_to_state(&markup, &self.provenance(att))
                    .map_err(|e| StepError::new(BAD_INPUT, format!("{}: {e}", att.name)))?;
                extend(&mut state, part);
            } else if att.media_kind == MediaKind::PlainText {
                for seg in segments_from_file(&att.name, &att.payload, self.timestamp) {
                    state.observations.push(Observation {
                        id: content_id("txt", &[&seg.provenance.source_id, &seg.segment_id]),
                        text: seg.text,
                        score: 0.0,
                        provenance: vec![seg.provenance],
                    });
                }
            }
        }
        for url in &request.declared_urls {
            let html = self.render(url, step)?;
            let source = Provenance::for_bytes(url.clone(), html.as_bytes(), self.timestamp);
            let (_, part) = page_to_state(&html, &source).map_err(|e| StepError::new(BAD_INPUT, format!("{url}: {e}")))?;
            extend(&mut state, part);
        }
        state.reindex_provenance();
        Ok(state)
    }

    /// Segments of everything the request carried, ids prefixed by source.
    fn request_segments(&self, request: &Request, step: &Primitive) -> Result<Vec<PageSegment>, StepError> {
        fn prefixed(name: &str, segs: Vec<PageSegment>) -> Vec<PageSegment> {
            segs.into_iter()
                .map(|mut s| {
                    s.segment_id = format!("{name}#{}", s.segment_id);
                    s
                })
                .collect()
        }
        let mut out = Vec::new();
        for att in &request.attachments {
            if att.media_kind == MediaKind::Pdf {
                let doc = self.read_document(att, step)?;
                out.extend(prefixed(&att.name, doc.segments.clone()));
            } else if is_markup(att) {
                let markup = String::from_utf8_lossy(&att.payload);
                out.extend(prefixed(&att.name, markup_segments(&markup, &self.provenance(att))?));
            } else if att.media_kind == MediaKind::PlainText {
                out.extend(segments_from_file(&att.name, &att.payload, self.timestamp));
            }
        }
        for url in &request.declared_urls {
            let html = self.render(url, step)?;
            let source = Provenance::for_bytes(url.clone(), html.as_bytes(), self.timestamp);
            out.extend(prefixed(url, markup_segments(&html, &source)?));
        }
        Ok(out)
    }

    fn query_index(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError> {
        let targets = match step.params.get("index").and_then(Value::as_str) {
            Some("request") => vec![IndexTarget::Request],
            Some(kind) => vec![IndexTarget::Standing(
                kind.parse::<IndexKind>().map_err(|e| StepError::new(BAD_INPUT, e))?,
            )],
            None => route_query(&self.shared.config.routing, &self.task, &self.modalities),
        };
        let k = step
            .params
            .get("top_k")
            .and_then(Value::as_u64)
            .map(|k| k as usize)
            .unwrap_or(self.shared.config.top_k);
        let query = request.query();
        let mut state = ContextState::new();
        for target in targets {
            match target {
                IndexTarget::Standing(kind) => {
                    let Some(index) = self.shared.indexes.get(&kind) else {
                        continue;
                    };
                    let hits = search(index, query, k).map_err(|e| StepError::new(BAD_INPUT, e.to_string()))?;
                    extend(&mut state, hits_to_state(index, &hits));
                }
                IndexTarget::Request => {
                    let segments = self.request_segments(request, step)?;
                    if segments.is_empty() {
                        continue;
                    }
                    let index = build_index(IndexKind::Docs, &segments).map_err(|e| StepError::new(BAD_INPUT, e.to_string()))?;
                    let hits = search(&index, query, k).map_err(|e| StepError::new(BAD_INPUT, e.to_string()))?;
                    extend(&mut state, hits_to_state(&index, &hits));
                }
            }
        }
        state.reindex_provenance();
        Ok(state)
    }

    fn sandbox(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError> {
        let (language, code) = fenced_code(request.query()).ok_or_else(|| StepError::new(NO_CODE, "query has no fenced code block"))?;
        let limits = self.shared.config.sandbox;
        let reply = self.call(
            self.adapter(step, "sandbox", ToolKind::Sandbox)?,
            "run",
            json!({
                "code": code,
                "language": language,
                "limits": {"wall_ms": limits.wall_ms, "output_bytes": limits.output_bytes},
            }),
        )?;
        let stdout = reply.get("stdout").and_then(Value::as_str).unwrap_or("");
        let exit_status = reply
            .get("exit_status")
            .and_then(Value::as_i64)
            .ok_or_else(|| protocol("sandbox reply lacks exit_status"))?;
        let (kept, truncated) = truncate_utf8(stdout, limits.output_bytes);
        let mut locator = format!("exit_status={exit_status}");
        if truncated {
            locator.push_str(";truncated");
            self.flag("sandbox_output_truncated");
        }
        let text = if count_tokens(kept) == 0 {
            format!("exit_status {exit_status}, no output")
        } else {
            kept.to_string()
        };
        let mut state = ContextState::new();
        state.observations.push(Observation {
            id: content_id("run", &[&crate::sha256_hex(code.as_bytes())]),
            text,
            score: 0.0,
            provenance: vec![Provenance::for_bytes("sandbox", kept.as_bytes(), self.timestamp).with_locator(locator)],
        });
        state.reindex_provenance();
        Ok(state)
    }
}

impl StepRunner for PipelineRunner {
    fn run_step(&self, request: &Request, step: &Primitive) -> Result<ContextState, StepError> {
        match step.kind {
            PrimitiveKind::RunPerception => self.perception(request, step),
            PrimitiveKind::FetchParse => self.fetch_parse(request, step),
            PrimitiveKind::QueryIndex => self.query_index(request, step),
            PrimitiveKind::RunSandbox => self.sandbox(request, step),
            PrimitiveKind::CallLlm => Err(StepError::new(PROTOCOL, "call_llm is not a context step")),
        }
    }

    fn call_llm(&self, prompt: &str, _step: &Primitive) -> Result<String, StepError> {
        let llm = self
            .shared
            .registry
            .get(&self.shared.config.llm_adapter)
            .ok_or_else(|| StepError::new(UNAVAILABLE, "llm adapter is not registered"))?;
        let reply = self.call(llm, "complete", json!({"prompt": prompt}))?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| protocol("complete reply lacks text"))
    }
}
