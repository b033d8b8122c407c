//! Segment indexes (code, docs, web) with Okapi BM25 scoring, and query
//! routing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::document::PageSegment;
use crate::ingress::Modality;
use crate::schema::{content_id, count_tokens, ContextState, Observation, Provenance};
use crate::web;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 5;
/// Largest segment produced when chunking plain files.
pub const SEGMENT_TOKENS: usize = 120;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("duplicate segment id {0:?}")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("index file is not a valid dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Code,
    Docs,
    Web,
}

impl IndexKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            IndexKind::Code => "code",
            IndexKind::Docs => "docs",
            IndexKind::Web => "web",
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "code" => Ok(IndexKind::Code),
            "docs" => Ok(IndexKind::Docs),
            "web" => Ok(IndexKind::Web),
            other => Err(format!("unknown index kind {other:?}; expected code, docs or web")),
        }
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentIndex {
    pub index_kind: IndexKind,
    /// term → (segment id, term frequency), sorted by segment id.
    pub postings: BTreeMap<String, Vec<(String, u32)>>,
    /// segment id → length in terms. Segments without terms are not listed.
    pub doc_stats: BTreeMap<String, u32>,
    pub segment_store: BTreeMap<String, PageSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub segment_id: String,
    pub score: f64,
    pub provenance: Provenance,
}

pub fn build_index(kind: IndexKind, segments: &[PageSegment]) -> Result<SegmentIndex, RetrievalError> {
    let mut index = SegmentIndex {
        index_kind: kind,
        postings: BTreeMap::new(),
        doc_stats: BTreeMap::new(),
        segment_store: BTreeMap::new(),
    };
    for seg in segments {
        if index.segment_store.contains_key(&seg.segment_id) {
            return Err(RetrievalError::DuplicateId(seg.segment_id.clone()));
        }
        index.segment_store.insert(seg.segment_id.clone(), seg.clone());
        let ts = terms(&seg.text);
        if ts.is_empty() {
            continue;
        }
        index.doc_stats.insert(seg.segment_id.clone(), ts.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in ts {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            index.postings.entry(t).or_default().push((seg.segment_id.clone(), n));
        }
    }
    for list in index.postings.values_mut() {
        list.sort();
    }
    Ok(index)
}

impl SegmentIndex {
    pub fn len(&self) -> usize {
        self.segment_store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_store.is_empty()
    }

    fn avg_len(&self) -> f64 {
        if self.doc_stats.is_empty() {
            return 0.0;
        }
        self.doc_stats.values().map(|&l| l as f64).sum::<f64>() / self.doc_stats.len() as f64
    }

    pub fn dump(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("index holds plain data")
    }

    pub fn load(bytes: &[u8]) -> Result<Self, RetrievalError> {
        canonical::from_canonical_slice(bytes).map_err(|e| RetrievalError::Dump(e.to_string()))
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RetrievalError> {
        std::fs::write(path, self.dump()).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = std::fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&bytes)
    }
}

/// Lucene's non-negative variant: `ln(1 + (N − n + 0.5)/(n + 0.5))`.
pub fn idf(n_docs: usize, doc_freq: usize) -> f64 {
    (1.0 + (n_docs as f64 - doc_freq as f64 + 0.5) / (doc_freq as f64 + 0.5)).ln()
}

/// BM25 over the distinct query terms; top `k` by `(score desc, id asc)`.
pub fn search(index: &SegmentIndex, query: &str, k: usize) -> Result<Vec<RankedHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let qterms: BTreeSet<String> = terms(query).into_iter().collect();
    let n = index.doc_stats.len();
    let avg = index.avg_len();
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for t in &qterms {
        let Some(list) = index.postings.get(t) else { continue };
        let w = idf(n, list.len());
        for (id, tf) in list {
            let len = index.doc_stats[id] as f64;
            let tf = *tf as f64;
            let s = w * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len / avg));
            *scores.entry(id.as_str()).or_default() += s;
        }
    }
    let mut hits: Vec<RankedHit> = scores
        .into_iter()
        .map(|(id, score)| RankedHit {
            segment_id: id.to_string(),
            score,
            provenance: index.segment_store[id].provenance.clone(),
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.segment_id.cmp(&b.segment_id)));
    hits.truncate(k);
    Ok(hits)
}

/// Where a query goes: a standing index or the per-request document index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexTarget {
    Standing(IndexKind),
    Request,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub routes: BTreeMap<String, Vec<IndexKind>>,
    pub default: Vec<IndexKind>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        Self {
            routes: BTreeMap::from([
                ("code".to_string(), vec![IndexKind::Code]),
                ("tool_usage".to_string(), vec![IndexKind::Docs]),
                ("general".to_string(), vec![IndexKind::Web]),
            ]),
            default: vec![IndexKind::Web],
        }
    }
}

pub fn route_query(table: &RoutingTable, task_type: &str, modalities: &BTreeSet<Modality>) -> Vec<IndexTarget> {
    let mut out: Vec<IndexTarget> = table
        .routes
        .get(task_type)
        .unwrap_or(&table.default)
        .iter()
        .map(|k| IndexTarget::Standing(*k))
        .collect();
    if modalities.contains(&Modality::Document) || modalities.contains(&Modality::Url) {
        out.push(IndexTarget::Request);
    }
    out
}

/// Retrieved segments as observations.
pub fn hits_to_state(index: &SegmentIndex, hits: &[RankedHit]) -> ContextState {
    let mut state = ContextState::new();
    for h in hits {
        let seg = &index.segment_store[&h.segment_id];
        state.observations.push(Observation {
            id: content_id("hit", &[index.index_kind.as_str(), &h.segment_id]),
            text: seg.text.clone(),
            score: 0.0,
            provenance: vec![h.provenance.clone()],
        });
    }
    state.reindex_provenance();
    state
}

/// Splits one file into segments. Markup files go through the web
/// extractor, one segment per block; anything else is cut at blank lines
/// and packed up to [`SEGMENT_TOKENS`].
pub fn segments_from_file(rel_path: &str, bytes: &[u8], timestamp: DateTime<Utc>) -> Vec<PageSegment> {
    let text = String::from_utf8_lossy(bytes);
    let source = Provenance::for_bytes(format!("file:{rel_path}"), bytes, timestamp);
    let lower = rel_path.to_ascii_lowercase();
    let chunks: Vec<String> = if lower.ends_with(".html") || lower.ends_with(".htm") {
        match web::strip_boilerplate(&text).and_then(|s| web::extract_blocks(&s)) {
            Ok(blocks) => blocks.into_iter().map(|b| b.text).collect(),
            Err(_) => pack_paragraphs(&text),
        }
    } else {
        pack_paragraphs(&text)
    };
    chunks
        .into_iter()
        .filter(|c| !c.trim().is_empty())
        .enumerate()
        .map(|(i, chunk)| PageSegment {
            segment_id: format!("{rel_path}#{i}"),
            page_index: 0,
            block_index: i,
            oversize: count_tokens(&chunk) > SEGMENT_TOKENS,
            text: chunk,
            provenance: source.clone().with_locator(format!("segment={i}")),
        })
        .collect()
}

fn pack_paragraphs(text: &str) -> Vec<String> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for para in text.split("\n\n").map(|p| p.trim_matches('\n')).filter(|p| !p.trim().is_empty()) {
        let t = count_tokens(para);
        match out.last_mut() {
            Some((buf, used)) if *used + t <= SEGMENT_TOKENS => {
                buf.push_str("\n\n");
                buf.push_str(para);
                *used += t;
            }
            _ => out.push((para.to_string(), t)),
        }
    }
    out.into_iter().map(|(s, _)| s).collect()
}

/// Indexes every regular file under `dir`, visited in sorted path order.
pub fn build_index_from_dir(kind: IndexKind, dir: &Path, timestamp: DateTime<Utc>) -> Result<SegmentIndex, RetrievalError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut segments = Vec::new();
    for rel in files {
        let path = dir.join(&rel);
        let bytes = std::fs::read(&path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        segments.extend(segments_from_file(&rel, &bytes, timestamp));
    }
    build_index(kind, &segments)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: dir.display().to_string(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.is_file() {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
    Ok(())
}
