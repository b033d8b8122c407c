//! Prompt-conditioned grounding over visual token grids.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapters::{Adapter, AdapterRequest, ErrorBody, ToolKind, PROTOCOL};
use crate::document::{line_confidence, Line, Quad, Word};
use crate::schema::{content_id, BoundingBox, ContextState, Entity, EntityKind, Provenance};

pub const DEFAULT_REGION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("temperature must be positive")]
    Temperature,
}

/// `rows × cols` token vectors in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualTokens {
    pub rows: usize,
    pub cols: usize,
    pub grid: Vec<Vec<f64>>,
    pub patch_size: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl VisualTokens {
    pub fn validate(&self) -> Result<usize, VisionError> {
        if self.grid.len() != self.rows * self.cols {
            return Err(VisionError::Dimension(format!(
                "{} tokens for a {}x{} grid",
                self.grid.len(),
                self.rows,
                self.cols
            )));
        }
        let dim = self.grid.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || self.grid.iter().any(|t| t.len() != dim) {
            return Err(VisionError::Dimension("token vectors must share a positive dimension".into()));
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    #[serde(default)]
    pub prompt: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

impl RelevanceMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }
}

/// Inclusive cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `s_k = σ(token_k · text / τ)`, row-major.
pub fn relevance_map(tokens: &VisualTokens, text: &TextEmbedding) -> Result<RelevanceMap, VisionError> {
    let dim = tokens.validate()?;
    if text.vector.len() != dim {
        return Err(VisionError::Dimension(format!("text dimension {} vs token dimension {dim}", text.vector.len())));
    }
    if !(text.temperature > 0.0) {
        return Err(VisionError::Temperature);
    }
    let scores = tokens
        .grid
        .iter()
        .map(|t| sigmoid(t.iter().zip(&text.vector).map(|(a, b)| a * b).sum::<f64>() / text.temperature))
        .collect();
    Ok(RelevanceMap {
        rows: tokens.rows,
        cols: tokens.cols,
        scores,
    })
}

/// Components pair a bounding box with the peak score inside it.
pub fn group_regions_scored(map: &RelevanceMap, threshold: f64) -> Vec<(GridBox, f64)> {
    let (rows, cols) = (map.rows, map.cols);
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || map.scores[start] < threshold {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut b = GridBox {
            row_min: usize::MAX,
            col_min: usize::MAX,
            row_max: 0,
            col_max: 0,
        };
        let mut peak = f64::NEG_INFINITY;
        while let Some(k) = queue.pop_front() {
            let (r, c) = (k / cols, k % cols);
            b.row_min = b.row_min.min(r);
            b.col_min = b.col_min.min(c);
            b.row_max = b.row_max.max(r);
            b.col_max = b.col_max.max(c);
            peak = peak.max(map.scores[k]);
            let mut visit = |nr: usize, nc: usize| {
                let nk = nr * cols + nc;
                if !seen[nk] && map.scores[nk] >= threshold {
                    seen[nk] = true;
                    queue.push_back(nk);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < rows {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < cols {
                visit(r, c + 1);
            }
        }
        out.push((b, peak));
    }
    out.sort_by_key(|(b, _)| (b.row_min, b.col_min, b.row_max, b.col_max));
    out
}

/// Bounding boxes of the 4-connected components of cells scoring at least
/// `threshold`, sorted by `(row_min, col_min)`.
pub fn group_regions(map: &RelevanceMap, threshold: f64) -> Vec<GridBox> {
    group_regions_scored(map, threshold).into_iter().map(|(b, _)| b).collect()
}

pub fn grid_to_pixels(b: &GridBox, tokens: &VisualTokens) -> BoundingBox {
    let p = tokens.patch_size;
    BoundingBox::new(
        (b.col_min as f64 * p).min(tokens.image_width),
        (b.row_min as f64 * p).min(tokens.image_height),
        ((b.col_max + 1) as f64 * p).min(tokens.image_width),
        ((b.row_max + 1) as f64 * p).min(tokens.image_height),
    )
}

/// One `segment_mask` call for all boxes of an image; handles come back
/// aligned with the input.
pub fn refine_masks(adapter: &Adapter, boxes: &[BoundingBox], image_ref: &Provenance) -> Result<Vec<String>, ErrorBody> {
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let request = AdapterRequest::new(
        content_id("mask", &[&image_ref.content_hash, &boxes.len().to_string()]),
        ToolKind::SegmentMask,
        "segment_mask",
        json!({
            "image": {"source_id": image_ref.source_id, "sha256": image_ref.content_hash},
            "boxes": boxes,
        }),
    );
    let reply = adapter.invoke(request).outcome?;
    let masks: Vec<String> = reply
        .get("masks")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|m| m.as_str().map(str::to_string)).collect())
        .ok_or_else(|| ErrorBody {
            code: PROTOCOL.into(),
            message: "reply lacks a masks array of strings".into(),
        })?;
    if masks.len() != boxes.len() {
        return Err(ErrorBody {
            code: PROTOCOL.into(),
            message: format!("{} masks for {} boxes", masks.len(), boxes.len()),
        });
    }
    Ok(masks)
}

/// Groups detector word boxes into lines by vertical overlap, each line read
/// left to right.
pub fn words_to_lines(words: &[Word]) -> Vec<Line> {
    let mut sorted: Vec<&Word> = words.iter().filter(|w| w.bbox.area() > 0.0 && !w.text.trim().is_empty()).collect();
    sorted.sort_by(|a, b| {
        (a.bbox.y_min + a.bbox.y_max)
            .total_cmp(&(b.bbox.y_min + b.bbox.y_max))
            .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
    });
    let mut rows: Vec<(BoundingBox, Vec<&Word>)> = Vec::new();
    for w in sorted {
        let joins = rows.last().is_some_and(|(b, _)| {
            let overlap = (b.y_max.min(w.bbox.y_max) - b.y_min.max(w.bbox.y_min)).max(0.0);
            overlap > 0.5 * b.height().min(w.bbox.height())
        });
        if joins {
            let (b, ws) = rows.last_mut().expect("checked");
            *b = b.union(&w.bbox);
            ws.push(w);
        } else {
            rows.push((w.bbox, vec![w]));
        }
    }
    rows.into_iter()
        .map(|(b, mut ws)| {
            ws.sort_by(|a, b| a.bbox.x_min.total_cmp(&b.bbox.x_min));
            let words: Vec<Word> = ws.into_iter().cloned().collect();
            let text = words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
            let confidence = line_confidence(&words).unwrap_or(0.0);
            Line {
                text,
                quad: Quad::from_box(&b).expect("positive word boxes"),
                bbox: b,
                confidence,
                font_height: b.height(),
                words,
            }
        })
        .collect()
}

/// One bounding-region entity per box, labelled with the prompt. Mask
/// handles stay outside the state.
pub fn regions_to_state(regions: &[(BoundingBox, f64)], prompt: &str, source: &Provenance) -> ContextState {
    let mut state = ContextState::new();
    for (i, (b, score)) in regions.iter().enumerate() {
        let prov = source
            .clone()
            .with_locator(format!("box={:.0},{:.0},{:.0},{:.0}", b.x_min, b.y_min, b.x_max, b.y_max));
        let id = content_id("reg", &[&source.source_id, prompt, &i.to_string()]);
        state.entities.push(
            Entity::new(id, EntityKind::BoundingRegion, score.clamp(0.0, 1.0), prov)
                .with_text(prompt)
                .with_region(*b),
        );
    }
    state.reindex_provenance();
    state
}
