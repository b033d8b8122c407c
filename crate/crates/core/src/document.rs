//! OCR post-processing: line geometry and confidence, reading order,
//! dual-recognizer merging, extraction escalation and page segmentation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema::{
    content_id, count_tokens, BoundingBox, ContextState, Entity, EntityKind, Observation, Provenance, Relation,
    RelationKind,
};

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("line has no words")]
    NoWords,
    #[error("line box has zero width")]
    ZeroWidth,
    #[error("line text is empty")]
    EmptyText,
    #[error("invalid quad: {0}")]
    BadQuad(String),
    #[error("extraction reply does not match template at {path}: {reason}")]
    Template { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Four corners in page pixels, clockwise on screen (y grows downward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 4]", into = "[[f64; 2]; 4]")]
pub struct Quad {
    pub corners: [Point; 4],
}

impl TryFrom<[[f64; 2]; 4]> for Quad {
    type Error = DocumentError;

    fn try_from(raw: [[f64; 2]; 4]) -> Result<Self, DocumentError> {
        Quad::new(raw.map(|[x, y]| Point { x, y }))
    }
}

impl From<Quad> for [[f64; 2]; 4] {
    fn from(q: Quad) -> Self {
        q.corners.map(|p| [p.x, p.y])
    }
}

impl Quad {
    pub fn new(corners: [Point; 4]) -> Result<Self, DocumentError> {
        let q = Quad { corners };
        if q.signed_area() <= 0.0 {
            return Err(DocumentError::BadQuad("corners must be clockwise with positive area".into()));
        }
        let c = &q.corners;
        if segments_cross(c[0], c[1], c[2], c[3]) || segments_cross(c[1], c[2], c[3], c[0]) {
            return Err(DocumentError::BadQuad("quad is self-intersecting".into()));
        }
        Ok(q)
    }

    pub fn from_box(b: &BoundingBox) -> Result<Self, DocumentError> {
        Quad::new([
            Point { x: b.x_min, y: b.y_min },
            Point { x: b.x_max, y: b.y_min },
            Point { x: b.x_max, y: b.y_max },
            Point { x: b.x_min, y: b.y_max },
        ])
    }

    /// Shoelace area; positive for clockwise order in y-down coordinates.
    pub fn signed_area(&self) -> f64 {
        let c = &self.corners;
        (0..4)
            .map(|i| {
                let (a, b) = (c[i], c[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let xs = self.corners.map(|p| p.x);
        let ys = self.corners.map(|p| p.y);
        BoundingBox::new(
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub text: String,
    pub quad: Quad,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub words: Vec<Word>,
    pub font_height: f64,
}

impl Line {
    /// Builds a line from recognizer output. Without words, word boxes are
    /// interpolated and inherit `confidence`; with words, the line confidence
    /// is their length-weighted mean.
    pub fn from_recognizer(
        text: impl Into<String>,
        quad: Quad,
        confidence: f64,
        words: Vec<Word>,
        font_height: Option<f64>,
    ) -> Result<Self, DocumentError> {
        let text = text.into();
        let bbox = quad.bounding_box();
        let words = if words.is_empty() {
            interpolate_word_boxes(&bbox, &text)?
                .into_iter()
                .map(|(t, b)| Word {
                    text: t,
                    bbox: b,
                    confidence,
                })
                .collect()
        } else {
            words
        };
        let confidence = line_confidence(&words)?;
        Ok(Line {
            text,
            quad,
            font_height: font_height.unwrap_or(bbox.height()),
            bbox,
            confidence,
            words,
        })
    }

    /// Axis-aligned line with interpolated words; handy for fixtures.
    pub fn simple(text: &str, bbox: BoundingBox, confidence: f64) -> Self {
        Line::from_recognizer(text, Quad::from_box(&bbox).expect("positive box"), confidence, Vec::new(), None)
            .expect("non-empty text and positive box")
    }

    fn center_y(&self) -> f64 {
        (self.bbox.y_min + self.bbox.y_max) / 2.0
    }
}

fn visible_len(text: &str) -> usize {
    text.chars().filter(|c| !c.is_whitespace()).count()
}

/// Σ len·conf / Σ len over words, lengths in non-whitespace characters.
pub fn line_confidence(words: &[Word]) -> Result<f64, DocumentError> {
    if words.is_empty() {
        return Err(DocumentError::NoWords);
    }
    let total: usize = words.iter().map(|w| visible_len(&w.text)).sum();
    if total == 0 {
        return Ok(words.iter().map(|w| w.confidence).sum::<f64>() / words.len() as f64);
    }
    let weighted: f64 = words.iter().map(|w| visible_len(&w.text) as f64 * w.confidence).sum();
    Ok((weighted / total as f64).clamp(0.0, 1.0))
}

/// Splits the line box proportionally to character positions (spaces
/// included); every word gets the full line height.
pub fn interpolate_word_boxes(line_box: &BoundingBox, line_text: &str) -> Result<Vec<(String, BoundingBox)>, DocumentError> {
    if line_text.trim().is_empty() {
        return Err(DocumentError::EmptyText);
    }
    if !(line_box.width() > 0.0) {
        return Err(DocumentError::ZeroWidth);
    }
    let chars: Vec<char> = line_text.chars().collect();
    let per_char = line_box.width() / chars.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let word: String = chars[start..i].iter().collect();
        let x_min = line_box.x_min + start as f64 * per_char;
        let x_max = if i == chars.len() {
            line_box.x_max
        } else {
            line_box.x_min + i as f64 * per_char
        };
        out.push((word, BoundingBox::new(x_min, line_box.y_min, x_max, line_box.y_max)));
    }
    Ok(out)
}

pub const EDGE_WEIGHT_OVERLAP: f64 = 0.5;
pub const EDGE_WEIGHT_DISTANCE: f64 = 0.3;
pub const EDGE_WEIGHT_FONT: f64 = 0.2;
pub const COLUMN_GAP_FRACTION: f64 = 0.25;

/// `0.5·vo + 0.3·(1 − hd) + 0.2·fh` with vertical overlap `vo` relative to the
/// shorter line, horizontal gap `hd` relative to page width and font ratio
/// `fh`. Zero-height lines score 0.
pub fn reading_edge_score(a: &Line, b: &Line, page_width: f64) -> f64 {
    let (ha, hb) = (a.bbox.height(), b.bbox.height());
    if ha <= 0.0 || hb <= 0.0 || page_width <= 0.0 {
        return 0.0;
    }
    let overlap = (a.bbox.y_max.min(b.bbox.y_max) - a.bbox.y_min.max(b.bbox.y_min)).max(0.0);
    let vo = (overlap / ha.min(hb)).clamp(0.0, 1.0);
    let gap = (a.bbox.x_min.max(b.bbox.x_min) - a.bbox.x_max.min(b.bbox.x_max)).max(0.0);
    let hd = (gap / page_width).clamp(0.0, 1.0);
    let (fa, fb) = (a.font_height, b.font_height);
    let fh = if fa <= 0.0 || fb <= 0.0 { 0.0 } else { fa.min(fb) / fa.max(fb) };
    EDGE_WEIGHT_OVERLAP * vo + EDGE_WEIGHT_DISTANCE * (1.0 - hd) + EDGE_WEIGHT_FONT * fh
}

/// Column index of every line: sorted `x_min` values split wherever the gap
/// exceeds a quarter of the page width.
pub fn column_keys(lines: &[Line], page_width: f64) -> Vec<usize> {
    let mut xs: Vec<f64> = lines.iter().map(|l| l.bbox.x_min).collect();
    xs.sort_by(f64::total_cmp);
    let mut starts = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        if i == 0 || x - xs[i - 1] > COLUMN_GAP_FRACTION * page_width {
            starts.push(x);
        }
    }
    lines
        .iter()
        .map(|l| starts.iter().rposition(|&s| s <= l.bbox.x_min).unwrap_or(0))
        .collect()
}

/// Reading order as a permutation of line indices.
///
/// Chains start at the unvisited line minimizing `(column, y_min)` and
/// greedily follow the best-scoring unvisited successor in the same column:
/// lines on the same row to the right, or lines on the nearest row below.
/// A chain ends when no successor scores at least `edge_threshold`.
pub fn reading_order_indices(lines: &[Line], page_width: f64, edge_threshold: f64) -> Vec<usize> {
    let n = lines.len();
    let cols = column_keys(lines, page_width);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let head = (0..n)
            .filter(|&i| !visited[i])
            .min_by(|&a, &b| {
                (cols[a], lines[a].bbox.y_min, lines[a].bbox.x_min, a)
                    .partial_cmp(&(cols[b], lines[b].bbox.y_min, lines[b].bbox.x_min, b))
                    .expect("finite coordinates")
            })
            .expect("an unvisited line remains");
        let mut cur = head;
        visited[cur] = true;
        order.push(cur);
        while let Some(next) = successor(lines, &cols, &visited, cur, page_width, edge_threshold) {
            visited[next] = true;
            order.push(next);
            cur = next;
        }
    }
    order
}

fn successor(
    lines: &[Line],
    cols: &[usize],
    visited: &[bool],
    cur: usize,
    page_width: f64,
    edge_threshold: f64,
) -> Option<usize> {
    let c = &lines[cur];
    let same_column = |i: usize| !visited[i] && cols[i] == cols[cur];
    let same_row_right = |l: &Line| {
        let overlap = (c.bbox.y_max.min(l.bbox.y_max) - c.bbox.y_min.max(l.bbox.y_min)).max(0.0);
        let shorter = c.bbox.height().min(l.bbox.height());
        shorter > 0.0 && overlap / shorter > 0.5 && l.bbox.x_min > c.bbox.x_min
    };
    let below = |l: &Line| l.center_y() > c.center_y() && !same_row_right(l);

    let mut candidates: Vec<usize> = (0..lines.len())
        .filter(|&i| same_column(i) && same_row_right(&lines[i]))
        .collect();
    // only the nearest row below competes, so tall headings are not skipped
    let nearest_below = (0..lines.len())
        .filter(|&i| same_column(i) && below(&lines[i]))
        .min_by(|&a, &b| lines[a].bbox.y_min.total_cmp(&lines[b].bbox.y_min));
    if let Some(nb) = nearest_below {
        let band = &lines[nb].bbox;
        candidates.extend((0..lines.len()).filter(|&i| {
            same_column(i) && below(&lines[i]) && lines[i].bbox.y_min < band.y_max
        }));
    }
    candidates
        .into_iter()
        .map(|i| (reading_edge_score(c, &lines[i], page_width), i))
        .filter(|(s, _)| *s >= edge_threshold)
        .max_by(|(sa, a), (sb, b)| {
            sa.total_cmp(sb)
                .then_with(|| lines[*b].bbox.y_min.total_cmp(&lines[*a].bbox.y_min))
                .then_with(|| lines[*b].bbox.x_min.total_cmp(&lines[*a].bbox.x_min))
                .then_with(|| b.cmp(a))
        })
        .map(|(_, i)| i)
}

pub fn reading_order(lines: &[Line], page_width: f64, edge_threshold: f64) -> Vec<Line> {
    reading_order_indices(lines, page_width, edge_threshold)
        .into_iter()
        .map(|i| lines[i].clone())
        .collect()
}

/// `1 − normalized edit distance` over lowercased text.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&a.to_lowercase(), &b.to_lowercase())
}

/// Below this IoU against every primary line, a secondary line is new text.
pub const UNMATCHED_IOU: f64 = 0.1;

/// Merges a secondary recognizer into the primary one.
///
/// Each primary line pairs with the unpaired secondary line of greatest box
/// IoU. A pair at or above `iou_threshold` keeps the primary line when the
/// texts agree (similarity ≥ `sim_threshold`) and otherwise the more
/// confident line. Secondary lines overlapping no primary line appear at
/// the end.
pub fn merge_recognizers(primary: &[Line], secondary: &[Line], iou_threshold: f64, sim_threshold: f64) -> Vec<Line> {
    let mut paired = vec![false; secondary.len()];
    let mut out = Vec::with_capacity(primary.len() + secondary.len());
    for p in primary {
        let best = secondary
            .iter()
            .enumerate()
            .filter(|(j, _)| !paired[*j])
            .map(|(j, s)| (p.bbox.iou(&s.bbox), j))
            .fold(None, |acc: Option<(f64, usize)>, (iou, j)| match acc {
                Some((bi, _)) if bi >= iou => acc,
                _ => Some((iou, j)),
            });
        match best {
            Some((iou, j)) if iou >= iou_threshold => {
                paired[j] = true;
                let s = &secondary[j];
                if text_similarity(&p.text, &s.text) >= sim_threshold || p.confidence >= s.confidence {
                    out.push(p.clone());
                } else {
                    out.push(s.clone());
                }
            }
            _ => out.push(p.clone()),
        }
    }
    for (j, s) in secondary.iter().enumerate() {
        if paired[j] {
            continue;
        }
        let max_iou = primary.iter().map(|p| p.bbox.iou(&s.bbox)).fold(0.0, f64::max);
        if max_iou < UNMATCHED_IOU {
            out.push(s.clone());
        }
    }
    out
}

/// Length-weighted mean confidence over lines; 0 for no lines.
pub fn aggregate_confidence(lines: &[Line]) -> f64 {
    let total: usize = lines.iter().map(|l| visible_len(&l.text)).sum();
    if total == 0 {
        return 0.0;
    }
    lines.iter().map(|l| visible_len(&l.text) as f64 * l.confidence).sum::<f64>() / total as f64
}

pub fn should_escalate_extraction(lines: &[Line], ocr_threshold: f64, user_requested: bool) -> bool {
    user_requested || aggregate_confidence(lines) < ocr_threshold
}

/// Checks a structured-extraction reply against its template. Template
/// leaves are the type names `"string"`, `"number"`, `"boolean"` or
/// `"any"`; objects must have exactly the template's keys; a one-element
/// array templates every element. `null` is accepted for any leaf.
pub fn validate_extraction(template: &Value, reply: &Value) -> Result<(), DocumentError> {
    validate_at("$", template, reply)
}

fn validate_at(path: &str, template: &Value, reply: &Value) -> Result<(), DocumentError> {
    let fail = |reason: String| {
        Err(DocumentError::Template {
            path: path.to_string(),
            reason,
        })
    };
    match template {
        Value::String(kind) => {
            let ok = match (kind.as_str(), reply) {
                (_, Value::Null) | ("any", _) => true,
                ("string", Value::String(_)) => true,
                ("number", Value::Number(_)) => true,
                ("boolean", Value::Bool(_)) => true,
                ("string" | "number" | "boolean", _) => false,
                (other, _) => return fail(format!("unknown template type {other:?}")),
            };
            if ok {
                Ok(())
            } else {
                fail(format!("expected {kind}"))
            }
        }
        Value::Object(fields) => {
            let Value::Object(got) = reply else {
                return fail("expected object".into());
            };
            let want: BTreeSet<&String> = fields.keys().collect();
            let have: BTreeSet<&String> = got.keys().collect();
            if want != have {
                return fail(format!("keys {have:?} differ from template keys {want:?}"));
            }
            for (k, t) in fields {
                validate_at(&format!("{path}.{k}"), t, &got[k])?;
            }
            Ok(())
        }
        Value::Array(items) if items.len() == 1 => {
            let Value::Array(got) = reply else {
                return fail("expected array".into());
            };
            for (i, v) in got.iter().enumerate() {
                validate_at(&format!("{path}[{i}]"), &items[0], v)?;
            }
            Ok(())
        }
        _ => fail("template nodes must be a type name, an object or a one-element array".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSegment {
    pub segment_id: String,
    pub page_index: usize,
    pub block_index: usize,
    pub text: String,
    pub provenance: Provenance,
    /// A single line longer than the block budget.
    #[serde(default)]
    pub oversize: bool,
}

/// Greedily packs consecutive lines into blocks of at most
/// `max_block_tokens`; a line is never split.
pub fn segment_document(pages: &[(usize, Vec<Line>)], max_block_tokens: usize, source: &Provenance) -> Vec<PageSegment> {
    let mut out = Vec::new();
    for (page_index, lines) in pages {
        let mut blocks: Vec<(Vec<&str>, usize)> = Vec::new();
        for line in lines {
            let t = count_tokens(&line.text);
            match blocks.last_mut() {
                Some((texts, used)) if *used + t <= max_block_tokens && !texts.is_empty() => {
                    texts.push(&line.text);
                    *used += t;
                }
                _ => blocks.push((vec![&line.text], t)),
            }
        }
        for (block_index, (texts, used)) in blocks.into_iter().enumerate() {
            let segment_id = format!("p{page_index}b{block_index}");
            out.push(PageSegment {
                provenance: source.clone().with_locator(format!("page={page_index};block={block_index}")),
                segment_id,
                page_index: *page_index,
                block_index,
                text: texts.join("\n"),
                oversize: used > max_block_tokens,
            });
        }
    }
    out
}

/// Text-span entities for lines, `follows` relations between consecutive
/// lines, and one observation per segment.
pub fn lines_to_state(pages: &[(usize, Vec<Line>)], segments: &[PageSegment], source: &Provenance) -> ContextState {
    let mut state = ContextState::new();
    let mut previous: Option<String> = None;
    for (page_index, lines) in pages {
        for (i, line) in lines.iter().enumerate() {
            let prov = source.clone().with_locator(format!("page={page_index};line={i}"));
            let id = content_id("line", &[&source.source_id, &page_index.to_string(), &i.to_string(), &line.text]);
            state.entities.push(
                Entity::new(&id, EntityKind::TextSpan, line.confidence.clamp(0.0, 1.0), prov.clone())
                    .with_text(line.text.clone())
                    .with_region(line.bbox),
            );
            if let Some(prev) = previous.replace(id.clone()) {
                state.relations.push(Relation::new(RelationKind::Follows, &id, &prev, prov));
            }
        }
    }
    for seg in segments {
        if seg.text.trim().is_empty() {
            continue;
        }
        state.observations.push(Observation {
            id: content_id("seg", &[&source.source_id, &seg.segment_id]),
            text: seg.text.clone(),
            score: 0.0,
            provenance: vec![seg.provenance.clone()],
        });
    }
    state.reindex_provenance();
    state
}

/// Recognizer output for one line, as carried in document fixtures and OCR
/// adapter replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLine {
    pub text: String,
    pub quad: Quad,
    #[serde(default = "one")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_height: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub words: Vec<Word>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPage {
    pub page_index: usize,
    pub width: f64,
    pub height: f64,
    pub lines: Vec<RawLine>,
}

/// One document: pages of detected lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFixture {
    pub pages: Vec<RawPage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DocumentParams {
    pub edge_threshold: f64,
    pub iou_threshold: f64,
    pub sim_threshold: f64,
    pub ocr_threshold: f64,
    pub max_block_tokens: usize,
}

impl Default for DocumentParams {
    fn default() -> Self {
        Self {
            edge_threshold: 0.35,
            iou_threshold: 0.5,
            sim_threshold: 0.6,
            ocr_threshold: 0.6,
            max_block_tokens: 120,
        }
    }
}

impl RawPage {
    pub fn to_lines(&self) -> Result<Vec<Line>, DocumentError> {
        self.lines
            .iter()
            .filter(|l| !l.text.trim().is_empty())
            .map(|l| Line::from_recognizer(l.text.clone(), l.quad, l.confidence, l.words.clone(), l.font_height))
            .collect()
    }
}

/// Orders every page independently, in parallel, merging a secondary
/// recognizer's pages when given. Output is sorted by page index.
pub fn order_pages(
    primary: &DocumentFixture,
    secondary: Option<&DocumentFixture>,
    params: &DocumentParams,
) -> Result<Vec<(usize, Vec<Line>)>, DocumentError> {
    let mut results: Vec<Result<(usize, Vec<Line>), DocumentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = primary
            .pages
            .iter()
            .map(|page| {
                let other = secondary.and_then(|d| d.pages.iter().find(|p| p.page_index == page.page_index));
                scope.spawn(move || {
                    let mut lines = page.to_lines()?;
                    if let Some(other) = other {
                        lines = merge_recognizers(&lines, &other.to_lines()?, params.iou_threshold, params.sim_threshold);
                    }
                    Ok((page.page_index, reading_order(&lines, page.width, params.edge_threshold)))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("page worker panicked")).collect()
    });
    let mut pages = Vec::with_capacity(results.len());
    for r in results.drain(..) {
        pages.push(r?);
    }
    pages.sort_by_key(|(i, _)| *i);
    Ok(pages)
}

/// A proposed box correction for one line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryAdjustment {
    pub line: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Applies adjustments one at a time, rejecting any that would change the
/// reading order of `ordered`. Returns the adjusted lines and the number of
/// rejected adjustments.
pub fn apply_geometry_adjustments(
    ordered: &[Line],
    adjustments: &[GeometryAdjustment],
    page_width: f64,
    edge_threshold: f64,
) -> (Vec<Line>, usize) {
    let mut lines = ordered.to_vec();
    let identity: Vec<usize> = (0..lines.len()).collect();
    let mut rejected = 0;
    for adj in adjustments {
        if adj.line >= lines.len() || !adj.bbox.is_valid() || adj.bbox.area() <= 0.0 {
            rejected += 1;
            continue;
        }
        let mut trial = lines.clone();
        trial[adj.line].bbox = adj.bbox;
        match Quad::from_box(&adj.bbox) {
            Ok(q) => trial[adj.line].quad = q,
            Err(_) => {
                rejected += 1;
                continue;
            }
        }
        if reading_order_indices(&trial, page_width, edge_threshold) == identity {
            lines = trial;
        } else {
            rejected += 1;
        }
    }
    (lines, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use serde_json::json;

    fn word(text: &str, conf: f64) -> Word {
        Word {
            text: text.into(),
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0),
            confidence: conf,
        }
    }

    fn line_at(text: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Line {
        Line::simple(text, BoundingBox::new(x0, y0, x1, y1), 0.9)
    }

    fn src() -> Provenance {
        Provenance::for_bytes("doc:a.pdf", b"%PDF", Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap())
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(line_confidence(&[word("x", 0.8)]).unwrap(), 0.8);
        let c = line_confidence(&[word("ab", 0.5), word("cdef", 1.0)]).unwrap();
        assert!((c - 5.0 / 6.0).abs() < 1e-12);
        let c = line_confidence(&[word("a", 0.3), word("bbb", 0.3), word("cc", 0.3)]).unwrap();
        assert!((c - 0.3).abs() < 1e-12);
        assert!(matches!(line_confidence(&[]), Err(DocumentError::NoWords)));
    }

    #[test]
    fn interpolation_examples() {
        let b = BoundingBox::new(0.0, 0.0, 100.0, 10.0);
        let w = interpolate_word_boxes(&b, "ab cd").unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].1.x_min, w[0].1.x_max), (0.0, 40.0));
        assert_eq!((w[1].1.x_min, w[1].1.x_max), (60.0, 100.0));
        let single = interpolate_word_boxes(&b, "word").unwrap();
        assert_eq!(single[0].1, b);
        assert!(matches!(
            interpolate_word_boxes(&BoundingBox::new(5.0, 0.0, 5.0, 10.0), "a"),
            Err(DocumentError::ZeroWidth)
        ));
    }

    #[test]
    fn edge_score_examples() {
        let a = line_at("a", 0.0, 0.0, 100.0, 10.0);
        assert!((reading_edge_score(&a, &a, 500.0) - 1.0).abs() < 1e-12);
        // vertically disjoint, horizontal gap equal to the page width
        let b = line_at("b", 600.0, 50.0, 700.0, 60.0);
        assert!((reading_edge_score(&a, &b, 500.0) - 0.2).abs() < 1e-12);
        let mut flat = a.clone();
        flat.bbox.y_max = flat.bbox.y_min;
        assert_eq!(reading_edge_score(&flat, &a, 500.0), 0.0);
    }

    #[test]
    fn single_column_is_top_to_bottom() {
        let lines: Vec<Line> = [3, 0, 4, 1, 2]
            .iter()
            .map(|&i| line_at(&format!("l{i}"), 50.0, 20.0 * i as f64, 400.0, 20.0 * i as f64 + 12.0))
            .collect();
        let order: Vec<String> = reading_order(&lines, 500.0, 0.35).into_iter().map(|l| l.text).collect();
        assert_eq!(order, ["l0", "l1", "l2", "l3", "l4"]);
        assert!(reading_order(&[], 500.0, 0.35).is_empty());
    }

    #[test]
    fn two_columns_are_column_major() {
        let mut lines = Vec::new();
        for i in 0..3 {
            let y = 20.0 * i as f64;
            lines.push(line_at(&format!("R{i}"), 320.0, y, 580.0, y + 12.0));
            lines.push(line_at(&format!("L{i}"), 20.0, y, 280.0, y + 12.0));
        }
        let order: Vec<String> = reading_order(&lines, 600.0, 0.35).into_iter().map(|l| l.text).collect();
        assert_eq!(order, ["L0", "L1", "L2", "R0", "R1", "R2"]);
    }

    #[test]
    fn heading_is_not_skipped() {
        let lines = vec![
            line_at("body one", 20.0, 0.0, 300.0, 10.0),
            Line {
                font_height: 20.0,
                ..line_at("Heading", 20.0, 15.0, 200.0, 35.0)
            },
            line_at("body two", 20.0, 40.0, 300.0, 50.0),
        ];
        let order: Vec<String> = reading_order(&lines, 600.0, 0.35).into_iter().map(|l| l.text).collect();
        assert_eq!(order, ["body one", "Heading", "body two"]);
    }

    #[test]
    fn same_row_fragment_read_left_to_right() {
        let lines = vec![
            line_at("world", 120.0, 0.0, 200.0, 10.0),
            line_at("hello", 20.0, 0.0, 100.0, 10.0),
            line_at("next", 20.0, 15.0, 200.0, 25.0),
        ];
        let order: Vec<String> = reading_order(&lines, 600.0, 0.35).into_iter().map(|l| l.text).collect();
        assert_eq!(order, ["hello", "world", "next"]);
    }

    #[test]
    fn merge_examples() {
        let p = line_at("Total 12.00", 0.0, 0.0, 100.0, 10.0);
        let merged = merge_recognizers(&[p.clone()], &[p.clone()], 0.5, 0.6);
        assert_eq!(merged, vec![p.clone()]);

        let a = line_at("abc", 0.0, 0.0, 2.0, 1.0);
        let b = line_at("xyz", 1.0, 0.0, 3.0, 1.0);
        assert!((a.bbox.iou(&b.bbox) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(merge_recognizers(&[a.clone()], &[b], 0.5, 0.6), vec![a.clone()]);

        let far = line_at("footer", 500.0, 500.0, 600.0, 510.0);
        let merged = merge_recognizers(&[a.clone()], &[far.clone()], 0.5, 0.6);
        assert_eq!(merged, vec![a, far]);
    }

    #[test]
    fn merge_prefers_confident_disagreeing_line() {
        let p = Line::simple("T0ta1 12.O0", BoundingBox::new(0.0, 0.0, 100.0, 10.0), 0.4);
        let s = Line::simple("Grand 99", BoundingBox::new(0.0, 0.0, 100.0, 10.0), 0.95);
        assert_eq!(merge_recognizers(&[p], &[s.clone()], 0.5, 0.6), vec![s]);
    }

    #[test]
    fn escalation_examples() {
        let hi = vec![Line::simple("fine text", BoundingBox::new(0.0, 0.0, 90.0, 10.0), 0.9)];
        let lo = vec![Line::simple("blurry", BoundingBox::new(0.0, 0.0, 90.0, 10.0), 0.4)];
        assert!(should_escalate_extraction(&hi, 0.6, true));
        assert!(!should_escalate_extraction(&hi, 0.6, false));
        assert!(should_escalate_extraction(&lo, 0.6, false));
    }

    #[test]
    fn extraction_template_checks() {
        let t = json!({"total": "number", "items": [{"name": "string", "qty": "number"}]});
        validate_extraction(&t, &json!({"total": 3.5, "items": [{"name": "a", "qty": 1}]})).unwrap();
        assert!(validate_extraction(&t, &json!({"total": "3.5", "items": []})).is_err());
        assert!(validate_extraction(&t, &json!({"total": 1, "items": [], "extra": 1})).is_err());
        validate_extraction(&t, &json!({"total": null, "items": []})).unwrap();
    }

    #[test]
    fn segmentation_ids_and_oversize() {
        let mk = |n: usize| -> Vec<Line> {
            (0..n)
                .map(|i| line_at("one two three", 0.0, 20.0 * i as f64, 100.0, 20.0 * i as f64 + 10.0))
                .collect()
        };
        let pages: Vec<_> = (0..3).map(|p| (p, mk(2))).collect();
        let segs = segment_document(&pages, 3, &src());
        let ids: Vec<_> = segs.iter().map(|s| s.segment_id.as_str()).collect();
        assert_eq!(ids, ["p0b0", "p0b1", "p1b0", "p1b1", "p2b0", "p2b1"]);
        assert!(segs.iter().all(|s| !s.oversize));

        let long = vec![(0, vec![line_at("a b c d e f", 0.0, 0.0, 100.0, 10.0), line_at("g", 0.0, 20.0, 100.0, 30.0)])];
        let segs = segment_document(&long, 3, &src());
        assert_eq!(segs.len(), 2);
        assert!(segs[0].oversize);
        assert!(!segs[1].oversize);
    }

    #[test]
    fn lines_to_state_counts() {
        let pages = vec![(0, vec![line_at("a", 0.0, 0.0, 10.0, 10.0), line_at("b", 0.0, 20.0, 10.0, 30.0)])];
        let segs = segment_document(&pages, 100, &src());
        let s = lines_to_state(&pages, &segs, &src());
        assert_eq!(s.entities.len(), 2);
        assert_eq!(s.relations.len(), 1);
        assert_eq!(s.observations.len(), 1);
        s.validate().unwrap();
        let empty = lines_to_state(&[(0, vec![])], &[], &src());
        assert!(empty.is_empty());
    }

    #[test]
    fn quads_validated() {
        let cw: [[f64; 2]; 4] = [[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]];
        assert!(Quad::try_from(cw).is_ok());
        let ccw: [[f64; 2]; 4] = [[0.0, 0.0], [0.0, 5.0], [10.0, 5.0], [10.0, 0.0]];
        assert!(Quad::try_from(ccw).is_err());
        let bowtie: [[f64; 2]; 4] = [[0.0, 0.0], [10.0, 5.0], [10.0, 0.0], [0.0, 5.0]];
        assert!(Quad::try_from(bowtie).is_err());
    }

    #[test]
    fn adjustments_that_reorder_are_rejected() {
        let lines: Vec<Line> = (0..3)
            .map(|i| line_at(&format!("l{i}"), 20.0, 20.0 * i as f64, 300.0, 20.0 * i as f64 + 12.0))
            .collect();
        let keep = GeometryAdjustment {
            line: 1,
            bbox: BoundingBox::new(22.0, 21.0, 298.0, 33.0),
        };
        let reorder = GeometryAdjustment {
            line: 0,
            bbox: BoundingBox::new(20.0, 100.0, 300.0, 112.0),
        };
        let (out, rejected) = apply_geometry_adjustments(&lines, &[keep.clone(), reorder], 600.0, 0.35);
        assert_eq!(rejected, 1);
        assert_eq!(out[1].bbox, keep.bbox);
        assert_eq!(out[0].bbox, lines[0].bbox);
    }
}
