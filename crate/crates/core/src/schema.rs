//! The distilled context state handed to the answering model, plus token
//! accounting, canonical serialization and prompt rendering.
//!
//! A [`ContextState`] has four fields: observations (short textual
//! statements), entities (typed spans, regions and nodes), relations (links
//! between items) and a provenance index. Every item carries at least one
//! [`Provenance`] entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical::{self, CanonicalError};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("relation {relation} has dangling endpoint {endpoint}")]
    DanglingEndpoint { relation: String, endpoint: String },
    #[error("invalid {item}: {reason}")]
    Invalid { item: String, reason: String },
    #[error("{field} section uses {used} tokens, budget is {budget}")]
    OverBudget {
        field: &'static str,
        used: usize,
        budget: usize,
    },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

fn invalid(item: impl Into<String>, reason: impl Into<String>) -> SchemaError {
    SchemaError::Invalid {
        item: item.into(),
        reason: reason.into(),
    }
}

/// Where a context item came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    /// Lowercase hex SHA-256 of the source bytes.
    pub content_hash: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
}

impl Provenance {
    pub fn new(
        source_id: impl Into<String>,
        content_hash: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            content_hash: content_hash.into(),
            timestamp,
            locator: None,
        }
    }

    /// Provenance for raw source bytes; the hash is computed here.
    pub fn for_bytes(source_id: impl Into<String>, bytes: &[u8], timestamp: DateTime<Utc>) -> Self {
        Self::new(source_id, crate::sha256_hex(bytes), timestamp)
    }

    pub fn with_locator(mut self, locator: impl Into<String>) -> Self {
        self.locator = Some(locator.into());
        self
    }

    /// The same source without an item-specific locator; used as the
    /// provenance index entry.
    pub fn source_entry(&self) -> Provenance {
        Provenance {
            locator: None,
            ..self.clone()
        }
    }

    fn validate(&self, owner: &str) -> Result<(), SchemaError> {
        if self.source_id.is_empty() {
            return Err(invalid(owner, "provenance source_id is empty"));
        }
        if self.content_hash.is_empty() {
            return Err(invalid(owner, "provenance content_hash is empty"));
        }
        Ok(())
    }
}

/// Axis-aligned box in page or image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox::new(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0 when both boxes are degenerate.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if self == other {
            return if self.area() > 0.0 { 1.0 } else { 0.0 };
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

/// Half-open character interval `[start, end)` within a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        if self.start == self.end || other.start == other.end {
            // empty spans only overlap an identical empty span
            return self == other;
        }
        self.start < other.end && other.start < self.end
    }

    pub fn union(&self, other: &CharSpan) -> CharSpan {
        CharSpan::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub text: String,
    /// Relevance to the current query, in `[0, 1]`.
    pub score: f64,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    TextSpan,
    BoundingRegion,
    TableCell,
    Speaker,
    CodeBlock,
    Section,
    Figure,
    Variable,
}

impl EntityKind {
    pub const ALL: [EntityKind; 8] = [
        EntityKind::TextSpan,
        EntityKind::BoundingRegion,
        EntityKind::TableCell,
        EntityKind::Speaker,
        EntityKind::CodeBlock,
        EntityKind::Section,
        EntityKind::Figure,
        EntityKind::Variable,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::TextSpan => "text_span",
            EntityKind::BoundingRegion => "bounding_region",
            EntityKind::TableCell => "table_cell",
            EntityKind::Speaker => "speaker",
            EntityKind::CodeBlock => "code_block",
            EntityKind::Section => "section",
            EntityKind::Figure => "figure",
            EntityKind::Variable => "variable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<CharSpan>,
    pub confidence: f64,
    /// Relevance to the current query; filled in by the compiler.
    #[serde(default)]
    pub score: f64,
    /// Small string attributes such as a detected language tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    pub provenance: Vec<Provenance>,
}

impl Entity {
    pub fn new(id: impl Into<String>, kind: EntityKind, confidence: f64, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            kind,
            text: None,
            region: None,
            span: None,
            confidence,
            score: 0.0,
            attributes: BTreeMap::new(),
            provenance: vec![provenance],
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_region(mut self, region: BoundingBox) -> Self {
        self.region = Some(region);
        self
    }

    pub fn with_span(mut self, span: CharSpan) -> Self {
        self.span = Some(span);
        self
    }

    /// First provenance source, used for merge grouping and ordering.
    pub fn primary_source(&self) -> &str {
        self.provenance.first().map(|p| p.source_id.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    AxisOf,
    LegendEntry,
    RefersTo,
    Follows,
    Contains,
    SpokenBy,
    AlignedWith,
}

impl RelationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::AxisOf => "axis_of",
            RelationKind::LegendEntry => "legend_entry",
            RelationKind::RefersTo => "refers_to",
            RelationKind::Follows => "follows",
            RelationKind::Contains => "contains",
            RelationKind::SpokenBy => "spoken_by",
            RelationKind::AlignedWith => "aligned_with",
        }
    }
}

/// A directed link. Endpoints name an entity or an observation in the same
/// state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub kind: RelationKind,
    pub subject: String,
    pub object: String,
    pub provenance: Vec<Provenance>,
}

impl Relation {
    pub fn new(
        kind: RelationKind,
        subject: impl Into<String>,
        object: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        let subject = subject.into();
        let object = object.into();
        Self {
            id: relation_id(kind, &subject, &object),
            kind,
            subject,
            object,
            provenance: vec![provenance],
        }
    }
}

/// Relation ids are a function of `(kind, subject, object)`.
pub fn relation_id(kind: RelationKind, subject: &str, object: &str) -> String {
    content_id("r", &[kind.as_str(), subject, object])
}

/// Short deterministic id: `prefix-` followed by 12 hex digits of the
/// SHA-256 of the NUL-joined parts.
pub fn content_id(prefix: &str, parts: &[&str]) -> String {
    let joined = parts.join("\u{0}");
    let digest = crate::sha256_hex(joined.as_bytes());
    format!("{prefix}-{}", &digest[..12])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextState {
    pub observations: Vec<Observation>,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub provenance_index: BTreeMap<String, Provenance>,
}

impl ContextState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
            && self.entities.is_empty()
            && self.relations.is_empty()
            && self.provenance_index.is_empty()
    }

    /// Adds `p` to the provenance index, keeping the earliest entry per source.
    pub fn index_provenance(&mut self, p: &Provenance) {
        let entry = p.source_entry();
        self.provenance_index
            .entry(entry.source_id.clone())
            .and_modify(|existing| {
                if entry < *existing {
                    *existing = entry.clone();
                }
            })
            .or_insert(entry);
    }

    /// Rebuilds the provenance index from the items' provenance lists.
    pub fn reindex_provenance(&mut self) {
        let all: Vec<Provenance> = self
            .observations
            .iter()
            .flat_map(|o| o.provenance.iter())
            .chain(self.entities.iter().flat_map(|e| e.provenance.iter()))
            .chain(self.relations.iter().flat_map(|r| r.provenance.iter()))
            .cloned()
            .collect();
        self.provenance_index.clear();
        for p in &all {
            self.index_provenance(p);
        }
    }

    /// Ids that a relation endpoint may name.
    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.entities
            .iter()
            .map(|e| e.id.as_str())
            .chain(self.observations.iter().map(|o| o.id.as_str()))
            .collect()
    }

    /// Checks every structural invariant of the state.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for o in &self.observations {
            if !seen.insert(o.id.as_str()) {
                return Err(invalid(&o.id, "duplicate item id"));
            }
            if o.text.is_empty() {
                return Err(invalid(&o.id, "observation text is empty"));
            }
            if !(0.0..=1.0).contains(&o.score) {
                return Err(invalid(&o.id, "score outside [0,1]"));
            }
            validate_provenance_list(&o.id, &o.provenance)?;
        }
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(invalid(&e.id, "duplicate item id"));
            }
            if e.text.is_none() && e.region.is_none() && e.span.is_none() {
                return Err(invalid(&e.id, "entity needs text, region or span"));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(invalid(&e.id, "confidence outside [0,1]"));
            }
            if !(0.0..=1.0).contains(&e.score) {
                return Err(invalid(&e.id, "score outside [0,1]"));
            }
            if let Some(r) = &e.region {
                if !r.is_valid() {
                    return Err(invalid(&e.id, "region has min > max"));
                }
            }
            if let Some(s) = &e.span {
                if s.start > s.end {
                    return Err(invalid(&e.id, "span start after end"));
                }
            }
            validate_provenance_list(&e.id, &e.provenance)?;
        }
        let ids = self.item_ids();
        for r in &self.relations {
            if r.subject == r.object {
                return Err(invalid(&r.id, "relation subject equals object"));
            }
            for endpoint in [&r.subject, &r.object] {
                if !ids.contains(endpoint.as_str()) {
                    return Err(SchemaError::DanglingEndpoint {
                        relation: r.id.clone(),
                        endpoint: endpoint.clone(),
                    });
                }
            }
            validate_provenance_list(&r.id, &r.provenance)?;
        }
        for (key, p) in &self.provenance_index {
            if key != &p.source_id {
                return Err(invalid(key, "provenance index key differs from source_id"));
            }
            p.validate(key)?;
        }
        Ok(())
    }
}

fn validate_provenance_list(owner: &str, list: &[Provenance]) -> Result<(), SchemaError> {
    if list.is_empty() {
        return Err(invalid(owner, "item has no provenance"));
    }
    list.iter().try_for_each(|p| p.validate(owner))
}

/// Per-field token caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub observations_max: usize,
    pub entities_max: usize,
    pub relations_max: usize,
    pub provenance_max: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            observations_max: 768,
            entities_max: 384,
            relations_max: 192,
            provenance_max: 96,
        }
    }
}

impl TokenBudget {
    pub fn uniform(max: usize) -> Self {
        Self {
            observations_max: max,
            entities_max: max,
            relations_max: max,
            provenance_max: max,
        }
    }
}

/// Number of maximal non-whitespace runs in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Canonical bytes of a valid state.
pub fn canonical_serialize(state: &ContextState) -> Result<Vec<u8>, SchemaError> {
    state.validate()?;
    Ok(canonical::to_canonical_bytes(state)?)
}

/// Parses and validates canonical (or any equivalent JSON) state bytes.
pub fn parse_state(bytes: &[u8]) -> Result<ContextState, SchemaError> {
    let state: ContextState = canonical::from_canonical_slice(bytes)?;
    state.validate()?;
    Ok(state)
}

/// Lowercase hex SHA-256 of the canonical serialization.
pub fn state_digest(state: &ContextState) -> Result<String, SchemaError> {
    Ok(crate::sha256_hex(&canonical_serialize(state)?))
}

pub const SECTION_QUERY: &str = "QUERY";
pub const SECTION_OBSERVATIONS: &str = "OBSERVATIONS";
pub const SECTION_ENTITIES: &str = "ENTITIES";
pub const SECTION_RELATIONS: &str = "RELATIONS";
pub const SECTION_PROVENANCE: &str = "PROVENANCE";

/// Prompt line for one observation. Budgets count tokens of exactly this
/// text.
pub fn render_observation(o: &Observation) -> String {
    format!("[{}] {}", o.id, o.text)
}

pub fn render_entity(e: &Entity) -> String {
    let mut line = format!("[{}] {}", e.id, e.kind.as_str());
    if let Some(text) = &e.text {
        let _ = write!(line, ": {text}");
    }
    if let Some(r) = &e.region {
        let _ = write!(
            line,
            " box=[{:.1},{:.1},{:.1},{:.1}]",
            r.x_min, r.y_min, r.x_max, r.y_max
        );
    }
    if let Some(s) = &e.span {
        let _ = write!(line, " span=[{},{})", s.start, s.end);
    }
    for (k, v) in &e.attributes {
        let _ = write!(line, " {k}={v}");
    }
    let _ = write!(line, " conf={:.2}", e.confidence);
    line
}

pub fn render_relation(r: &Relation) -> String {
    format!("[{}] {} {} {}", r.id, r.subject, r.kind.as_str(), r.object)
}

pub fn render_provenance(p: &Provenance) -> String {
    let mut line = format!(
        "[{}] sha256:{} {}",
        p.source_id,
        p.content_hash,
        p.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    );
    if let Some(loc) = &p.locator {
        let _ = write!(line, " @{loc}");
    }
    line
}

/// Token counts of the four rendered sections, in field order.
pub fn section_token_counts(state: &ContextState) -> [usize; 4] {
    [
        state.observations.iter().map(|o| count_tokens(&render_observation(o))).sum(),
        state.entities.iter().map(|e| count_tokens(&render_entity(e))).sum(),
        state.relations.iter().map(|r| count_tokens(&render_relation(r))).sum(),
        state
            .provenance_index
            .values()
            .map(|p| count_tokens(&render_provenance(p)))
            .sum(),
    ]
}

/// Fails with [`SchemaError::OverBudget`] naming the first field over its cap.
pub fn check_budget(state: &ContextState, budget: &TokenBudget) -> Result<(), SchemaError> {
    let used = section_token_counts(state);
    let caps = [
        (SECTION_OBSERVATIONS, budget.observations_max),
        (SECTION_ENTITIES, budget.entities_max),
        (SECTION_RELATIONS, budget.relations_max),
        (SECTION_PROVENANCE, budget.provenance_max),
    ];
    for (used, (field, cap)) in used.into_iter().zip(caps) {
        if used > cap {
            return Err(SchemaError::OverBudget {
                field,
                used,
                budget: cap,
            });
        }
    }
    Ok(())
}

/// Renders the text the answering model sees. Section headers are not
/// counted against the budget; only item lines are.
pub fn render_prompt(state: &ContextState, query: &str, budget: &TokenBudget) -> Result<String, SchemaError> {
    state.validate()?;
    check_budget(state, budget)?;
    let mut out = String::new();
    let _ = writeln!(out, "{SECTION_QUERY}\n{query}\n");
    let _ = writeln!(out, "{SECTION_OBSERVATIONS}");
    for o in &state.observations {
        let _ = writeln!(out, "{}", render_observation(o));
    }
    let _ = writeln!(out, "\n{SECTION_ENTITIES}");
    for e in &state.entities {
        let _ = writeln!(out, "{}", render_entity(e));
    }
    let _ = writeln!(out, "\n{SECTION_RELATIONS}");
    for r in &state.relations {
        let _ = writeln!(out, "{}", render_relation(r));
    }
    let _ = writeln!(out, "\n{SECTION_PROVENANCE}");
    for p in state.provenance_index.values() {
        let _ = writeln!(out, "{}", render_provenance(p));
    }
    Ok(out)
}

/// Splits a rendered prompt back into its section bodies, keyed by header.
pub fn prompt_sections(prompt: &str) -> BTreeMap<&'static str, String> {
    let headers = [
        SECTION_QUERY,
        SECTION_OBSERVATIONS,
        SECTION_ENTITIES,
        SECTION_RELATIONS,
        SECTION_PROVENANCE,
    ];
    let mut sections: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for line in prompt.lines() {
        if let Some(h) = headers.iter().find(|h| **h == line) {
            current = Some(h);
            sections.entry(h).or_default();
            continue;
        }
        if let Some(h) = current {
            let body = sections.entry(h).or_default();
            if !line.is_empty() {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    sections
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap()
    }

    fn prov(src: &str) -> Provenance {
        Provenance::for_bytes(src, src.as_bytes(), ts())
    }

    fn obs(id: &str, text: &str) -> Observation {
        Observation {
            id: id.into(),
            text: text.into(),
            score: 0.5,
            provenance: vec![prov("doc")],
        }
    }

    #[test]
    fn token_counts() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("red submit button"), 3);
        assert_eq!(count_tokens("a  b\tc\n"), 3);
        assert_eq!(count_tokens("   "), 0);
    }

    #[test]
    fn empty_state_canonical_form() {
        let bytes = canonical_serialize(&ContextState::new()).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"entities":[],"observations":[],"provenance_index":{},"relations":[]}"#
        );
    }

    #[test]
    fn dangling_relation_rejected() {
        let mut s = ContextState::new();
        s.observations.push(obs("o1", "x"));
        s.relations
            .push(Relation::new(RelationKind::Follows, "o1", "ghost", prov("doc")));
        match canonical_serialize(&s) {
            Err(SchemaError::DanglingEndpoint { endpoint, .. }) => assert_eq!(endpoint, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn self_relation_rejected() {
        let mut s = ContextState::new();
        s.observations.push(obs("o1", "x"));
        s.relations.push(Relation::new(RelationKind::Follows, "o1", "o1", prov("doc")));
        assert!(s.validate().is_err());
    }

    #[test]
    fn entity_without_payload_rejected() {
        let mut s = ContextState::new();
        s.entities.push(Entity::new("e1", EntityKind::Speaker, 0.5, prov("a")));
        assert!(s.validate().is_err());
        s.entities[0].text = Some("S0".into());
        assert!(s.validate().is_ok());
    }

    #[test]
    fn empty_prompt_has_four_sections() {
        let p = render_prompt(&ContextState::new(), "hi", &TokenBudget::uniform(0)).unwrap();
        assert!(p.contains("hi"));
        let sections = prompt_sections(&p);
        for h in [
            SECTION_OBSERVATIONS,
            SECTION_ENTITIES,
            SECTION_RELATIONS,
            SECTION_PROVENANCE,
        ] {
            assert_eq!(sections.get(h).map(String::as_str), Some(""), "{h}");
        }
    }

    #[test]
    fn observation_rendered_once() {
        let mut s = ContextState::new();
        s.observations.push(obs("o1", "x=3"));
        s.reindex_provenance();
        let p = render_prompt(&s, "what is x", &TokenBudget::default()).unwrap();
        assert_eq!(p.matches("x=3").count(), 1);
        assert!(prompt_sections(&p)[SECTION_OBSERVATIONS].contains("x=3"));
    }

    #[test]
    fn over_budget_prompt_fails() {
        let mut s = ContextState::new();
        s.observations.push(obs("o1", "one two three"));
        s.reindex_provenance();
        let mut b = TokenBudget::uniform(100);
        b.observations_max = 3;
        assert!(matches!(
            render_prompt(&s, "q", &b),
            Err(SchemaError::OverBudget {
                field: SECTION_OBSERVATIONS,
                used: 4,
                budget: 3
            })
        ));
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 1.0);
        let b = BoundingBox::new(1.0, 0.0, 3.0, 1.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&b), b.iou(&a));
    }
}
