//! Random instance generators shared by the acceptance and property tests.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use interfaze_core::controller::{ChainEstimate, Primitive, PrimitiveKind, ToolChain};
use interfaze_core::document::Line;
use interfaze_core::schema::CharSpan;
use interfaze_core::{BoundingBox, ContextState, Entity, EntityKind, Observation, Provenance, Relation, RelationKind, TokenBudget};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use rand::{Rng, SeedableRng};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const VOCAB: [&str; 16] = [
    "red", "button", "invoice", "total", "speaker", "meeting", "table", "chart", "axis", "legend", "python", "error",
    "page", "column", "report", "weather",
];

pub fn words(rng: &mut TestRng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn provenance(rng: &mut TestRng, sources: usize) -> Provenance {
    let s = rng.gen_range(0..sources);
    let t = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap() + Duration::seconds(s as i64);
    let p = Provenance::for_bytes(format!("src-{s}"), format!("bytes of {s}").as_bytes(), t);
    if rng.gen_bool(0.5) {
        p.with_locator(format!("loc={}", rng.gen_range(0..4)))
    } else {
        p
    }
}

/// A valid fragment with overlapping spans and regions, so merging has
/// work to do, and relations over its own items.
pub fn fragment(rng: &mut TestRng, tag: &str) -> ContextState {
    let mut state = ContextState::new();
    for i in 0..rng.gen_range(0..6) {
        state.observations.push(Observation {
            id: format!("{tag}-o{i}"),
            text: words(rng, 1, 8),
            score: 0.0,
            provenance: vec![provenance(rng, 3)],
        });
    }
    for i in 0..rng.gen_range(0..7) {
        let kind = *[EntityKind::TextSpan, EntityKind::BoundingRegion, EntityKind::Speaker, EntityKind::TableCell]
            .choose(rng)
            .unwrap();
        let conf = (rng.gen_range(0..=20) as f64) / 20.0;
        let mut e = Entity::new(format!("{tag}-e{i}"), kind, conf, provenance(rng, 3));
        match rng.gen_range(0..3) {
            0 => {
                let start = rng.gen_range(0..30);
                e = e.with_span(CharSpan::new(start, start + rng.gen_range(1..10)));
            }
            1 => {
                let (x, y) = (rng.gen_range(0..8) as f64 * 10.0, rng.gen_range(0..8) as f64 * 10.0);
                let (w, h) = (rng.gen_range(1..5) as f64 * 10.0, rng.gen_range(1..5) as f64 * 10.0);
                e = e.with_region(BoundingBox::new(x, y, x + w, y + h));
            }
            _ => {}
        }
        if e.span.is_none() && e.region.is_none() || rng.gen_bool(0.5) {
            e = e.with_text(words(rng, 1, 4));
        }
        state.entities.push(e);
    }
    let ids: Vec<String> = state.item_ids().into_iter().map(String::from).collect();
    if ids.len() >= 2 {
        let kinds = [RelationKind::Follows, RelationKind::Contains, RelationKind::RefersTo, RelationKind::SpokenBy];
        let mut seen = BTreeSet::new();
        for _ in 0..rng.gen_range(0..5) {
            let a = ids.choose(rng).unwrap().clone();
            let b = ids.choose(rng).unwrap().clone();
            let r = Relation::new(*kinds.choose(rng).unwrap(), a, b, provenance(rng, 3));
            if r.subject != r.object && seen.insert(r.id.clone()) {
                state.relations.push(r);
            }
        }
    }
    state.reindex_provenance();
    state
}

pub fn budget(rng: &mut TestRng) -> TokenBudget {
    TokenBudget {
        observations_max: rng.gen_range(0..60),
        entities_max: rng.gen_range(0..40),
        relations_max: rng.gen_range(0..30),
        provenance_max: rng.gen_range(0..30),
    }
}

pub fn floors(rng: &mut TestRng) -> BTreeMap<EntityKind, f64> {
    let mut f = BTreeMap::new();
    if rng.gen_bool(0.5) {
        f.insert(EntityKind::TextSpan, rng.gen_range(0..=10) as f64 / 10.0);
    }
    if rng.gen_bool(0.3) {
        f.insert(EntityKind::BoundingRegion, 0.5);
    }
    f
}

/// VAD probabilities with speech bursts and short dropouts.
pub fn vad_probs(rng: &mut TestRng) -> Vec<f64> {
    let n = rng.gen_range(0..120);
    let mut speaking = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.15) {
                speaking = !speaking;
            }
            let p: f64 = if speaking { rng.gen_range(0.3..1.0) } else { rng.gen_range(0.0..0.7) };
            // land some values exactly on common thresholds
            if rng.gen_bool(0.05) {
                0.5
            } else {
                p
            }
        })
        .collect()
}

/// Times on a quarter-second grid so overlaps tie exactly.
pub fn quarter_span(rng: &mut TestRng, max_quarters: u32) -> (u32, u32) {
    let a = rng.gen_range(0..max_quarters);
    let b = rng.gen_range(a + 1..=max_quarters);
    (a, b)
}

pub fn rect_line(text: &str, x: f64, y: f64, w: f64, h: f64) -> Line {
    Line::simple(text, BoundingBox::new(x, y, x + w, y + h), 0.9)
}

/// A synthetic page: optional full-width title, then one or two columns of
/// left-aligned lines. Returns the lines in column-major order and the
/// page width.
pub fn page_layout(rng: &mut TestRng) -> (Vec<Line>, f64) {
    let width = rng.gen_range(600..1000) as f64;
    let margin = rng.gen_range(30..60) as f64;
    let two_col = rng.gen_bool(0.6);
    let font = rng.gen_range(10..16) as f64;
    let leading = font * rng.gen_range(1.3..2.0);
    let mut lines = Vec::new();
    let mut top = margin;
    if rng.gen_bool(0.4) {
        let h = font * 1.6;
        lines.push(rect_line("Title of the page", margin, top, width - 2.0 * margin, h));
        top += h + leading;
    }
    let gutter = width * 0.08;
    let col_w = if two_col { (width - 2.0 * margin - gutter) / 2.0 } else { width - 2.0 * margin };
    for c in 0..if two_col { 2 } else { 1 } {
        let x0 = margin + c as f64 * (col_w + gutter);
        let mut y = top;
        for i in 0..rng.gen_range(3..12) {
            let jitter = rng.gen_range(0.0..3.0);
            let w = col_w * rng.gen_range(0.55..1.0);
            lines.push(rect_line(&format!("column {c} line {i}"), x0 + jitter, y, w, font));
            y += leading;
        }
    }
    (lines, width)
}


/// Chain registry where chain `i` has `1..=4` steps; the pre-LLM steps
/// carry a `probe` param naming `chain/step` so failures can be injected.
pub fn registry(rng: &mut TestRng) -> Vec<ToolChain> {
    let kinds = [PrimitiveKind::QueryIndex, PrimitiveKind::FetchParse, PrimitiveKind::RunPerception, PrimitiveKind::RunSandbox];
    (0..rng.gen_range(1..6))
        .map(|i| {
            let id = format!("c{i}");
            let mut steps: Vec<Primitive> = (0..rng.gen_range(0..4))
                .map(|s| Primitive::new(*kinds.choose(rng).unwrap()).with_param("probe", format!("{id}/{s}")))
                .collect();
            let n = steps.len();
            steps.push(Primitive::new(PrimitiveKind::CallLlm).with_param("probe", format!("{id}/{n}")));
            ToolChain {
                chain_id: id,
                steps,
                required_modalities: BTreeSet::new(),
                tags: BTreeSet::from(["*".to_string()]),
            }
        })
        .collect()
}

pub fn estimates(rng: &mut TestRng, chains: &[ToolChain]) -> BTreeMap<String, ChainEstimate> {
    chains
        .iter()
        .map(|c| {
            (
                c.chain_id.clone(),
                ChainEstimate {
                    chain_id: c.chain_id.clone(),
                    predicted_quality: rng.gen_range(0..=10) as f64 / 10.0,
                    cost_proxy: rng.gen_range(0..4) as f64,
                    latency_proxy_ms: rng.gen_range(0..3) as f64 * 100.0,
                },
            )
        })
        .collect()
}
