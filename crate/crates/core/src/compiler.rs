//! Context compilation: merge fragments, drop low-confidence entities,
//! score against the query, then fit each field into its token budget.
//!
//! Output does not depend on fragment order, and compiling a compiled state
//! again returns it unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::retrieval::terms;
use crate::schema::{
    count_tokens, relation_id, render_entity, render_observation, render_provenance, render_relation, ContextState,
    Entity, EntityKind, Observation, Provenance, Relation, SchemaError, TokenBudget,
};

/// Entities whose regions overlap at least this much are the same thing.
pub const MERGE_IOU: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("fragment {index} is malformed: {source}")]
    Fragment { index: usize, source: SchemaError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileInput {
    pub fragments: Vec<ContextState>,
    pub query: String,
    pub budgets: TokenBudget,
    /// Minimum confidence per entity kind; kinds not listed keep everything.
    #[serde(default)]
    pub floors: BTreeMap<EntityKind, f64>,
}

/// Relevance of an item's text to the query, in `[0, 1]`.
pub trait Scorer: Send + Sync {
    fn score(&self, text: &str, query: &str) -> f64;
}

/// Fraction of distinct query terms present in the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn score(&self, text: &str, query: &str) -> f64 {
        score_relevance(text, query)
    }
}

pub fn score_relevance(text: &str, query: &str) -> f64 {
    let q: BTreeSet<String> = terms(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: BTreeSet<String> = terms(text).into_iter().collect();
    q.intersection(&t).count() as f64 / q.len() as f64
}

fn merge_provenance(lists: impl IntoIterator<Item = Vec<Provenance>>) -> Vec<Provenance> {
    let mut out: Vec<Provenance> = Vec::new();
    for p in lists.into_iter().flatten() {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Members ordered by confidence desc, then id, then serialized form, so
/// the combination is independent of input order.
fn combine_entities(mut members: Vec<Entity>) -> Entity {
    members.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.id.cmp(&b.id))
            .then_with(|| canonical_of(a).cmp(&canonical_of(b)))
    });
    let min_id = members.iter().map(|e| e.id.clone()).min().expect("non-empty");
    let mut by_id = members.clone();
    by_id.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| canonical_of(a).cmp(&canonical_of(b))));
    let best = &members[0];
    let mut out = Entity {
        id: min_id,
        kind: by_id[0].kind,
        text: members.iter().find_map(|e| e.text.clone()),
        region: None,
        span: None,
        confidence: best.confidence,
        score: members.iter().map(|e| e.score).fold(0.0, f64::max),
        attributes: BTreeMap::new(),
        provenance: merge_provenance(by_id.iter().map(|e| e.provenance.clone())),
    };
    for e in &members {
        out.region = match (out.region, e.region) {
            (Some(a), Some(b)) => Some(a.union(&b)),
            (a, b) => a.or(b),
        };
        out.span = match (out.span, e.span) {
            (Some(a), Some(b)) => Some(a.union(&b)),
            (a, b) => a.or(b),
        };
        for (k, v) in &e.attributes {
            out.attributes.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    out
}

fn canonical_of<T: Serialize>(v: &T) -> String {
    canonical::to_canonical_string(v).unwrap_or_default()
}

fn should_merge(a: &Entity, b: &Entity) -> bool {
    if a.kind != b.kind || a.primary_source() != b.primary_source() {
        return false;
    }
    if let (Some(sa), Some(sb)) = (&a.span, &b.span) {
        if sa.overlaps(sb) {
            return true;
        }
    }
    match (&a.region, &b.region) {
        (Some(ra), Some(rb)) => ra.iou(rb) >= MERGE_IOU,
        _ => false,
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn merge_pass(entities: Vec<Entity>, remap: &mut HashMap<String, String>) -> (Vec<Entity>, bool) {
    let n = entities.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut changed = false;
    for i in 0..n {
        for j in i + 1..n {
            if should_merge(&entities[i], &entities[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                    changed = true;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<Entity>> = BTreeMap::new();
    for (i, e) in entities.into_iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(e);
    }
    let merged = groups
        .into_values()
        .map(|members| {
            let ids: Vec<String> = members.iter().map(|e| e.id.clone()).collect();
            let m = combine_entities(members);
            for id in ids {
                if id != m.id {
                    remap.insert(id, m.id.clone());
                }
            }
            m
        })
        .collect();
    (merged, changed)
}

fn merge_order(a: &Entity, b: &Entity) -> std::cmp::Ordering {
    (a.primary_source(), a.span.map(|s| s.start), &a.id).cmp(&(b.primary_source(), b.span.map(|s| s.start), &b.id))
}

/// Unions entities of the same kind and source whose spans overlap or whose
/// regions have IoU ≥ 0.5, repeating until nothing changes. Returns the
/// merged entities ordered by `(source, span start, id)` and the old → new
/// id map.
pub fn merge_entities_with_map(entities: Vec<Entity>) -> (Vec<Entity>, HashMap<String, String>) {
    let mut remap = HashMap::new();
    // identical ids are the same entity regardless of geometry
    let mut by_id: BTreeMap<String, Vec<Entity>> = BTreeMap::new();
    for e in entities {
        by_id.entry(e.id.clone()).or_default().push(e);
    }
    let mut current: Vec<Entity> = by_id.into_values().map(combine_entities).collect();
    loop {
        current.sort_by(merge_order);
        let (next, changed) = merge_pass(current, &mut remap);
        current = next;
        if !changed {
            break;
        }
    }
    current.sort_by(merge_order);
    // collapse chains a → b → c
    let keys: Vec<String> = remap.keys().cloned().collect();
    for k in keys {
        let mut target = remap[&k].clone();
        while let Some(t) = remap.get(&target) {
            target = t.clone();
        }
        remap.insert(k, target);
    }
    (current, remap)
}

pub fn merge_entities(entities: Vec<Entity>) -> Vec<Entity> {
    merge_entities_with_map(entities).0
}

/// Exact-duplicate texts from one source collapse into the smallest id.
fn merge_observations(observations: Vec<Observation>, remap: &mut HashMap<String, String>) -> Vec<Observation> {
    let mut groups: BTreeMap<(String, String), Vec<Observation>> = BTreeMap::new();
    let mut by_id: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for o in observations {
        by_id.entry(o.id.clone()).or_default().push(o);
    }
    for (_, mut same) in by_id {
        same.sort_by_key(canonical_of);
        let first = same[0].clone();
        let merged = Observation {
            score: same.iter().map(|o| o.score).fold(0.0, f64::max),
            provenance: merge_provenance(same.into_iter().map(|o| o.provenance)),
            ..first
        };
        let source = merged.provenance.first().map(|p| p.source_id.clone()).unwrap_or_default();
        groups.entry((source, merged.text.clone())).or_default().push(merged);
    }
    groups
        .into_values()
        .map(|mut same| {
            same.sort_by(|a, b| a.id.cmp(&b.id));
            let keep = same[0].id.clone();
            for o in &same[1..] {
                remap.insert(o.id.clone(), keep.clone());
            }
            Observation {
                id: keep,
                text: same[0].text.clone(),
                score: same.iter().map(|o| o.score).fold(0.0, f64::max),
                provenance: merge_provenance(same.into_iter().map(|o| o.provenance)),
            }
        })
        .collect()
}

fn remap_relations(relations: Vec<Relation>, remap: &HashMap<String, String>) -> Vec<Relation> {
    let resolve = |id: &str| remap.get(id).cloned().unwrap_or_else(|| id.to_string());
    let mut by_key: BTreeMap<String, Relation> = BTreeMap::new();
    for r in relations {
        let (subject, object) = (resolve(&r.subject), resolve(&r.object));
        if subject == object {
            continue;
        }
        let id = relation_id(r.kind, &subject, &object);
        match by_key.get_mut(&id) {
            Some(existing) => {
                existing.provenance = merge_provenance([existing.provenance.clone(), r.provenance]);
            }
            None => {
                by_key.insert(
                    id.clone(),
                    Relation {
                        id,
                        kind: r.kind,
                        subject,
                        object,
                        provenance: r.provenance,
                    },
                );
            }
        }
    }
    for r in by_key.values_mut() {
        r.provenance.sort_by(|a, b| canonical_of(a).cmp(&canonical_of(b)));
    }
    by_key.into_values().collect()
}

/// Drops entities under their kind's floor (equal is kept) and relations
/// that lose an endpoint.
pub fn filter_low_confidence(mut state: ContextState, floors: &BTreeMap<EntityKind, f64>) -> ContextState {
    state
        .entities
        .retain(|e| e.confidence >= floors.get(&e.kind).copied().unwrap_or(0.0));
    let ids: BTreeSet<String> = state.item_ids().into_iter().map(str::to_string).collect();
    state
        .relations
        .retain(|r| ids.contains(&r.subject) && ids.contains(&r.object));
    state
}

fn greedy<T>(items: Vec<(f64, String, T)>, cost: impl Fn(&T) -> usize, cap: usize) -> Vec<T> {
    let mut items = items;
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut used = 0;
    let mut out = Vec::new();
    for (_, _, item) in items {
        let c = cost(&item);
        if used + c <= cap {
            used += c;
            out.push(item);
        }
    }
    out
}

/// Greedy admission per field by `(score desc, id asc)`, skipping items that
/// do not fit. Relations need both endpoints admitted and rank by the higher
/// endpoint score. The provenance index is rebuilt from admitted items and
/// trimmed oldest-first to its budget.
pub fn enforce_budget(state: ContextState, budgets: &TokenBudget) -> ContextState {
    let observations = greedy(
        state.observations.into_iter().map(|o| (o.score, o.id.clone(), o)).collect(),
        |o| count_tokens(&render_observation(o)),
        budgets.observations_max,
    );
    let entities = greedy(
        state.entities.into_iter().map(|e| (e.score, e.id.clone(), e)).collect(),
        |e| count_tokens(&render_entity(e)),
        budgets.entities_max,
    );
    let scores: HashMap<&str, f64> = observations
        .iter()
        .map(|o| (o.id.as_str(), o.score))
        .chain(entities.iter().map(|e| (e.id.as_str(), e.score)))
        .collect();
    let candidates: Vec<(f64, String, Relation)> = state
        .relations
        .into_iter()
        .filter_map(|r| {
            let s = scores.get(r.subject.as_str())?;
            let o = scores.get(r.object.as_str())?;
            Some((s.max(*o), r.id.clone(), r))
        })
        .collect();
    let relations = greedy(candidates, |r| count_tokens(&render_relation(r)), budgets.relations_max);
    let mut out = ContextState {
        observations,
        entities,
        relations,
        provenance_index: BTreeMap::new(),
    };
    out.reindex_provenance();
    trim_provenance(&mut out, budgets.provenance_max);
    out
}

fn trim_provenance(state: &mut ContextState, cap: usize) {
    let mut used: usize = state.provenance_index.values().map(|p| count_tokens(&render_provenance(p))).sum();
    if used <= cap {
        return;
    }
    let mut oldest: Vec<(String, Provenance)> =
        state.provenance_index.iter().map(|(k, p)| (k.clone(), p.clone())).collect();
    oldest.sort_by(|a, b| a.1.timestamp.cmp(&b.1.timestamp).then_with(|| a.0.cmp(&b.0)));
    for (key, p) in oldest {
        if used <= cap {
            break;
        }
        used -= count_tokens(&render_provenance(&p));
        state.provenance_index.remove(&key);
    }
}

pub fn compile_context(input: &CompileInput) -> Result<ContextState, CompileError> {
    compile_context_with(input, &LexicalScorer)
}

pub fn compile_context_with(input: &CompileInput, scorer: &dyn Scorer) -> Result<ContextState, CompileError> {
    for (index, f) in input.fragments.iter().enumerate() {
        f.validate().map_err(|source| CompileError::Fragment { index, source })?;
    }
    let mut observations = Vec::new();
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    for f in &input.fragments {
        observations.extend(f.observations.iter().cloned());
        entities.extend(f.entities.iter().cloned());
        relations.extend(f.relations.iter().cloned());
    }
    let (entities, mut remap) = merge_entities_with_map(entities);
    let observations = merge_observations(observations, &mut remap);
    let relations = remap_relations(relations, &remap);
    let mut state = filter_low_confidence(
        ContextState {
            observations,
            entities,
            relations,
            provenance_index: BTreeMap::new(),
        },
        &input.floors,
    );
    for o in &mut state.observations {
        o.score = scorer.score(&o.text, &input.query).clamp(0.0, 1.0);
    }
    for e in &mut state.entities {
        e.score = scorer.score(e.text.as_deref().unwrap_or(""), &input.query).clamp(0.0, 1.0);
    }
    Ok(enforce_budget(state, &input.budgets))
}
