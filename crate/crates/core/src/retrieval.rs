//! Entity extraction, candidate-disorder ranking and graph-walk retrieval of
//! the evidence subgraph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{tokens, EntityId, EntityKind, KnowledgeGraph, Triplet};
use crate::providers::{cosine, Embedder, ProviderError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("seed entity not found: {0}")]
    NotFound(EntityId),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One alias match in normalized token space, `start..end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub ids: BTreeSet<EntityId>,
    pub start: usize,
    pub end: usize,
}

/// Greedy longest-match scan of the normalized text against the alias index.
pub fn extract_mentions(text: &str, kg: &KnowledgeGraph) -> Vec<Mention> {
    let toks = tokens(text);
    let index = kg.alias_index();
    let max = kg.max_alias_tokens();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let longest = max.min(toks.len() - i);
        let hit = (1..=longest).rev().find_map(|len| {
            let ids: BTreeSet<EntityId> = index
                .get(&toks[i..i + len].join(" "))?
                .iter()
                .filter(|id| kg.entity(id).is_some_and(|e| e.kind != EntityKind::Root))
                .cloned()
                .collect();
            (!ids.is_empty()).then_some((len, ids))
        });
        match hit {
            Some((len, ids)) => {
                out.push(Mention { ids, start: i, end: i + len });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Pluggable entity extraction; the default is the lexicon matcher.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str, kg: &KnowledgeGraph) -> BTreeSet<EntityId>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LexiconExtractor;

impl EntityExtractor for LexiconExtractor {
    fn extract(&self, text: &str, kg: &KnowledgeGraph) -> BTreeSet<EntityId> {
        extract_entities(text, kg)
    }
}

pub fn extract_entities(text: &str, kg: &KnowledgeGraph) -> BTreeSet<EntityId> {
    extract_mentions(text, kg).into_iter().flat_map(|m| m.ids).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateDisorders {
    pub ranked: Vec<(EntityId, f64)>,
}

impl CandidateDisorders {
    pub fn ids(&self) -> impl Iterator<Item = &EntityId> {
        self.ranked.iter().map(|(id, _)| id)
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.ids().any(|c| c == id)
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

pub const DEFAULT_CANDIDATES: usize = 3;

/// Disorders ranked by the fraction of their has_symptom set that is present.
pub fn rank_candidate_disorders(kg: &KnowledgeGraph, symptoms: &BTreeSet<EntityId>, k: usize) -> CandidateDisorders {
    let mut scored: Vec<(EntityId, f64)> = kg
        .disorders()
        .filter_map(|d| {
            let own = kg.symptoms_of(d);
            let overlap = own.intersection(symptoms).count();
            (overlap > 0).then(|| (d.clone(), overlap as f64 / own.len().max(1) as f64))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    CandidateDisorders { ranked: scored }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub triplet: Triplet,
    pub text: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    pub seed_entities: BTreeSet<EntityId>,
    /// Non-increasing relevance.
    pub triplets: Vec<ScoredTriplet>,
    pub budget_used: usize,
}

impl RetrievedEvidence {
    pub fn entities(&self) -> BTreeSet<EntityId> {
        self.triplets.iter().flat_map(|s| [s.triplet.subject.clone(), s.triplet.object.clone()]).collect()
    }

    pub fn triplet_keys(&self) -> Vec<String> {
        self.triplets.iter().map(|s| s.triplet.key()).collect()
    }
}

pub const DEFAULT_BUDGET: usize = 32;

/// Ring-by-ring walk outward from the seeds. Each ring is the set of
/// not-yet-emitted triplets touching a visited entity; within a ring,
/// triplets are emitted highest relevance first, where relevance is
/// `0.5 * symbolic + 0.5 * semantic`:
///
/// * symbolic: fraction of the triplet's two endpoints already visited
/// * semantic: cosine (clamped to `[0, 1]`) between the verbalized triplet and
///   the seeds' names joined in id order
///
/// Edges to or from the root are structural and never walked. The walk stops
/// when `budget` triplets have been emitted or no ring remains.
pub fn walk_retrieve(
    kg: &KnowledgeGraph,
    seeds: &BTreeSet<EntityId>,
    budget: usize,
    embedder: &dyn Embedder,
) -> Result<RetrievedEvidence, RetrievalError> {
    if let Some(missing) = seeds.iter().find(|s| kg.entity(s).is_none()) {
        return Err(RetrievalError::NotFound(missing.clone()));
    }
    let mut evidence = RetrievedEvidence { seed_entities: seeds.clone(), ..Default::default() };
    if budget == 0 || seeds.is_empty() {
        return Ok(evidence);
    }

    let query_text = seeds.iter().map(|s| kg.name_of(s)).collect::<Vec<_>>().join(" ");
    let query = embedder.embed(&query_text)?;
    let root = kg.root();
    let all = kg.triplets();

    let mut visited: BTreeSet<EntityId> = seeds.clone();
    let mut emitted: BTreeSet<usize> = BTreeSet::new();
    let mut semantic_cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut out: Vec<(usize, f64)> = Vec::new();

    while out.len() < budget {
        let ring: BTreeSet<usize> = visited
            .iter()
            .flat_map(|e| kg.incident(e))
            .filter(|i| !emitted.contains(i))
            .filter(|&i| &all[i].subject != root && &all[i].object != root)
            .collect();
        if ring.is_empty() {
            break;
        }
        let mut scored = Vec::with_capacity(ring.len());
        for i in ring {
            let t = &all[i];
            let symbolic = [&t.subject, &t.object].iter().filter(|e| visited.contains(**e)).count() as f64 / 2.0;
            let semantic = match semantic_cache.get(&i) {
                Some(s) => *s,
                None => {
                    let s = cosine(&embedder.embed(&kg.verbalize(t))?, &query).clamp(0.0, 1.0);
                    semantic_cache.insert(i, s);
                    s
                }
            };
            scored.push((i, 0.5 * symbolic + 0.5 * semantic));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(budget - out.len());
        for &(i, _) in &scored {
            emitted.insert(i);
        }
        for &(i, _) in &scored {
            visited.insert(all[i].subject.clone());
            visited.insert(all[i].object.clone());
        }
        out.extend(scored);
    }

    // stable sort keeps ring order among equal scores
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    evidence.budget_used = out.len();
    evidence.triplets = out
        .into_iter()
        .map(|(i, relevance)| ScoredTriplet { triplet: all[i].clone(), text: kg.verbalize(&all[i]), relevance })
        .collect();
    Ok(evidence)
}

/// Max over evidence triplets of the clamped cosine between the claim and the
/// verbalized triplet; 0 for empty evidence.
pub fn claim_triplet_sim(
    claim_text: &str,
    evidence: &RetrievedEvidence,
    embedder: &dyn Embedder,
) -> Result<f64, ProviderError> {
    if evidence.triplets.is_empty() {
        return Ok(0.0);
    }
    let claim = embedder.embed(claim_text)?;
    let mut best: f64 = 0.0;
    for t in &evidence.triplets {
        best = best.max(cosine(&claim, &embedder.embed(&t.text)?).clamp(0.0, 1.0));
    }
    Ok(best)
}
