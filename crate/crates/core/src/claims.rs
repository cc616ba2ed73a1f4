//! Claim decomposition, attribution classification and the knowledge
//! attribution score.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{tokens, EntityId, EntityKind, KnowledgeGraph};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::retrieval::{extract_entities, extract_mentions, RetrievedEvidence};

#[derive(Debug, Error)]
pub enum ClaimError {
    #[error("reasoning text is empty")]
    EmptyReasoning,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unparsable attribution label: {0:?}")]
    UnparsableLabel(String),
}

#[derive(Debug, Error, PartialEq)]
#[error("{name} = {value} is outside [0, 1]")]
pub struct DomainError {
    pub name: &'static str,
    pub value: f64,
}

pub(crate) fn unit_interval(name: &'static str, value: f64) -> Result<f64, DomainError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(DomainError { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: usize,
    pub text: String,
    pub entities: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionLabel {
    Attributable,
    Extrapolatory,
    Contradictory,
    NoAttribution,
}

impl AttributionLabel {
    pub const ALL: [AttributionLabel; 4] = [
        AttributionLabel::Attributable,
        AttributionLabel::Extrapolatory,
        AttributionLabel::Contradictory,
        AttributionLabel::NoAttribution,
    ];

    /// Symbolic score.
    pub fn cs(self) -> f64 {
        match self {
            AttributionLabel::Attributable => 2.0,
            AttributionLabel::Extrapolatory => 1.0,
            AttributionLabel::Contradictory => -1.0,
            AttributionLabel::NoAttribution => 0.0,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AttributionLabel::Attributable => "Attributable",
            AttributionLabel::Extrapolatory => "Extrapolatory",
            AttributionLabel::Contradictory => "Contradictory",
            AttributionLabel::NoAttribution => "No Attribution",
        }
    }

    /// Accepts exactly one label name anywhere in the first non-empty line.
    pub fn parse_response(text: &str) -> Option<Self> {
        let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
        let toks = tokens(line);
        let has = |w: &[&str]| toks.windows(w.len()).any(|win| win.iter().zip(w).all(|(a, b)| a == b));
        let found: Vec<Self> = [
            (AttributionLabel::Attributable, has(&["attributable"])),
            (AttributionLabel::Extrapolatory, has(&["extrapolatory"])),
            (AttributionLabel::Contradictory, has(&["contradictory"])),
            (AttributionLabel::NoAttribution, has(&["no", "attribution"])),
        ]
        .into_iter()
        .filter_map(|(l, hit)| hit.then_some(l))
        .collect();
        match found.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }
}

impl fmt::Display for AttributionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

const DECOMPOSE_SYSTEM: &str = "You split diagnostic reasoning into atomic, independently verifiable claims. \
Return one claim per line and nothing else.";

const CLASSIFY_SYSTEM: &str = "You judge whether a claim is supported by knowledge-graph triplets. \
Answer with exactly one label: Attributable, Extrapolatory, Contradictory, or No Attribution.";

/// Split reasoning into claims. With a provider, claims are the non-empty
/// lines of its response; without one, text is split at terminal punctuation
/// and line breaks.
pub fn decompose_claims(
    reasoning: &str,
    kg: &KnowledgeGraph,
    provider: Option<&dyn ChatProvider>,
    seed: u64,
) -> Result<Vec<Claim>, ClaimError> {
    if reasoning.trim().is_empty() {
        return Err(ClaimError::EmptyReasoning);
    }
    let texts = match provider {
        Some(p) => {
            let req = ChatRequest::new(DECOMPOSE_SYSTEM, vec![ChatMessage::user(reasoning)], seed);
            p.complete(&req)?.lines().map(strip_list_marker).filter(|l| !l.is_empty()).map(str::to_string).collect()
        }
        None => split_sentences(reasoning),
    };
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(id, text)| {
            let entities = extract_entities(&text, kg);
            Claim { id, text, entities }
        })
        .collect())
}

fn strip_list_marker(line: &str) -> &str {
    let l = line.trim();
    let l = l.trim_start_matches(['-', '*', '•']).trim_start();
    // "12. " or "3) "
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &l[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    l
}

pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = strip_list_marker(line);
        let mut start = 0;
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        for (k, &(i, c)) in chars.iter().enumerate() {
            let at_boundary = chars.get(k + 1).is_none_or(|(_, n)| n.is_whitespace());
            if matches!(c, '.' | '!' | '?') && at_boundary {
                out.push(line[start..i + c.len_utf8()].trim().to_string());
                start = i + c.len_utf8();
            }
        }
        out.push(line[start..].trim().to_string());
    }
    out.retain(|s| !s.is_empty() && s.chars().any(char::is_alphanumeric));
    out
}

/// Fixed negation lexicon of the symbolic classifier.
pub const NEGATION_TOKENS: [&str; 4] = ["no", "not", "denies", "never"];

/// Classify with the provider (one repair retry) or, without one, with the
/// symbolic rules.
pub fn classify_attribution(
    claim: &Claim,
    evidence: &RetrievedEvidence,
    kg: &KnowledgeGraph,
    provider: Option<&dyn ChatProvider>,
    seed: u64,
) -> Result<AttributionLabel, ClaimError> {
    let Some(p) = provider else {
        return Ok(classify_symbolic(claim, evidence, kg));
    };
    let triplets: String = evidence.triplets.iter().map(|t| format!("- {}\n", t.text)).collect();
    let prompt = format!("CLAIM:\n{}\n\nTRIPLETS:\n{}", claim.text, triplets);
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = p.complete(&ChatRequest::new(CLASSIFY_SYSTEM, messages.clone(), seed))?;
    if let Some(l) = AttributionLabel::parse_response(&first) {
        return Ok(l);
    }
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(
        "That answer did not name exactly one label. Reply with one of: Attributable, Extrapolatory, Contradictory, No Attribution.",
    ));
    let second = p.complete(&ChatRequest::new(CLASSIFY_SYSTEM, messages, seed))?;
    AttributionLabel::parse_response(&second).ok_or(ClaimError::UnparsableLabel(second))
}

/// Evidence triplets that fully match the claim: both endpoints named by the
/// claim, or, for a claim naming no disorder, any triplet touching one of its
/// entities provided every claim entity occurs in the evidence.
fn full_matches<'a>(
    claim: &Claim,
    evidence: &'a RetrievedEvidence,
    kg: &KnowledgeGraph,
) -> Vec<&'a crate::kgstore::Triplet> {
    let c = &claim.entities;
    let linked: Vec<_> = evidence
        .triplets
        .iter()
        .map(|s| &s.triplet)
        .filter(|t| c.contains(&t.subject) && c.contains(&t.object))
        .collect();
    if !linked.is_empty() {
        return linked;
    }
    let names_disorder = c.iter().any(|e| kg.entity(e).is_some_and(|e| e.kind == EntityKind::Disorder));
    let ev = evidence.entities();
    if c.is_empty() || names_disorder || !c.is_subset(&ev) {
        return Vec::new();
    }
    evidence.triplets.iter().map(|s| &s.triplet).filter(|t| c.contains(&t.subject) || c.contains(&t.object)).collect()
}

pub fn classify_symbolic(claim: &Claim, evidence: &RetrievedEvidence, kg: &KnowledgeGraph) -> AttributionLabel {
    let matches = full_matches(claim, evidence, kg);
    if !matches.is_empty() {
        let matched: BTreeSet<&EntityId> = matches.iter().flat_map(|t| [&t.subject, &t.object]).collect();
        return if negated_before(&claim.text, kg, &matched) {
            AttributionLabel::Contradictory
        } else {
            AttributionLabel::Attributable
        };
    }
    if claim.entities.is_disjoint(&evidence.entities()) {
        AttributionLabel::NoAttribution
    } else {
        AttributionLabel::Extrapolatory
    }
}

/// True when a negation token precedes a mention of one of `targets`.
fn negated_before(text: &str, kg: &KnowledgeGraph, targets: &BTreeSet<&EntityId>) -> bool {
    let toks = tokens(text);
    let mentions = extract_mentions(text, kg);
    let last_target = mentions.iter().filter(|m| m.ids.iter().any(|id| targets.contains(id))).map(|m| m.start).max();
    let Some(last_start) = last_target else { return false };
    // a negation token inside some other mention (e.g. "no energy") is part of that alias
    let inside_mention = |i: usize| mentions.iter().any(|m| (m.start..m.end).contains(&i));
    toks.iter().enumerate().take(last_start).any(|(i, t)| NEGATION_TOKENS.contains(&t.as_str()) && !inside_mention(i))
}

/// Endpoints of the evidence triplet sharing the most entities with the
/// claim (earliest-ranked on ties); empty when nothing overlaps.
pub fn matched_entities(claim: &Claim, evidence: &RetrievedEvidence) -> BTreeSet<EntityId> {
    let mut best: Option<(usize, &crate::kgstore::Triplet)> = None;
    for s in &evidence.triplets {
        let t = &s.triplet;
        let overlap = [&t.subject, &t.object].iter().filter(|e| claim.entities.contains(**e)).count();
        if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, t));
        }
    }
    best.map(|(_, t)| BTreeSet::from([t.subject.clone(), t.object.clone()])).unwrap_or_default()
}

/// Harmonic mean of entity precision and recall. Empty denominators count as
/// 1; both zero gives 0.
pub fn entity_pr(claim_entities: &BTreeSet<EntityId>, evidence_entities: &BTreeSet<EntityId>) -> f64 {
    let inter = claim_entities.intersection(evidence_entities).count() as f64;
    let precision = if claim_entities.is_empty() { 1.0 } else { inter / claim_entities.len() as f64 };
    let recall = if evidence_entities.is_empty() { 1.0 } else { inter / evidence_entities.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn triplet_match_score(sim: f64, epr: f64, alpha: f64) -> Result<f64, DomainError> {
    let sim = unit_interval("sim", sim)?;
    let epr = unit_interval("epr", epr)?;
    let alpha = unit_interval("alpha", alpha)?;
    Ok(alpha * sim + (1.0 - alpha) * epr)
}

pub fn claim_weight(label: AttributionLabel, tms: f64) -> f64 {
    label.cs() * tms
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum in sorted order so the result is exactly independent of claim order.
fn ordered_sum(weights: &[f64]) -> f64 {
    let mut w = weights.to_vec();
    w.sort_by(f64::total_cmp);
    w.iter().sum()
}

/// Sigmoid of the summed claim weights; 0.5 for no claims.
pub fn kas_aggregate(weights: &[f64]) -> f64 {
    sigmoid(ordered_sum(weights))
}

/// Sigmoid of the mean weight. Not the default; see `ScoringConfig`.
pub fn kas_aggregate_mean(weights: &[f64]) -> f64 {
    if weights.is_empty() {
        return 0.5;
    }
    sigmoid(ordered_sum(weights) / weights.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimScore {
    pub text: String,
    pub label: AttributionLabel,
    pub sim: f64,
    pub epr: f64,
    pub tms: f64,
    pub weight: f64,
}

impl ClaimScore {
    pub fn new(claim: &Claim, label: AttributionLabel, sim: f64, epr: f64, alpha: f64) -> Result<Self, DomainError> {
        let tms = triplet_match_score(sim, epr, alpha)?;
        Ok(Self { text: claim.text.clone(), label, sim, epr, tms, weight: claim_weight(label, tms) })
    }

    /// Weight under a different alpha, holding label, sim and epr fixed.
    pub fn reweighted(&self, alpha: f64) -> Result<f64, DomainError> {
        Ok(claim_weight(self.label, triplet_match_score(self.sim, self.epr, alpha)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgstore::Triplet;
    use crate::providers::{LocalEmbedder, StubProvider};
    use crate::retrieval::{walk_retrieve, ScoredTriplet};

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/kg.jsonl")).unwrap()
    }

    fn ids(xs: &[&str]) -> BTreeSet<EntityId> {
        xs.iter().map(|s| EntityId::from(*s)).collect()
    }

    fn claim(kg: &KnowledgeGraph, text: &str) -> Claim {
        Claim { id: 0, text: text.into(), entities: extract_entities(text, kg) }
    }

    fn evidence_of(kg: &KnowledgeGraph, keys: &[(&str, &str)]) -> RetrievedEvidence {
        let triplets = keys
            .iter()
            .map(|(s, o)| {
                let t: &Triplet =
                    kg.triplets().iter().find(|t| t.subject.as_str() == *s && t.object.as_str() == *o).unwrap();
                ScoredTriplet { triplet: t.clone(), text: kg.verbalize(t), relevance: 1.0 }
            })
            .collect();
        RetrievedEvidence { triplets, budget_used: keys.len(), ..Default::default() }
    }

    #[test]
    fn fallback_split() {
        let kg = kg();
        let c = decompose_claims("I feel sad. I can't sleep! Is it bad?", &kg, None, 0).unwrap();
        assert_eq!(
            c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(),
            ["I feel sad.", "I can't sleep!", "Is it bad?"]
        );
        assert_eq!(c[1].entities, ids(&["sym_insomnia"]));
        assert!(matches!(decompose_claims("  ", &kg, None, 0), Err(ClaimError::EmptyReasoning)));
        assert_eq!(
            split_sentences("SYMPTOMS:\n- depressed mood\n1. Fatigue is present."),
            ["SYMPTOMS:", "depressed mood", "Fatigue is present."]
        );
        assert_eq!(split_sentences("Score 0.5 here."), ["Score 0.5 here."]);
    }

    #[test]
    fn provider_split() {
        let kg = kg();
        let mut stub = StubProvider::default();
        let req = ChatRequest::new(DECOMPOSE_SYSTEM, vec![ChatMessage::user("Long reasoning.")], 3);
        stub.insert(&req, "- MDD has symptom depressed mood\n\n2. Patient reports insomnia\n");
        let c = decompose_claims("Long reasoning.", &kg, Some(&stub), 3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].text, "Patient reports insomnia");
        assert_eq!(c[0].entities, ids(&["dis_mdd", "sym_depressed_mood"]));
    }

    #[test]
    fn symbolic_classification_cases() {
        let kg = kg();
        let ev = evidence_of(&kg, &[("dis_mdd", "sym_depressed_mood"), ("dis_pdd", "sym_hopelessness")]);
        let c = claim(&kg, "MDD has symptom depressed mood");
        assert_eq!(classify_symbolic(&c, &ev, &kg), AttributionLabel::Attributable);
        let c = claim(&kg, "Patient denies depressed mood");
        assert_eq!(classify_symbolic(&c, &ev, &kg), AttributionLabel::Contradictory);
        let c = claim(&kg, "It was sunny and warm on Tuesday");
        assert_eq!(classify_symbolic(&c, &ev, &kg), AttributionLabel::NoAttribution);
        // both entities are in the evidence but the MDD-hopelessness edge is not
        let c = claim(&kg, "MDD has symptom hopelessness");
        assert_eq!(classify_symbolic(&c, &ev, &kg), AttributionLabel::Extrapolatory);
        // "no energy" is an alias, not a negation of fatigue
        let ev2 = evidence_of(&kg, &[("dis_mdd", "sym_fatigue")]);
        let c = claim(&kg, "Patient has no energy");
        assert_eq!(classify_symbolic(&c, &ev2, &kg), AttributionLabel::Attributable);
    }

    #[test]
    fn extrapolatory_when_edge_not_retrieved() {
        let kg = kg();
        let ev = evidence_of(&kg, &[("dis_mdd", "sym_anhedonia"), ("dis_pdd", "sym_depressed_mood")]);
        let c = claim(&kg, "Major depressive disorder has symptom depressed mood");
        assert_eq!(classify_symbolic(&c, &ev, &kg), AttributionLabel::Extrapolatory);
    }

    #[test]
    fn provider_labels_with_repair() {
        let kg = kg();
        let ev = walk_retrieve(&kg, &ids(&["dis_mdd"]), 3, &LocalEmbedder::default()).unwrap();
        let c = claim(&kg, "MDD has symptom fatigue");
        let triplets: String = ev.triplets.iter().map(|t| format!("- {}\n", t.text)).collect();
        let first = vec![ChatMessage::user(format!("CLAIM:\n{}\n\nTRIPLETS:\n{}", c.text, triplets))];
        let mut stub = StubProvider::default();
        stub.insert(&ChatRequest::new(CLASSIFY_SYSTEM, first.clone(), 0), "I think it is probably fine");
        let mut second = first.clone();
        second.push(ChatMessage::assistant("I think it is probably fine"));
        second.push(ChatMessage::user(
            "That answer did not name exactly one label. Reply with one of: Attributable, Extrapolatory, Contradictory, No Attribution.",
        ));
        stub.insert(&ChatRequest::new(CLASSIFY_SYSTEM, second.clone(), 0), "Extrapolatory.");
        assert_eq!(classify_attribution(&c, &ev, &kg, Some(&stub), 0).unwrap(), AttributionLabel::Extrapolatory);

        stub.insert(&ChatRequest::new(CLASSIFY_SYSTEM, second, 0), "maybe");
        assert!(matches!(classify_attribution(&c, &ev, &kg, Some(&stub), 0), Err(ClaimError::UnparsableLabel(_))));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(AttributionLabel::parse_response("No Attribution"), Some(AttributionLabel::NoAttribution));
        assert_eq!(AttributionLabel::parse_response("\n  attributable\nbecause"), Some(AttributionLabel::Attributable));
        assert_eq!(AttributionLabel::parse_response("Attributable or Contradictory"), None);
        assert_eq!(AttributionLabel::parse_response(""), None);
    }

    #[test]
    fn epr_examples() {
        let ab = ids(&["a", "b"]);
        assert_eq!(entity_pr(&ab, &ab), 1.0);
        assert!((entity_pr(&ab, &ids(&["a"])) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(entity_pr(&ab, &ids(&["c"])), 0.0);
        assert_eq!(entity_pr(&BTreeSet::new(), &BTreeSet::new()), 1.0);
    }

    #[test]
    fn tms_and_weights() {
        assert!((triplet_match_score(0.8, 0.6, 0.5).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(triplet_match_score(0.3, 0.9, 1.0).unwrap(), 0.3);
        assert_eq!(triplet_match_score(0.3, 0.9, 0.0).unwrap(), 0.9);
        assert_eq!(triplet_match_score(1.2, 0.5, 0.5), Err(DomainError { name: "sim", value: 1.2 }));
        assert!(triplet_match_score(0.5, 0.5, -0.1).is_err());
        assert!((claim_weight(AttributionLabel::Attributable, 0.7) - 1.4).abs() < 1e-12);
        assert_eq!(claim_weight(AttributionLabel::Contradictory, 0.5), -0.5);
        assert_eq!(claim_weight(AttributionLabel::NoAttribution, 0.9), 0.0);
    }

    #[test]
    fn kas_examples() {
        assert_eq!(kas_aggregate(&[]), 0.5);
        assert!((kas_aggregate(&[2.0]) - 0.8808).abs() < 1e-4);
        assert!((kas_aggregate(&[1.4, -0.5]) - 0.7109).abs() < 1e-4);
        assert_eq!(kas_aggregate_mean(&[]), 0.5);
        assert!((kas_aggregate_mean(&[2.0, 0.0]) - sigmoid(1.0)).abs() < 1e-15);
    }

    #[test]
    fn matched_entities_prefers_linked_triplet() {
        let kg = kg();
        let ev = evidence_of(&kg, &[("dis_pdd", "sym_depressed_mood"), ("dis_mdd", "sym_depressed_mood")]);
        let c = claim(&kg, "MDD has symptom depressed mood");
        assert_eq!(matched_entities(&c, &ev), ids(&["dis_mdd", "sym_depressed_mood"]));
        let single = claim(&kg, "feeling down");
        assert_eq!(matched_entities(&single, &ev), ids(&["dis_pdd", "sym_depressed_mood"]));
        assert!(matched_entities(&claim(&kg, "weather"), &ev).is_empty());
    }
}
