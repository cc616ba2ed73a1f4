//! Logic consistency of a reasoning trace and the final confidence score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{
    classify_attribution, decompose_claims, entity_pr, kas_aggregate, kas_aggregate_mean, matched_entities,
    unit_interval, ClaimError, ClaimScore, DomainError,
};
use crate::config::{LcsMode, ScoringConfig};
use crate::criteria::{CriteriaSet, Diagnosis, RuleOutcome};
use crate::egdr::sections::{
    active_exclusions, assertion_blocks, duration_days, is_none_marker, resolve_diagnosis, scan_sections,
    symptom_items, StepAssertions, CRITERIA_CHECK, DURATION, EXCLUSION_CHECK, FINAL_DIAGNOSIS, RESPONSE_LABELS,
    STEPWISE_REASONING, SYMPTOMS,
};
use crate::egdr::DiagnosticHypothesis;
use crate::kgstore::{EntityId, KnowledgeGraph};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, Embedder, ProviderError};
use crate::retrieval::{claim_triplet_sim, extract_entities, walk_retrieve, RetrievalError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("reasoning has no final diagnosis section")]
    MalformedTrace,
}

#[derive(Debug, Error, PartialEq)]
pub enum LcsError {
    #[error("no criteria for concluded disorder {0}")]
    UnknownDisorder(EntityId),
    #[error("unusable grade from provider: {0:?}")]
    UnparsableGrade(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicTrace {
    pub claimed_symptoms: BTreeSet<EntityId>,
    pub claimed_exclusions: BTreeSet<EntityId>,
    pub claimed_duration_days: Option<u32>,
    /// Assertions per disorder, as stated in the trace.
    pub step_assertions: BTreeMap<EntityId, StepAssertions>,
    pub conclusion: Diagnosis,
}

impl LogicTrace {
    /// Tolerant scan of labeled reasoning text. Unrecognized prose and
    /// unresolvable items are ignored; only a missing or unreadable final
    /// diagnosis is an error.
    pub fn from_text(text: &str, kg: &KnowledgeGraph) -> Result<Self, TraceError> {
        let s = scan_sections(text, &RESPONSE_LABELS);
        let conclusion =
            s.get(FINAL_DIAGNOSIS).and_then(|b| resolve_diagnosis(b, kg)).ok_or(TraceError::MalformedTrace)?;
        let claimed_symptoms = s
            .get(SYMPTOMS)
            .map(|b| symptom_items(b, kg).into_iter().filter_map(|i| i.symptom).collect())
            .unwrap_or_default();
        let claimed_duration_days = s
            .get(DURATION)
            .and_then(|b| b.lines().map(str::trim).find(|l| !l.is_empty()))
            .filter(|l| !is_none_marker(l))
            .and_then(duration_days);

        let mut step_assertions: BTreeMap<EntityId, StepAssertions> = BTreeMap::new();
        let mut claimed_exclusions = BTreeSet::new();
        for label in [CRITERIA_CHECK, EXCLUSION_CHECK, STEPWISE_REASONING] {
            let Some(body) = s.get(label) else { continue };
            for b in assertion_blocks(body, kg) {
                if let Some(id) = b.disorder {
                    step_assertions.entry(id).or_default().merge(b.assertions);
                }
            }
            if let Some((ids, _)) = active_exclusions(body, kg) {
                claimed_exclusions.extend(ids);
            }
        }
        step_assertions.retain(|_, a| !a.is_empty());
        Ok(Self { claimed_symptoms, claimed_exclusions, claimed_duration_days, step_assertions, conclusion })
    }
}

pub fn parse_logic_trace(hypothesis: &DiagnosticHypothesis, kg: &KnowledgeGraph) -> Result<LogicTrace, TraceError> {
    LogicTrace::from_text(&hypothesis.reasoning_text, kg)
}

/// Count, core, exclusions, then duration. The first three are required for
/// a full grade; duration is graded only when asserted.
fn asserted(a: &StepAssertions) -> [Option<bool>; 4] {
    [a.count_met, a.core_met, a.exclusions_clear, a.duration_met]
}

fn truth(o: &RuleOutcome) -> [bool; 4] {
    [o.count_met, o.core_met, o.exclusions_clear, o.duration_met]
}

const REQUIRED_ASSERTIONS: usize = 3;

/// Grade a trace against the rule engine on its own claimed facts:
///
/// * 3: conclusion agrees with the rules and every step assertion is present
///   and correct (for a no-diagnosis conclusion, every assertion made)
/// * 2: conclusion agrees, some assertion wrong or missing
/// * 1: conclusion disagrees, no wrong assertion supports it
/// * 0: conclusion disagrees and a wrong assertion supports it
pub fn logic_consistency_score(trace: &LogicTrace, criteria: &CriteriaSet) -> Result<u8, LcsError> {
    let evaluate = |d: &EntityId| {
        criteria
            .get(d)
            .map(|c| c.evaluate(&trace.claimed_symptoms, &trace.claimed_exclusions, trace.claimed_duration_days))
    };
    match &trace.conclusion {
        Diagnosis::Disorder(d) => {
            let o = evaluate(d).ok_or_else(|| LcsError::UnknownDisorder(d.clone()))?;
            let a = trace.step_assertions.get(d).copied().unwrap_or_default();
            let pairs = asserted(&a).into_iter().zip(truth(&o));
            if o.indicated {
                let all_right = pairs
                    .clone()
                    .enumerate()
                    .all(|(i, (said, t))| said == Some(t) || (i >= REQUIRED_ASSERTIONS && said.is_none()));
                Ok(if all_right { 3 } else { 2 })
            } else {
                let manufactured = pairs.clone().any(|(said, t)| said == Some(true) && !t);
                Ok(if manufactured { 0 } else { 1 })
            }
        }
        Diagnosis::NoDiagnosis => {
            let mut any_indicated = false;
            let mut any_wrong = false;
            let mut manufactured = false;
            for c in criteria.iter() {
                let o = evaluate(&c.disorder).expect("entry exists");
                any_indicated |= o.indicated;
                let Some(a) = trace.step_assertions.get(&c.disorder) else { continue };
                for (said, t) in asserted(a).into_iter().zip(truth(&o)) {
                    if said.is_some_and(|s| s != t) {
                        any_wrong = true;
                        manufactured |= o.indicated && said == Some(false);
                    }
                }
            }
            Ok(match (any_indicated, any_wrong, manufactured) {
                (false, false, _) => 3,
                (false, true, _) => 2,
                (true, _, true) => 0,
                (true, _, false) => 1,
            })
        }
    }
}

const GRADE_SYSTEM: &str = "You grade diagnostic reasoning against DSM-5 rules. \
3 = fully correct logic and conclusion; 2 = partially correct logic, correct conclusion; \
1 = partially correct logic, incorrect conclusion; 0 = contradicts the diagnostic logic. \
Reply with the single digit only.";

/// Provider-graded variant of [`logic_consistency_score`].
pub fn logic_consistency_score_provider(
    reasoning: &str,
    criteria_text: &str,
    provider: &dyn ChatProvider,
    seed: u64,
) -> Result<u8, ScoreError> {
    let prompt = format!("CRITERIA:\n{criteria_text}\n\nREASONING:\n{reasoning}");
    let reply = provider
        .complete(&ChatRequest::new(GRADE_SYSTEM, vec![ChatMessage::user(prompt)], seed))
        .map_err(ScoreError::Grading)?;
    let digits: Vec<u8> = reply.trim().chars().filter_map(|c| c.to_digit(10)).map(|d| d as u8).collect();
    match digits.as_slice() {
        [d @ 0..=3] => Ok(*d),
        _ => Err(ScoreError::Logic(LcsError::UnparsableGrade(reply))),
    }
}

pub fn diagnosis_confidence_score(kas: f64, lcs: u8, lambda: f64) -> Result<f64, DomainError> {
    let kas = unit_interval("kas", kas)?;
    let lambda = unit_interval("lambda", lambda)?;
    if lcs > 3 {
        return Err(DomainError { name: "lcs", value: f64::from(lcs) });
    }
    Ok(lambda * kas + (1.0 - lambda) * (f64::from(lcs) / 3.0))
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("configuration: {0}")]
    Config(DomainError),
    #[error("retrieval: {0}")]
    Retrieval(#[source] RetrievalError),
    #[error("decomposition: {0}")]
    Decomposition(#[source] ClaimError),
    #[error("attribution: {0}")]
    Attribution(#[source] ClaimError),
    #[error("similarity: {0}")]
    Similarity(#[source] ProviderError),
    #[error("scoring: {0}")]
    Scoring(#[source] DomainError),
    #[error("trace parsing: {0}")]
    Trace(#[source] TraceError),
    #[error("logic consistency: {0}")]
    Logic(#[source] LcsError),
    #[error("logic grading: {0}")]
    Grading(#[source] ProviderError),
}

impl ScoreError {
    pub fn stage(&self) -> &'static str {
        match self {
            ScoreError::Config(_) => "configuration",
            ScoreError::Retrieval(_) => "retrieval",
            ScoreError::Decomposition(_) => "decomposition",
            ScoreError::Attribution(_) => "attribution",
            ScoreError::Similarity(_) => "similarity",
            ScoreError::Scoring(_) => "scoring",
            ScoreError::Trace(_) => "trace parsing",
            ScoreError::Logic(_) | ScoreError::Grading(_) => "logic consistency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub alpha: f64,
    pub lambda: f64,
}

/// One scored hypothesis; also the line format of score output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub dialogue_id: String,
    pub diagnosis: Diagnosis,
    pub kas: f64,
    pub lcs: u8,
    pub dcs: f64,
    pub claims: Vec<ClaimScore>,
    pub evidence_triplet_ids: Vec<String>,
    pub config: ConfigSnapshot,
}

/// Backends used while scoring. Without a chat provider, decomposition and
/// attribution fall back to their symbolic forms.
#[derive(Clone, Copy)]
pub struct ScoringProviders<'a> {
    pub chat: Option<&'a dyn ChatProvider>,
    pub embedder: &'a dyn Embedder,
}

pub fn score_reasoning(
    hypothesis: &DiagnosticHypothesis,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    config: &ScoringConfig,
    providers: ScoringProviders<'_>,
) -> Result<ConfidenceReport, ScoreError> {
    config.validate().map_err(ScoreError::Config)?;
    let text = &hypothesis.reasoning_text;
    let seeds = extract_entities(text, kg);
    let evidence =
        walk_retrieve(kg, &seeds, config.retrieval_budget, providers.embedder).map_err(ScoreError::Retrieval)?;
    let claims = decompose_claims(text, kg, providers.chat, config.seed).map_err(ScoreError::Decomposition)?;

    let mut scores = Vec::with_capacity(claims.len());
    for claim in &claims {
        let label =
            classify_attribution(claim, &evidence, kg, providers.chat, config.seed).map_err(ScoreError::Attribution)?;
        let sim = claim_triplet_sim(&claim.text, &evidence, providers.embedder).map_err(ScoreError::Similarity)?;
        let epr = entity_pr(&claim.entities, &matched_entities(claim, &evidence));
        scores.push(ClaimScore::new(claim, label, sim, epr, config.alpha).map_err(ScoreError::Scoring)?);
    }
    let weights: Vec<f64> = scores.iter().map(|s| s.weight).collect();
    let kas = if config.kas_mean_normalized { kas_aggregate_mean(&weights) } else { kas_aggregate(&weights) };

    let lcs = match (config.lcs_mode, providers.chat) {
        (LcsMode::Provider, Some(chat)) => {
            let criteria_text =
                criteria.iter().map(|c| crate::egdr::render_criteria_entry(kg, c)).collect::<Vec<_>>().join("\n");
            logic_consistency_score_provider(text, &criteria_text, chat, config.seed)?
        }
        _ => {
            let trace = parse_logic_trace(hypothesis, kg).map_err(ScoreError::Trace)?;
            logic_consistency_score(&trace, criteria).map_err(ScoreError::Logic)?
        }
    };
    let dcs = diagnosis_confidence_score(kas, lcs, config.lambda).map_err(ScoreError::Scoring)?;
    Ok(ConfidenceReport {
        dialogue_id: hypothesis.dialogue_id.clone(),
        diagnosis: hypothesis.final_diagnosis.clone(),
        kas,
        lcs,
        dcs,
        claims: scores,
        evidence_triplet_ids: evidence.triplet_keys(),
        config: ConfigSnapshot { alpha: config.alpha, lambda: config.lambda },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dcs_arithmetic() {
        assert!((diagnosis_confidence_score(0.582, 0, 0.5).unwrap() - 0.291).abs() < 1e-12);
        assert!((diagnosis_confidence_score(0.99, 3, 0.75).unwrap() - 0.9925).abs() < 1e-12);
        assert!((diagnosis_confidence_score(0.8, 2, 0.75).unwrap() - (0.6 + 0.25 * 2.0 / 3.0)).abs() < 1e-12);
        assert!(diagnosis_confidence_score(1.2, 0, 0.5).is_err());
        assert!(diagnosis_confidence_score(0.5, 4, 0.5).is_err());
        assert!(diagnosis_confidence_score(0.5, 1, -0.1).is_err());
    }
}
