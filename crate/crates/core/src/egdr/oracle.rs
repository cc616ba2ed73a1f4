//! Deterministic responders that answer the diagnosis prompts by reading
//! them. They stand in for a model when recording stub scripts and in
//! calibration experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, LazyLock};

use regex::Regex;

use super::sections::{
    active_exclusions, duration_days, list_item, resolve_item, scan_sections, symptom_items, CANDIDATES,
    CRITERIA_CHECK, DURATION, EXCLUSION_CHECK, SYMPTOMS,
};
use crate::criteria::{best_indicated, CriteriaSet, Diagnosis};
use crate::kgstore::{EntityId, EntityKind, KnowledgeGraph};
use crate::providers::{ChatProvider, ChatRequest, ProviderError, Role};
use crate::retrieval::{extract_mentions, rank_candidate_disorders, DEFAULT_CANDIDATES};

const TASK: &str = "TASK";
const DIALOGUE: &str = "DIALOGUE";
const RANKING: &str = "RANKING";
const KNOWLEDGE: &str = "KNOWLEDGE";
const CRITERIA: &str = "CRITERIA";

const PROMPT_LABELS: [&str; 10] =
    [TASK, DIALOGUE, SYMPTOMS, DURATION, CANDIDATES, KNOWLEDGE, RANKING, CRITERIA, CRITERIA_CHECK, EXCLUSION_CHECK];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePolicy {
    /// Applies the criteria honestly.
    Faithful,
    /// Reports the evidence as found, asserts every check passes and
    /// concludes the top-ranked candidate.
    Overconfident,
}

#[derive(Debug, Clone)]
pub struct OracleResponder {
    kg: Arc<KnowledgeGraph>,
    criteria: Arc<CriteriaSet>,
    policy: OraclePolicy,
}

static TURN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\[(\d+)\] (Patient|Clinician): (.*)$").expect("valid pattern"));

struct Facts {
    symptoms: BTreeMap<EntityId, BTreeSet<usize>>,
    exclusions: BTreeSet<EntityId>,
    duration: Option<u32>,
}

impl OracleResponder {
    pub fn new(kg: Arc<KnowledgeGraph>, criteria: Arc<CriteriaSet>, policy: OraclePolicy) -> Self {
        Self { kg, criteria, policy }
    }

    fn name(&self, id: &EntityId) -> String {
        self.kg.name_of(id).to_string()
    }

    /// Mentions in patient turns of the rendered dialogue.
    fn dialogue_facts(&self, body: &str) -> Facts {
        let mut symptoms: BTreeMap<EntityId, BTreeSet<usize>> = BTreeMap::new();
        let mut exclusions = BTreeSet::new();
        let mut duration: Option<u32> = None;
        for line in body.lines() {
            let Some(c) = TURN_RE.captures(line.trim()) else { continue };
            if &c[2] != "Patient" {
                continue;
            }
            let turn: usize = c[1].parse().unwrap_or_default();
            for m in extract_mentions(&c[3], &self.kg) {
                for id in m.ids {
                    match self.kg.entity(&id).map(|e| e.kind) {
                        Some(EntityKind::Symptom) => {
                            symptoms.entry(id).or_default().insert(turn);
                        }
                        Some(EntityKind::Exclusion) => {
                            exclusions.insert(id);
                        }
                        _ => {}
                    }
                }
            }
            duration = duration.max(duration_days(&c[3]));
        }
        Facts { symptoms, exclusions, duration }
    }

    fn listed(&self, body: Option<&String>, kind: EntityKind) -> Vec<EntityId> {
        let mut seen = BTreeSet::new();
        body.map(|b| {
            b.lines().filter_map(list_item).filter_map(|i| resolve_item(i, &self.kg, kind)).collect::<Vec<_>>()
        })
        .unwrap_or_default()
        .into_iter()
        .filter(|id| seen.insert(id.clone()))
        .collect()
    }

    fn prompt_symptoms(&self, s: &BTreeMap<String, String>) -> BTreeSet<EntityId> {
        s.get(SYMPTOMS)
            .map(|b| symptom_items(b, &self.kg).into_iter().filter_map(|i| i.symptom).collect())
            .unwrap_or_default()
    }

    fn symptoms_section(&self, facts: &Facts) -> String {
        let mut out = String::from("SYMPTOMS:\n");
        if facts.symptoms.is_empty() {
            out.push_str("none\n");
        }
        for (id, turns) in &facts.symptoms {
            let turns: Vec<String> = turns.iter().map(usize::to_string).collect();
            out.push_str(&format!("- {} | turns: {}\n", self.name(id), turns.join(", ")));
        }
        out.push_str(&format!("DURATION: {}\n", facts.duration.map_or("unknown".into(), |d| format!("{d} days"))));
        out
    }

    fn yn(b: bool) -> &'static str {
        if b {
            "yes"
        } else {
            "no"
        }
    }

    fn check_blocks(
        &self,
        candidates: &[EntityId],
        symptoms: &BTreeSet<EntityId>,
        exclusions: &BTreeSet<EntityId>,
        duration: Option<u32>,
        with_exclusions: bool,
    ) -> String {
        let mut out = String::new();
        for id in candidates {
            let outcome =
                self.criteria.get(id).map(|c| (c.evaluate(symptoms, exclusions, duration), c.min_symptom_count));
            let (count, core, clear, dur, detail) = match (self.policy, outcome) {
                (OraclePolicy::Overconfident, _) => (true, true, true, true, String::new()),
                (OraclePolicy::Faithful, Some((o, min))) => (
                    o.count_met,
                    o.core_met,
                    o.exclusions_clear,
                    o.duration_met,
                    format!(" ({} of {} required)", o.matched_symptoms, min),
                ),
                (OraclePolicy::Faithful, None) => (false, false, true, false, String::new()),
            };
            out.push_str(&format!("disorder: {}\n", self.name(id)));
            out.push_str(&format!("symptom count met: {}{}\n", Self::yn(count), detail));
            out.push_str(&format!("core symptom met: {}\n", Self::yn(core)));
            out.push_str(&format!("duration met: {}\n", Self::yn(dur)));
            if with_exclusions {
                out.push_str(&format!("exclusions clear: {}\n", Self::yn(clear)));
            }
        }
        out
    }

    fn exclusion_lines(&self, candidates: &[EntityId], active: &BTreeSet<EntityId>) -> String {
        let list = if active.is_empty() {
            "none".to_string()
        } else {
            active.iter().map(|e| self.name(e)).collect::<Vec<_>>().join(", ")
        };
        let mut out = format!("active exclusions: {list}\n");
        for id in candidates {
            let clear = self.policy == OraclePolicy::Overconfident
                || self.criteria.get(id).is_none_or(|c| c.exclusions.is_disjoint(active));
            out.push_str(&format!("disorder: {}\nexclusions clear: {}\n", self.name(id), Self::yn(clear)));
        }
        out
    }

    fn conclude(
        &self,
        candidates: &[EntityId],
        symptoms: &BTreeSet<EntityId>,
        exclusions: &BTreeSet<EntityId>,
        duration: Option<u32>,
    ) -> Diagnosis {
        match self.policy {
            OraclePolicy::Faithful => {
                best_indicated(candidates.iter().filter_map(|c| self.criteria.get(c)), symptoms, exclusions, duration)
            }
            OraclePolicy::Overconfident => {
                candidates.first().cloned().map_or(Diagnosis::NoDiagnosis, Diagnosis::Disorder)
            }
        }
    }

    fn conclusion_sections(
        &self,
        dx: &Diagnosis,
        symptoms: &BTreeSet<EntityId>,
        exclusions: &BTreeSet<EntityId>,
        duration: Option<u32>,
    ) -> String {
        let mut sentences = Vec::new();
        if symptoms.is_empty() {
            sentences.push("The patient reports no recognizable symptoms.".to_string());
        } else {
            let list: Vec<String> = symptoms.iter().map(|s| self.name(s)).collect();
            sentences.push(format!("The patient reports {}.", list.join(", ")));
        }
        match (dx, self.policy) {
            (Diagnosis::NoDiagnosis, _) => sentences.push("No candidate disorder has all of its criteria met.".into()),
            (Diagnosis::Disorder(d), OraclePolicy::Overconfident) => {
                sentences.push(format!("All criteria for {} are fully met.", self.name(d)));
            }
            (Diagnosis::Disorder(d), OraclePolicy::Faithful) => {
                if let Some(c) = self.criteria.get(d) {
                    let o = c.evaluate(symptoms, exclusions, duration);
                    sentences.push(format!(
                        "{} requires at least {} symptoms and {} are present.",
                        self.name(d),
                        c.min_symptom_count,
                        o.matched_symptoms
                    ));
                }
                if let Some(n) = duration {
                    sentences.push(format!("Symptoms have lasted {n} days."));
                }
            }
        }
        let label = match dx {
            Diagnosis::NoDiagnosis => "no diagnosis".to_string(),
            Diagnosis::Disorder(d) => self.name(d),
        };
        format!("FINAL DIAGNOSIS: {label}\nREASONING:\n{}\n", sentences.join(" "))
    }

    fn respond(&self, prompt: &str) -> Result<String, String> {
        let s = scan_sections(prompt, &PROMPT_LABELS);
        let task = s.get(TASK).map(|t| t.lines().next().unwrap_or_default().trim().to_string()).unwrap_or_default();
        let duration = s.get(DURATION).and_then(|d| duration_days(d));
        let out = match task.as_str() {
            "symptom-extraction" => self.symptoms_section(&self.dialogue_facts(s.get(DIALOGUE).ok_or("no dialogue")?)),
            "candidate-matching" => {
                let ranked = self.listed(s.get(RANKING), EntityKind::Disorder);
                let items: Vec<String> = ranked.iter().map(|d| format!("- {}", self.name(d))).collect();
                format!("CANDIDATES:\n{}\n", if items.is_empty() { "none".into() } else { items.join("\n") })
            }
            "criteria-evaluation" => {
                let cands = self.listed(s.get(CANDIDATES), EntityKind::Disorder);
                let body = self.check_blocks(&cands, &self.prompt_symptoms(&s), &BTreeSet::new(), duration, false);
                format!("CRITERIA CHECK:\n{}", if body.is_empty() { "none\n".into() } else { body })
            }
            "exclusion-check" => {
                let facts = self.dialogue_facts(s.get(DIALOGUE).ok_or("no dialogue")?);
                let cands = self.listed(s.get(CANDIDATES), EntityKind::Disorder);
                format!("EXCLUSION CHECK:\n{}", self.exclusion_lines(&cands, &facts.exclusions))
            }
            "final-diagnosis" => {
                let cands = self.listed(s.get(CANDIDATES), EntityKind::Disorder);
                let symptoms = self.prompt_symptoms(&s);
                let excl = s
                    .get(EXCLUSION_CHECK)
                    .and_then(|b| active_exclusions(b, &self.kg))
                    .map(|(ids, _)| ids)
                    .unwrap_or_default();
                let dx = self.conclude(&cands, &symptoms, &excl, duration);
                self.conclusion_sections(&dx, &symptoms, &excl, duration)
            }
            "direct-diagnosis" | "cot-diagnosis" => {
                let facts = self.dialogue_facts(s.get(DIALOGUE).ok_or("no dialogue")?);
                let symptoms: BTreeSet<EntityId> = facts.symptoms.keys().cloned().collect();
                let ranked: Vec<EntityId> =
                    rank_candidate_disorders(&self.kg, &symptoms, DEFAULT_CANDIDATES).ids().cloned().collect();
                let dx = match self.policy {
                    OraclePolicy::Faithful => self.criteria.silver_label(&symptoms, &facts.exclusions, facts.duration),
                    OraclePolicy::Overconfident => self.conclude(&ranked, &symptoms, &facts.exclusions, facts.duration),
                };
                let mut out = String::new();
                if task == "cot-diagnosis" {
                    out.push_str("STEPWISE REASONING:\n");
                    let list = if facts.exclusions.is_empty() {
                        "none".to_string()
                    } else {
                        facts.exclusions.iter().map(|e| self.name(e)).collect::<Vec<_>>().join(", ")
                    };
                    out.push_str(&format!("active exclusions: {list}\n"));
                    out.push_str(&self.check_blocks(&ranked, &symptoms, &facts.exclusions, facts.duration, true));
                }
                out.push_str(&self.symptoms_section(&facts));
                out.push_str(&self.conclusion_sections(&dx, &symptoms, &facts.exclusions, facts.duration));
                out
            }
            other => return Err(format!("unrecognized task {other:?}")),
        };
        Ok(out.trim_end().to_string())
    }
}

impl ChatProvider for OracleResponder {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let prompt = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .ok_or_else(|| ProviderError::InvalidRequest("no user message".into()))?;
        self.respond(prompt).map_err(ProviderError::InvalidRequest)
    }

    fn identity(&self) -> String {
        match self.policy {
            OraclePolicy::Faithful => "oracle:faithful".into(),
            OraclePolicy::Overconfident => "oracle:overconfident".into(),
        }
    }
}
