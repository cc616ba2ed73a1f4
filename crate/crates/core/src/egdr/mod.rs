//! Five-stage evidence-guided diagnosis and the single-prompt baselines.

pub mod oracle;
pub mod sections;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{CriteriaSet, Diagnosis, DisorderCriteria};
use crate::datasets::Dialogue;
use crate::kgstore::{EntityId, EntityKind, KnowledgeGraph, Relation};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::retrieval::{rank_candidate_disorders, CandidateDisorders, DEFAULT_CANDIDATES};

use sections::{
    active_exclusions, assertion_blocks, duration_days, is_none_marker, list_item, resolve_diagnosis, resolve_item,
    symptom_items, CANDIDATES, CRITERIA_CHECK, DURATION, EXCLUSION_CHECK, FINAL_DIAGNOSIS, REASONING,
    STEPWISE_REASONING, SYMPTOMS,
};
pub use sections::{parse_structured_output, MissingSection, StepAssertions};

pub const DEFAULT_TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum EgdrError {
    #[error("unknown template version {0:?}")]
    UnknownTemplateVersion(String),
    #[error("template placeholder left unfilled: {0}")]
    Template(String),
    #[error("stage {stage}: output unusable after repair: {message}")]
    StageParseFailure { stage: u8, message: String },
    #[error("stage {stage}: {source}")]
    Provider {
        stage: u8,
        #[source]
        source: ProviderError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptingMode {
    Egdr,
    Direct,
    Cot,
}

impl PromptingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptingMode::Egdr => "egdr",
            PromptingMode::Direct => "direct",
            PromptingMode::Cot => "cot",
        }
    }
}

impl fmt::Display for PromptingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prompt template assets of one version.
#[derive(Debug, Clone, Copy)]
pub struct Templates {
    pub version: &'static str,
    pub system: &'static str,
    pub stages: [&'static str; 5],
    pub direct: &'static str,
    pub cot: &'static str,
}

const V1: Templates = Templates {
    version: "v1",
    system: include_str!("../../templates/v1/system.txt"),
    stages: [
        include_str!("../../templates/v1/stage1.txt"),
        include_str!("../../templates/v1/stage2.txt"),
        include_str!("../../templates/v1/stage3.txt"),
        include_str!("../../templates/v1/stage4.txt"),
        include_str!("../../templates/v1/stage5.txt"),
    ],
    direct: include_str!("../../templates/v1/direct.txt"),
    cot: include_str!("../../templates/v1/cot.txt"),
};

impl Templates {
    pub const VERSIONS: [&'static str; 1] = ["v1"];

    pub fn get(version: &str) -> Result<Self, EgdrError> {
        match version {
            "v1" => Ok(V1),
            other => Err(EgdrError::UnknownTemplateVersion(other.to_string())),
        }
    }
}

fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, EgdrError> {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    if let Some(at) = out.find("{{") {
        let end = out[at..].find("}}").map_or(out.len(), |e| at + e + 2);
        return Err(EgdrError::Template(out[at..end].to_string()));
    }
    Ok(out.trim_end().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub stage: u8,
    pub system_text: String,
    pub user_text: String,
    pub expected_sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgdrConfig {
    pub seed: u64,
    pub template_version: String,
}

impl Default for EgdrConfig {
    fn default() -> Self {
        Self { seed: 0, template_version: DEFAULT_TEMPLATE_VERSION.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomEvidence {
    pub symptom: EntityId,
    pub turns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionAnalysis {
    pub disorder: EntityId,
    pub text: String,
    pub assertions: StepAssertions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionAnalysis {
    pub text: String,
    pub asserted_exclusions: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticHypothesis {
    pub dialogue_id: String,
    pub prompting_mode: PromptingMode,
    pub extracted_symptoms: Vec<SymptomEvidence>,
    pub duration_days: Option<u32>,
    pub candidates: CandidateDisorders,
    pub criteria_analysis: Vec<CriterionAnalysis>,
    pub exclusion_analysis: ExclusionAnalysis,
    pub final_diagnosis: Diagnosis,
    pub reasoning_text: String,
}

impl DiagnosticHypothesis {
    pub fn symptom_ids(&self) -> BTreeSet<EntityId> {
        self.extracted_symptoms.iter().map(|s| s.symptom.clone()).collect()
    }
}

// ---- rendering ----

pub fn render_dialogue(d: &Dialogue) -> String {
    d.turns
        .iter()
        .map(|t| {
            format!(
                "[{}] {}: {}",
                t.turn_index,
                t.role.as_str(),
                t.text.split_whitespace().collect::<Vec<_>>().join(" ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn bullet_list<I: IntoIterator<Item = String>>(items: I) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("- {s}")).collect();
    if lines.is_empty() {
        "none".to_string()
    } else {
        lines.join("\n")
    }
}

fn named(kg: &KnowledgeGraph, id: &EntityId) -> String {
    format!("{} [{}]", kg.name_of(id), id)
}

fn render_duration(d: Option<u32>) -> String {
    d.map_or_else(|| "unknown".to_string(), |n| format!("{n} days"))
}

fn render_symptoms(kg: &KnowledgeGraph, symptoms: &[SymptomEvidence]) -> String {
    bullet_list(symptoms.iter().map(|s| named(kg, &s.symptom)))
}

fn render_candidates(kg: &KnowledgeGraph, c: &CandidateDisorders) -> String {
    bullet_list(c.ids().map(|id| named(kg, id)))
}

fn render_ranking(kg: &KnowledgeGraph, c: &CandidateDisorders) -> String {
    bullet_list(c.ranked.iter().map(|(id, s)| format!("{} overlap {s:.3}", named(kg, id))))
}

fn names(kg: &KnowledgeGraph, ids: &BTreeSet<EntityId>) -> String {
    ids.iter().map(|i| kg.name_of(i)).collect::<Vec<_>>().join(", ")
}

pub fn render_criteria_entry(kg: &KnowledgeGraph, c: &DisorderCriteria) -> String {
    let duration = c
        .required_duration_days
        .map_or_else(|| "no minimum duration".to_string(), |d| format!("lasting at least {d} days"));
    let exclusions = if c.exclusions.is_empty() {
        "no exclusions".to_string()
    } else {
        format!("not better explained by {}", names(kg, &c.exclusions))
    };
    format!(
        "{}: at least {} of {}; at least {} core symptom from {}; {}; {}",
        named(kg, &c.disorder),
        c.min_symptom_count,
        names(kg, &c.symptoms),
        c.min_core_count,
        names(kg, &c.core_symptoms),
        duration,
        exclusions
    )
}

fn render_criteria<'a>(kg: &KnowledgeGraph, entries: impl Iterator<Item = &'a DisorderCriteria>) -> String {
    bullet_list(entries.map(|c| render_criteria_entry(kg, c)))
}

/// Verbalized triplets of `relations` whose subject is in `subjects` and, when
/// given, whose object is in `objects`; graph order.
fn render_edges(
    kg: &KnowledgeGraph,
    relations: &[Relation],
    subjects: Option<&BTreeSet<EntityId>>,
    objects: Option<&BTreeSet<EntityId>>,
) -> String {
    bullet_list(
        kg.triplets()
            .iter()
            .filter(|t| relations.contains(&t.relation))
            .filter(|t| subjects.is_none_or(|s| s.contains(&t.subject)))
            .filter(|t| objects.is_none_or(|o| o.contains(&t.object)))
            .map(|t| kg.verbalize(t)),
    )
}

fn sections_of(labels: &[&str]) -> Vec<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

// ---- prompt builders (each stage sees only earlier artifacts) ----

pub fn stage1_prompt(t: &Templates, d: &Dialogue) -> Result<PromptBundle, EgdrError> {
    Ok(PromptBundle {
        stage: 1,
        system_text: t.system.trim().to_string(),
        user_text: render(t.stages[0], &[("dialogue", &render_dialogue(d))])?,
        expected_sections: sections_of(&[SYMPTOMS, DURATION]),
    })
}

pub fn stage2_prompt(
    t: &Templates,
    kg: &KnowledgeGraph,
    symptoms: &[SymptomEvidence],
    ranking: &CandidateDisorders,
) -> Result<PromptBundle, EgdrError> {
    let ids: BTreeSet<EntityId> = symptoms.iter().map(|s| s.symptom.clone()).collect();
    let knowledge = render_edges(kg, &[Relation::HasSymptom], None, Some(&ids));
    Ok(PromptBundle {
        stage: 2,
        system_text: t.system.trim().to_string(),
        user_text: render(
            t.stages[1],
            &[
                ("symptoms", &render_symptoms(kg, symptoms)),
                ("knowledge", &knowledge),
                ("ranking", &render_ranking(kg, ranking)),
            ],
        )?,
        expected_sections: sections_of(&[CANDIDATES]),
    })
}

pub fn stage3_prompt(
    t: &Templates,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    symptoms: &[SymptomEvidence],
    duration: Option<u32>,
    candidates: &CandidateDisorders,
) -> Result<PromptBundle, EgdrError> {
    let ids: BTreeSet<EntityId> = candidates.ids().cloned().collect();
    let entries = candidates.ids().filter_map(|d| criteria.get(d));
    Ok(PromptBundle {
        stage: 3,
        system_text: t.system.trim().to_string(),
        user_text: render(
            t.stages[2],
            &[
                ("symptoms", &render_symptoms(kg, symptoms)),
                ("duration", &render_duration(duration)),
                ("candidates", &render_candidates(kg, candidates)),
                ("criteria", &render_criteria(kg, entries)),
                ("knowledge", &render_edges(kg, &[Relation::HasCriterion], Some(&ids), None)),
            ],
        )?,
        expected_sections: sections_of(&[CRITERIA_CHECK]),
    })
}

pub fn stage4_prompt(
    t: &Templates,
    kg: &KnowledgeGraph,
    d: &Dialogue,
    candidates: &CandidateDisorders,
) -> Result<PromptBundle, EgdrError> {
    let ids: BTreeSet<EntityId> = candidates.ids().cloned().collect();
    Ok(PromptBundle {
        stage: 4,
        system_text: t.system.trim().to_string(),
        user_text: render(
            t.stages[3],
            &[
                ("dialogue", &render_dialogue(d)),
                ("candidates", &render_candidates(kg, candidates)),
                ("knowledge", &render_edges(kg, &[Relation::HasExclusion], Some(&ids), None)),
            ],
        )?,
        expected_sections: sections_of(&[EXCLUSION_CHECK]),
    })
}

pub fn stage5_prompt(
    t: &Templates,
    kg: &KnowledgeGraph,
    symptoms: &[SymptomEvidence],
    duration: Option<u32>,
    candidates: &CandidateDisorders,
    criteria_check: &str,
    exclusion_check: &str,
) -> Result<PromptBundle, EgdrError> {
    Ok(PromptBundle {
        stage: 5,
        system_text: t.system.trim().to_string(),
        user_text: render(
            t.stages[4],
            &[
                ("symptoms", &render_symptoms(kg, symptoms)),
                ("duration", &render_duration(duration)),
                ("candidates", &render_candidates(kg, candidates)),
                ("criteria_check", criteria_check),
                ("exclusion_check", exclusion_check),
            ],
        )?,
        expected_sections: sections_of(&[FINAL_DIAGNOSIS, REASONING]),
    })
}

pub fn baseline_prompt(
    t: &Templates,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    d: &Dialogue,
    mode: PromptingMode,
) -> Result<PromptBundle, EgdrError> {
    let (template, expected) = match mode {
        PromptingMode::Cot => {
            (t.cot, sections_of(&[STEPWISE_REASONING, SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING]))
        }
        _ => (t.direct, sections_of(&[SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING])),
    };
    Ok(PromptBundle {
        stage: 1,
        system_text: t.system.trim().to_string(),
        user_text: render(
            template,
            &[("dialogue", &render_dialogue(d)), ("criteria", &render_criteria(kg, criteria.iter()))],
        )?,
        expected_sections: expected,
    })
}

// ---- stage execution ----

fn repair_message(complaint: &str, expected: &[String]) -> String {
    format!(
        "Your previous reply could not be used: {complaint}. Reply again with the {} section(s) in the requested format.",
        expected.join(", ")
    )
}

/// One provider call, and one repair call carrying the parser's complaint if
/// the first reply is unusable. Returns the parsed value and accepted text.
fn run_stage<T>(
    provider: &dyn ChatProvider,
    bundle: &PromptBundle,
    seed: u64,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<(T, String), EgdrError> {
    let stage = bundle.stage;
    let call = |messages: Vec<ChatMessage>| {
        provider
            .complete(&ChatRequest::new(bundle.system_text.clone(), messages, seed))
            .map_err(|source| EgdrError::Provider { stage, source })
    };
    let mut messages = vec![ChatMessage::user(bundle.user_text.clone())];
    let first = call(messages.clone())?;
    let complaint = match parse(&first) {
        Ok(v) => return Ok((v, first)),
        Err(c) => c,
    };
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user(repair_message(&complaint, &bundle.expected_sections)));
    let second = call(messages)?;
    match parse(&second) {
        Ok(v) => Ok((v, second)),
        Err(message) => Err(EgdrError::StageParseFailure { stage, message }),
    }
}

fn sections(text: &str, expected: &[&str]) -> Result<BTreeMap<String, String>, String> {
    parse_structured_output(text, expected).map_err(|e| e.to_string())
}

fn parse_symptom_body(body: &str, kg: &KnowledgeGraph, d: &Dialogue) -> Result<Vec<SymptomEvidence>, String> {
    if is_none_marker(body) {
        return Ok(Vec::new());
    }
    let items = symptom_items(body, kg);
    if items.is_empty() {
        return Err("no symptom items listed".into());
    }
    let valid_turns: BTreeSet<usize> = d.turns.iter().map(|t| t.turn_index).collect();
    let mut merged: BTreeMap<EntityId, BTreeSet<usize>> = BTreeMap::new();
    for item in items {
        let Some(id) = item.symptom else {
            return Err(format!("unrecognized symptom {:?}", item.raw));
        };
        if item.turns_malformed {
            return Err(format!("malformed turn numbers in {:?}", item.raw));
        }
        if let Some(bad) = item.turns.iter().find(|t| !valid_turns.contains(t)) {
            return Err(format!("turn {bad} does not exist"));
        }
        merged.entry(id).or_default().extend(item.turns);
    }
    Ok(merged
        .into_iter()
        .map(|(symptom, turns)| SymptomEvidence { symptom, turns: turns.into_iter().collect() })
        .collect())
}

fn parse_duration_body(body: &str) -> Result<Option<u32>, String> {
    let first = body.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    if first.is_empty() || is_none_marker(first) {
        return Ok(None);
    }
    duration_days(first).map(Some).ok_or_else(|| format!("unreadable duration {first:?}"))
}

type Stage1 = (Vec<SymptomEvidence>, Option<u32>);

fn parse_stage1(text: &str, kg: &KnowledgeGraph, d: &Dialogue) -> Result<Stage1, String> {
    let s = sections(text, &[SYMPTOMS, DURATION])?;
    Ok((parse_symptom_body(&s[SYMPTOMS], kg, d)?, parse_duration_body(&s[DURATION])?))
}

fn parse_stage2(text: &str, kg: &KnowledgeGraph, ranking: &CandidateDisorders) -> Result<CandidateDisorders, String> {
    let s = sections(text, &[CANDIDATES])?;
    let body = &s[CANDIDATES];
    if is_none_marker(body) {
        return Ok(CandidateDisorders::default());
    }
    let items: Vec<&str> = body.lines().filter_map(list_item).filter(|i| !is_none_marker(i)).collect();
    if items.is_empty() {
        return Err("no candidate items listed".into());
    }
    let mut chosen = BTreeSet::new();
    for item in items {
        let id =
            resolve_item(item, kg, EntityKind::Disorder).ok_or_else(|| format!("unrecognized disorder {item:?}"))?;
        if !ranking.contains(&id) {
            return Err(format!("{} is not among the ranked candidates", kg.name_of(&id)));
        }
        chosen.insert(id);
    }
    Ok(CandidateDisorders { ranked: ranking.ranked.iter().filter(|(id, _)| chosen.contains(id)).cloned().collect() })
}

fn candidate_blocks(
    body: &str,
    kg: &KnowledgeGraph,
    candidates: &CandidateDisorders,
) -> Result<BTreeMap<EntityId, sections::AssertionBlock>, String> {
    let mut out = BTreeMap::new();
    for b in assertion_blocks(body, kg) {
        let id = b.disorder.clone().ok_or_else(|| format!("unrecognized disorder {:?}", b.header))?;
        if !candidates.contains(&id) {
            return Err(format!("{} is not a candidate", kg.name_of(&id)));
        }
        out.entry(id).or_insert(b);
    }
    Ok(out)
}

fn parse_stage3(
    text: &str,
    kg: &KnowledgeGraph,
    candidates: &CandidateDisorders,
) -> Result<Vec<CriterionAnalysis>, String> {
    let s = sections(text, &[CRITERIA_CHECK])?;
    let blocks = candidate_blocks(&s[CRITERIA_CHECK], kg, candidates)?;
    candidates
        .ids()
        .map(|id| {
            let b = blocks.get(id).ok_or_else(|| format!("no block for {}", kg.name_of(id)))?;
            if b.assertions.count_met.is_none() || b.assertions.core_met.is_none() {
                return Err(format!("block for {} lacks a symptom count or core symptom verdict", kg.name_of(id)));
            }
            let assertions = StepAssertions { exclusions_clear: None, ..b.assertions };
            Ok(CriterionAnalysis { disorder: id.clone(), text: b.text.clone(), assertions })
        })
        .collect()
}

type Stage4 = (ExclusionAnalysis, BTreeMap<EntityId, bool>);

fn parse_stage4(text: &str, kg: &KnowledgeGraph, candidates: &CandidateDisorders) -> Result<Stage4, String> {
    let s = sections(text, &[EXCLUSION_CHECK])?;
    let body = &s[EXCLUSION_CHECK];
    let (active, unresolved) = active_exclusions(body, kg).ok_or("missing \"active exclusions\" line")?;
    if let Some(u) = unresolved.first() {
        return Err(format!("unrecognized exclusion {u:?}"));
    }
    let blocks = candidate_blocks(body, kg, candidates)?;
    let mut clear = BTreeMap::new();
    for id in candidates.ids() {
        let verdict = blocks
            .get(id)
            .and_then(|b| b.assertions.exclusions_clear)
            .ok_or_else(|| format!("no exclusions verdict for {}", kg.name_of(id)))?;
        clear.insert(id.clone(), verdict);
    }
    Ok((ExclusionAnalysis { text: body.clone(), asserted_exclusions: active }, clear))
}

fn parse_conclusion(
    s: &BTreeMap<String, String>,
    kg: &KnowledgeGraph,
    allowed: Option<&CandidateDisorders>,
) -> Result<Diagnosis, String> {
    let body = &s[FINAL_DIAGNOSIS];
    let dx = resolve_diagnosis(body, kg).ok_or_else(|| format!("unrecognized diagnosis {body:?}"))?;
    if let (Diagnosis::Disorder(id), Some(c)) = (&dx, allowed) {
        if !c.contains(id) {
            return Err(format!("{} is not a candidate", kg.name_of(id)));
        }
    }
    if s.get(REASONING).is_some_and(|r| r.trim().is_empty()) {
        return Err("empty reasoning".into());
    }
    Ok(dx)
}

/// Run the five stages for one dialogue.
pub fn run_egdr(
    dialogue: &Dialogue,
    provider: &dyn ChatProvider,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    config: &EgdrConfig,
) -> Result<DiagnosticHypothesis, EgdrError> {
    let t = Templates::get(&config.template_version)?;
    let seed = config.seed;

    let p1 = stage1_prompt(&t, dialogue)?;
    let ((symptoms, duration), r1) = run_stage(provider, &p1, seed, |r| parse_stage1(r, kg, dialogue))?;

    let ids: BTreeSet<EntityId> = symptoms.iter().map(|s| s.symptom.clone()).collect();
    let ranking = rank_candidate_disorders(kg, &ids, DEFAULT_CANDIDATES);
    let p2 = stage2_prompt(&t, kg, &symptoms, &ranking)?;
    let (candidates, r2) = run_stage(provider, &p2, seed, |r| parse_stage2(r, kg, &ranking))?;

    let p3 = stage3_prompt(&t, kg, criteria, &symptoms, duration, &candidates)?;
    let (mut analysis, r3) = run_stage(provider, &p3, seed, |r| parse_stage3(r, kg, &candidates))?;

    let p4 = stage4_prompt(&t, kg, dialogue, &candidates)?;
    let ((exclusion_analysis, clear), r4) = run_stage(provider, &p4, seed, |r| parse_stage4(r, kg, &candidates))?;
    for a in &mut analysis {
        a.assertions.exclusions_clear = clear.get(&a.disorder).copied();
    }

    let criteria_check = sections(&r3, &[CRITERIA_CHECK]).map(|mut s| s.remove(CRITERIA_CHECK).unwrap_or_default());
    let p5 = stage5_prompt(
        &t,
        kg,
        &symptoms,
        duration,
        &candidates,
        &criteria_check.unwrap_or_default(),
        &exclusion_analysis.text,
    )?;
    let (final_diagnosis, r5) = run_stage(provider, &p5, seed, |r| {
        parse_conclusion(&sections(r, &[FINAL_DIAGNOSIS, REASONING])?, kg, Some(&candidates))
    })?;

    Ok(DiagnosticHypothesis {
        dialogue_id: dialogue.id.clone(),
        prompting_mode: PromptingMode::Egdr,
        extracted_symptoms: symptoms,
        duration_days: duration,
        candidates,
        criteria_analysis: analysis,
        exclusion_analysis,
        final_diagnosis,
        reasoning_text: [r1, r2, r3, r4, r5].map(|r| r.trim().to_string()).join("\n\n"),
    })
}

struct BaselineParse {
    symptoms: Vec<SymptomEvidence>,
    duration: Option<u32>,
    diagnosis: Diagnosis,
    analysis: Vec<CriterionAnalysis>,
    exclusions: ExclusionAnalysis,
}

fn parse_baseline(text: &str, kg: &KnowledgeGraph, d: &Dialogue, mode: PromptingMode) -> Result<BaselineParse, String> {
    let labels: &[&str] = match mode {
        PromptingMode::Cot => &[STEPWISE_REASONING, SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING],
        _ => &[SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING],
    };
    let s = sections(text, labels)?;
    let symptoms = parse_symptom_body(&s[SYMPTOMS], kg, d)?;
    let duration = parse_duration_body(&s[DURATION])?;
    let diagnosis = parse_conclusion(&s, kg, None)?;
    let mut analysis = Vec::new();
    let mut exclusions = ExclusionAnalysis::default();
    if let Some(steps) = s.get(STEPWISE_REASONING) {
        let mut seen = BTreeSet::new();
        for b in assertion_blocks(steps, kg) {
            if let Some(id) = b.disorder.filter(|id| seen.insert(id.clone())) {
                analysis.push(CriterionAnalysis { disorder: id, text: b.text, assertions: b.assertions });
            }
        }
        if let Some((ids, _)) = active_exclusions(steps, kg) {
            exclusions = ExclusionAnalysis { text: steps.clone(), asserted_exclusions: ids };
        }
    }
    Ok(BaselineParse { symptoms, duration, diagnosis, analysis, exclusions })
}

/// Single-prompt Direct or CoT diagnosis given the full criteria text.
pub fn run_baseline(
    dialogue: &Dialogue,
    provider: &dyn ChatProvider,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    mode: PromptingMode,
    config: &EgdrConfig,
) -> Result<DiagnosticHypothesis, EgdrError> {
    let mode = if mode == PromptingMode::Egdr { PromptingMode::Direct } else { mode };
    let t = Templates::get(&config.template_version)?;
    let bundle = baseline_prompt(&t, kg, criteria, dialogue, mode)?;
    let (p, text) = run_stage(provider, &bundle, config.seed, |r| parse_baseline(r, kg, dialogue, mode))?;
    let ids: BTreeSet<EntityId> = p.symptoms.iter().map(|s| s.symptom.clone()).collect();
    Ok(DiagnosticHypothesis {
        dialogue_id: dialogue.id.clone(),
        prompting_mode: mode,
        extracted_symptoms: p.symptoms,
        duration_days: p.duration,
        candidates: rank_candidate_disorders(kg, &ids, DEFAULT_CANDIDATES),
        criteria_analysis: p.analysis,
        exclusion_analysis: p.exclusions,
        final_diagnosis: p.diagnosis,
        reasoning_text: text.trim().to_string(),
    })
}

/// Dispatch on mode.
pub fn diagnose(
    dialogue: &Dialogue,
    provider: &dyn ChatProvider,
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
    mode: PromptingMode,
    config: &EgdrConfig,
) -> Result<DiagnosticHypothesis, EgdrError> {
    match mode {
        PromptingMode::Egdr => run_egdr(dialogue, provider, kg, criteria, config),
        m => run_baseline(dialogue, provider, kg, criteria, m, config),
    }
}
