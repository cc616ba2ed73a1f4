//! Executable diagnostic criteria: symptom count, core symptoms, exclusions
//! and duration, plus silver labelling from gold symptom annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::kgstore::{EntityId, EntityKind, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("cannot read criteria: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity: {0}")]
    Integrity(String),
}

/// A diagnostic conclusion: one disorder, or none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Diagnosis {
    Disorder(EntityId),
    NoDiagnosis,
}

impl Diagnosis {
    pub const NONE_LABEL: &'static str = "no_diagnosis";

    pub fn disorder(&self) -> Option<&EntityId> {
        match self {
            Diagnosis::Disorder(d) => Some(d),
            Diagnosis::NoDiagnosis => None,
        }
    }

    pub fn as_label(&self) -> &str {
        match self {
            Diagnosis::Disorder(d) => d.as_str(),
            Diagnosis::NoDiagnosis => Self::NONE_LABEL,
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_label())
    }
}

impl FromStr for Diagnosis {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == Self::NONE_LABEL { Diagnosis::NoDiagnosis } else { Diagnosis::Disorder(EntityId::new(s)) })
    }
}

impl Serialize for Diagnosis {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_label())
    }
}

impl<'de> Deserialize<'de> for Diagnosis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisorderCriteria {
    pub disorder: EntityId,
    pub min_symptom_count: usize,
    pub core_symptoms: BTreeSet<EntityId>,
    pub min_core_count: usize,
    pub required_duration_days: Option<u32>,
    pub exclusions: BTreeSet<EntityId>,
    /// has_symptom set of the disorder in the companion graph.
    pub symptoms: BTreeSet<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub count_met: bool,
    pub core_met: bool,
    pub exclusions_clear: bool,
    pub duration_met: bool,
    pub indicated: bool,
    pub matched_symptoms: usize,
}

impl DisorderCriteria {
    /// Apply the rule to a body of evidence. Missing duration evidence counts
    /// as met.
    pub fn evaluate(
        &self,
        present_symptoms: &BTreeSet<EntityId>,
        active_exclusions: &BTreeSet<EntityId>,
        duration_days: Option<u32>,
    ) -> RuleOutcome {
        let matched = present_symptoms.intersection(&self.symptoms).count();
        let core = present_symptoms.intersection(&self.core_symptoms).count();
        let count_met = matched >= self.min_symptom_count;
        let core_met = core >= self.min_core_count;
        let exclusions_clear = active_exclusions.is_disjoint(&self.exclusions);
        let duration_met = match (self.required_duration_days, duration_days) {
            (Some(req), Some(d)) => d >= req,
            _ => true,
        };
        RuleOutcome {
            count_met,
            core_met,
            exclusions_clear,
            duration_met,
            indicated: count_met && core_met && exclusions_clear && duration_met,
            matched_symptoms: matched,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriteriaRecord {
    disorder: String,
    min_symptom_count: usize,
    #[serde(default = "one")]
    min_core_count: usize,
    #[serde(default)]
    core_symptoms: Vec<String>,
    #[serde(default)]
    exclusions: Vec<String>,
    #[serde(default)]
    required_duration_days: Option<u32>,
}

fn one() -> usize {
    1
}

/// All loaded criteria, keyed by disorder id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CriteriaSet {
    by_disorder: BTreeMap<EntityId, DisorderCriteria>,
}

impl CriteriaSet {
    pub fn load(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Self, CriteriaError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?, kg)
    }

    pub fn from_jsonl(text: &str, kg: &KnowledgeGraph) -> Result<Self, CriteriaError> {
        let mut by_disorder = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CriteriaRecord = serde_json::from_str(line)
                .map_err(|e| CriteriaError::Parse { line: idx + 1, message: e.to_string() })?;
            let c = Self::validate(rec, kg)?;
            if by_disorder.contains_key(&c.disorder) {
                return Err(CriteriaError::Integrity(format!("duplicate criteria for {}", c.disorder)));
            }
            by_disorder.insert(c.disorder.clone(), c);
        }
        Ok(Self { by_disorder })
    }

    fn validate(rec: CriteriaRecord, kg: &KnowledgeGraph) -> Result<DisorderCriteria, CriteriaError> {
        let disorder = EntityId::new(rec.disorder);
        match kg.entity(&disorder) {
            Some(e) if e.kind == EntityKind::Disorder => {}
            Some(_) => return Err(CriteriaError::Integrity(format!("{disorder} is not a disorder"))),
            None => return Err(CriteriaError::Integrity(format!("unknown disorder {disorder}"))),
        }
        let symptoms = kg.symptoms_of(&disorder);
        let core_symptoms: BTreeSet<EntityId> = rec.core_symptoms.into_iter().map(EntityId::new).collect();
        if let Some(stray) = core_symptoms.iter().find(|s| !symptoms.contains(*s)) {
            return Err(CriteriaError::Integrity(format!(
                "core symptom {stray} is not a has_symptom neighbor of {disorder}"
            )));
        }
        let exclusions: BTreeSet<EntityId> = rec.exclusions.into_iter().map(EntityId::new).collect();
        for x in &exclusions {
            match kg.entity(x) {
                Some(e) if e.kind == EntityKind::Exclusion => {}
                _ => return Err(CriteriaError::Integrity(format!("unknown exclusion {x} for {disorder}"))),
            }
        }
        if rec.min_core_count > core_symptoms.len() {
            return Err(CriteriaError::Integrity(format!(
                "{disorder}: min_core_count {} exceeds {} core symptoms",
                rec.min_core_count,
                core_symptoms.len()
            )));
        }
        if rec.min_symptom_count < rec.min_core_count {
            return Err(CriteriaError::Integrity(format!("{disorder}: min_symptom_count below min_core_count")));
        }
        Ok(DisorderCriteria {
            disorder,
            min_symptom_count: rec.min_symptom_count,
            core_symptoms,
            min_core_count: rec.min_core_count,
            required_duration_days: rec.required_duration_days,
            exclusions,
            symptoms,
        })
    }

    pub fn get(&self, disorder: &EntityId) -> Option<&DisorderCriteria> {
        self.by_disorder.get(disorder)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DisorderCriteria> {
        self.by_disorder.values()
    }

    pub fn len(&self) -> usize {
        self.by_disorder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_disorder.is_empty()
    }

    /// The indicated disorder with the most matched symptoms; ties go to the
    /// lexicographically smallest id.
    pub fn silver_label(
        &self,
        gold_symptoms: &BTreeSet<EntityId>,
        gold_exclusions: &BTreeSet<EntityId>,
        duration_days: Option<u32>,
    ) -> Diagnosis {
        best_indicated(self.iter(), gold_symptoms, gold_exclusions, duration_days)
    }
}

/// Shared by silver labelling and the candidate-restricted conclusion step.
pub(crate) fn best_indicated<'a>(
    criteria: impl Iterator<Item = &'a DisorderCriteria>,
    symptoms: &BTreeSet<EntityId>,
    exclusions: &BTreeSet<EntityId>,
    duration_days: Option<u32>,
) -> Diagnosis {
    let mut best: Option<(usize, &EntityId)> = None;
    for c in criteria {
        let out = c.evaluate(symptoms, exclusions, duration_days);
        if !out.indicated {
            continue;
        }
        let better = match best {
            None => true,
            Some((n, id)) => out.matched_symptoms > n || (out.matched_symptoms == n && &c.disorder < id),
        };
        if better {
            best = Some((out.matched_symptoms, &c.disorder));
        }
    }
    best.map_or(Diagnosis::NoDiagnosis, |(_, id)| Diagnosis::Disorder(id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/kg.jsonl")).unwrap()
    }

    fn ids(xs: &[&str]) -> BTreeSet<EntityId> {
        xs.iter().map(|s| EntityId::from(*s)).collect()
    }

    fn fixture() -> (KnowledgeGraph, CriteriaSet) {
        let kg = kg();
        let set =
            CriteriaSet::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/criteria.jsonl"), &kg).unwrap();
        (kg, set)
    }

    #[test]
    fn mdd_entry_loads() {
        let (_, set) = fixture();
        let mdd = set.get(&"dis_mdd".into()).unwrap();
        assert_eq!(mdd.min_symptom_count, 5);
        assert_eq!(mdd.min_core_count, 1);
        assert_eq!(mdd.core_symptoms, ids(&["sym_anhedonia", "sym_depressed_mood"]));
        assert_eq!(mdd.required_duration_days, Some(14));
        assert_eq!(mdd.symptoms.len(), 9);
    }

    #[test]
    fn stray_core_symptom_is_integrity_error() {
        let kg = kg();
        let line = r#"{"disorder":"dis_adjustment","min_symptom_count":2,"core_symptoms":["sym_anhedonia"]}"#;
        assert!(matches!(CriteriaSet::from_jsonl(line, &kg), Err(CriteriaError::Integrity(_))));
        let unknown = r#"{"disorder":"dis_nope","min_symptom_count":2}"#;
        assert!(matches!(CriteriaSet::from_jsonl(unknown, &kg), Err(CriteriaError::Integrity(_))));
        assert!(matches!(CriteriaSet::from_jsonl("{", &kg), Err(CriteriaError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_empty_set() {
        let set = CriteriaSet::from_jsonl("", &kg()).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.silver_label(&ids(&["sym_depressed_mood"]), &BTreeSet::new(), None), Diagnosis::NoDiagnosis);
    }

    #[test]
    fn four_non_core_symptoms_fail() {
        let (_, set) = fixture();
        let mdd = set.get(&"dis_mdd".into()).unwrap();
        let out = mdd.evaluate(
            &ids(&["sym_insomnia", "sym_fatigue", "sym_appetite_change", "sym_poor_concentration"]),
            &BTreeSet::new(),
            None,
        );
        assert!(!out.count_met && !out.core_met && !out.indicated);
    }

    #[test]
    fn five_with_core_is_indicated() {
        let (_, set) = fixture();
        let mdd = set.get(&"dis_mdd".into()).unwrap();
        let present =
            ids(&["sym_depressed_mood", "sym_insomnia", "sym_fatigue", "sym_appetite_change", "sym_worthlessness"]);
        let out = mdd.evaluate(&present, &BTreeSet::new(), Some(21));
        assert!(out.indicated);
        let short = mdd.evaluate(&present, &BTreeSet::new(), Some(7));
        assert!(!short.duration_met && !short.indicated);
        let manic = mdd.evaluate(&present, &ids(&["exc_manic_episode"]), Some(21));
        assert!(manic.count_met && manic.core_met && !manic.exclusions_clear && !manic.indicated);
    }

    #[test]
    fn silver_labels() {
        let (_, set) = fixture();
        let six = ids(&[
            "sym_depressed_mood",
            "sym_anhedonia",
            "sym_insomnia",
            "sym_fatigue",
            "sym_worthlessness",
            "sym_suicidal_ideation",
        ]);
        assert_eq!(set.silver_label(&six, &BTreeSet::new(), Some(21)), Diagnosis::Disorder("dis_mdd".into()));
        assert_eq!(set.silver_label(&BTreeSet::new(), &BTreeSet::new(), None), Diagnosis::NoDiagnosis);
        // five symptoms shared by MDD and PDD, long enough for both: tie on 5 matches
        let shared = ids(&[
            "sym_depressed_mood",
            "sym_appetite_change",
            "sym_insomnia",
            "sym_fatigue",
            "sym_poor_concentration",
        ]);
        assert_eq!(
            set.get(&"dis_pdd".into()).unwrap().evaluate(&shared, &BTreeSet::new(), Some(800)).matched_symptoms,
            5
        );
        assert_eq!(set.silver_label(&shared, &BTreeSet::new(), Some(800)), Diagnosis::Disorder("dis_mdd".into()));
    }

    #[test]
    fn diagnosis_label_roundtrip() {
        let d: Diagnosis = serde_json::from_str("\"no_diagnosis\"").unwrap();
        assert_eq!(d, Diagnosis::NoDiagnosis);
        let m: Diagnosis = serde_json::from_str("\"dis_mdd\"").unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "\"dis_mdd\"");
    }
}
