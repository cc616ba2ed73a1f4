//! Dialogue corpora and demographics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::criteria::{CriteriaSet, Diagnosis};
use crate::kgstore::{EntityId, EntityKind, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: field `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("age must be non-negative, got {0}")]
pub struct NegativeAge(pub i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Patient,
    Clinician,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Patient => "Patient",
            Speaker::Clinician => "Clinician",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Speaker,
    pub text: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depression_risk: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suicide_risk: Option<u8>,
    #[serde(default)]
    pub symptoms: Vec<String>,
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    pub age_years: Option<u32>,
    pub gender: Option<String>,
    pub gold: Option<GoldAnnotation>,
    pub silver_label: Option<Diagnosis>,
}

#[derive(Serialize)]
struct TurnOut<'a> {
    role: Speaker,
    text: &'a str,
}

#[derive(Serialize)]
struct DialogueOut<'a> {
    id: &'a str,
    turns: Vec<TurnOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gender: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<&'a GoldAnnotation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    silver_label: Option<&'a Diagnosis>,
}

impl Dialogue {
    pub fn to_record(&self) -> String {
        let out = DialogueOut {
            id: &self.id,
            turns: self.turns.iter().map(|t| TurnOut { role: t.role, text: &t.text }).collect(),
            age: self.age_years,
            gender: self.gender.as_deref(),
            gold: self.gold.as_ref(),
            silver_label: self.silver_label.as_ref(),
        };
        serde_json::to_string(&out).expect("dialogue serializes")
    }

    pub fn age_bucket(&self) -> AgeBucket {
        AgeBucket::of(self.age_years)
    }

    pub fn patient_turns(&self) -> impl Iterator<Item = &Utterance> {
        self.turns.iter().filter(|t| t.role == Speaker::Patient)
    }

    /// Gold symptom and exclusion ids resolved against the graph. Surface
    /// forms that resolve to nothing of the right kind are returned separately.
    pub fn resolve_gold(&self, kg: &KnowledgeGraph) -> Option<ResolvedGold> {
        let gold = self.gold.as_ref()?;
        let mut unresolved = Vec::new();
        let mut resolve = |forms: &[String], kind: EntityKind| -> BTreeSet<EntityId> {
            let mut out = BTreeSet::new();
            for f in forms {
                let ids: Vec<_> = kg
                    .lookup_entity(f)
                    .into_iter()
                    .filter(|id| kg.entity(id).is_some_and(|e| e.kind == kind))
                    .collect();
                if ids.is_empty() {
                    unresolved.push(f.clone());
                }
                out.extend(ids);
            }
            out
        };
        let symptoms = resolve(&gold.symptoms, EntityKind::Symptom);
        let exclusions = resolve(&gold.exclusions, EntityKind::Exclusion);
        Some(ResolvedGold { symptoms, exclusions, duration_days: gold.duration_days, unresolved })
    }

    /// Silver label from gold annotations; `None` without gold.
    pub fn compute_silver(&self, kg: &KnowledgeGraph, criteria: &CriteriaSet) -> Option<Diagnosis> {
        let g = self.resolve_gold(kg)?;
        Some(criteria.silver_label(&g.symptoms, &g.exclusions, g.duration_days))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedGold {
    pub symptoms: BTreeSet<EntityId>,
    pub exclusions: BTreeSet<EntityId>,
    pub duration_days: Option<u32>,
    pub unresolved: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    #[serde(rename = "<=17")]
    UpTo17,
    #[serde(rename = "18-25")]
    From18To25,
    #[serde(rename = "26-35")]
    From26To35,
    #[serde(rename = "36-45")]
    From36To45,
    #[serde(rename = "46-60")]
    From46To60,
    #[serde(rename = "60+")]
    Over60,
    #[serde(rename = "unknown")]
    Unknown,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 7] = [
        AgeBucket::UpTo17,
        AgeBucket::From18To25,
        AgeBucket::From26To35,
        AgeBucket::From36To45,
        AgeBucket::From46To60,
        AgeBucket::Over60,
        AgeBucket::Unknown,
    ];

    /// Ranges are inclusive at both ends, so 60 falls in 46-60 and "60+"
    /// starts at 61.
    pub fn of(age: Option<u32>) -> Self {
        match age {
            None => AgeBucket::Unknown,
            Some(0..=17) => AgeBucket::UpTo17,
            Some(18..=25) => AgeBucket::From18To25,
            Some(26..=35) => AgeBucket::From26To35,
            Some(36..=45) => AgeBucket::From36To45,
            Some(46..=60) => AgeBucket::From46To60,
            Some(_) => AgeBucket::Over60,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeBucket::UpTo17 => "<=17",
            AgeBucket::From18To25 => "18-25",
            AgeBucket::From26To35 => "26-35",
            AgeBucket::From36To45 => "36-45",
            AgeBucket::From46To60 => "46-60",
            AgeBucket::Over60 => "60+",
            AgeBucket::Unknown => "unknown",
        }
    }
}

impl fmt::Display for AgeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Bucket a possibly-negative raw age.
pub fn bucket_age(age_years: Option<i64>) -> Result<AgeBucket, NegativeAge> {
    match age_years {
        Some(a) if a < 0 => Err(NegativeAge(a)),
        Some(a) => Ok(AgeBucket::of(Some(u32::try_from(a).unwrap_or(u32::MAX)))),
        None => Ok(AgeBucket::Unknown),
    }
}

pub fn load_dialogues(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, DatasetError> {
    parse_dialogues(&std::fs::read_to_string(path)?)
}

pub fn parse_dialogues(text: &str) -> Result<Vec<Dialogue>, DatasetError> {
    let mut out: Vec<Dialogue> = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_record(line, idx + 1)?;
        if !seen.insert(d.id.clone()) {
            return Err(schema(idx + 1, "id", format!("duplicate id {:?}", d.id)));
        }
        out.push(d);
    }
    Ok(out)
}

fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema { line, field: field.into(), message: message.into() }
}

fn parse_record(raw: &str, line: usize) -> Result<Dialogue, DatasetError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| schema(line, "<record>", e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| schema(line, "<record>", "not an object"))?;

    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(schema(line, "id", "must be a non-empty string")),
        None => return Err(schema(line, "id", "missing")),
    };

    let turns_v = obj.get("turns").ok_or_else(|| schema(line, "turns", "missing"))?;
    let turns_a = turns_v.as_array().ok_or_else(|| schema(line, "turns", "must be an array"))?;
    if turns_a.is_empty() {
        return Err(schema(line, "turns", "must not be empty"));
    }
    let mut turns = Vec::with_capacity(turns_a.len());
    for (i, t) in turns_a.iter().enumerate() {
        let t = t.as_object().ok_or_else(|| schema(line, format!("turns[{i}]"), "not an object"))?;
        let role = match t.get("role").and_then(Value::as_str).map(str::to_ascii_lowercase).as_deref() {
            Some("patient") => Speaker::Patient,
            Some("clinician" | "doctor") => Speaker::Clinician,
            Some(other) => return Err(schema(line, format!("turns[{i}].role"), format!("unknown role {other:?}"))),
            None => return Err(schema(line, format!("turns[{i}].role"), "missing")),
        };
        let text = match t.get("text").and_then(Value::as_str) {
            Some(s) if !s.trim().is_empty() => s.to_string(),
            Some(_) => return Err(schema(line, format!("turns[{i}].text"), "empty")),
            None => return Err(schema(line, format!("turns[{i}].text"), "missing")),
        };
        // explicit indexes must be strictly increasing; otherwise position is used
        let turn_index = match t.get("turn_index") {
            None => i,
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| schema(line, format!("turns[{i}].turn_index"), "must be a non-negative integer"))?,
        };
        if let Some(prev) = turns.last().map(|u: &Utterance| u.turn_index) {
            if turn_index <= prev {
                return Err(schema(line, format!("turns[{i}].turn_index"), "not strictly increasing"));
            }
        }
        turns.push(Utterance { role, text, turn_index });
    }

    let age_years = match obj.get("age") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let a = v.as_i64().ok_or_else(|| schema(line, "age", "must be an integer"))?;
            bucket_age(Some(a)).map_err(|e| schema(line, "age", e.to_string()))?;
            Some(u32::try_from(a).map_err(|_| schema(line, "age", "out of range"))?)
        }
    };
    let gender = match obj.get("gender") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema(line, "gender", "must be a string")),
    };
    let gold = match obj.get("gold") {
        None | Some(Value::Null) => None,
        Some(Value::Object(g)) => Some(parse_gold(g, line)?),
        Some(_) => return Err(schema(line, "gold", "must be an object")),
    };
    let silver_label = match obj.get("silver_label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.parse().expect("infallible")),
        Some(_) => return Err(schema(line, "silver_label", "must be a string")),
    };
    Ok(Dialogue { id, turns, age_years, gender, gold, silver_label })
}

fn parse_gold(g: &Map<String, Value>, line: usize) -> Result<GoldAnnotation, DatasetError> {
    let risk = |name: &str| -> Result<Option<u8>, DatasetError> {
        match g.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => match v.as_u64() {
                Some(r @ 0..=3) => Ok(Some(r as u8)),
                _ => Err(schema(line, format!("gold.{name}"), "must be an integer in 0..=3")),
            },
        }
    };
    let strings = |name: &str| -> Result<Vec<String>, DatasetError> {
        match g.get(name) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| schema(line, format!("gold.{name}"), "must hold strings"))
                })
                .collect(),
            Some(_) => Err(schema(line, format!("gold.{name}"), "must be an array")),
        }
    };
    let duration_days = match g.get("duration_days") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|d| u32::try_from(d).ok())
                .ok_or_else(|| schema(line, "gold.duration_days", "must be a non-negative integer"))?,
        ),
    };
    Ok(GoldAnnotation {
        depression_risk: risk("depression_risk")?,
        suicide_risk: risk("suicide_risk")?,
        symptoms: strings("symptoms")?,
        exclusions: strings("exclusions")?,
        duration_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let d = parse_dialogues(
            r#"{"id":"d1","turns":[{"role":"clinician","text":"How are you?"},{"role":"patient","text":"Tired."}]}"#,
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].turns[1].role, Speaker::Patient);
        assert_eq!(d[0].turns[1].turn_index, 1);
        assert_eq!(d[0].age_bucket(), AgeBucket::Unknown);
    }

    #[test]
    fn missing_role_names_line_and_field() {
        let text = "{\"id\":\"a\",\"turns\":[{\"role\":\"patient\",\"text\":\"x\"}]}\n{\"id\":\"b\",\"turns\":[{\"text\":\"x\"}]}";
        match parse_dialogues(text).unwrap_err() {
            DatasetError::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "turns[0].role");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn demographics_and_gold() {
        let d = parse_dialogues(
            r#"{"id":"d","turns":[{"role":"patient","text":"hi"}],"age":19,"gender":"female","gold":{"depression_risk":2,"suicide_risk":0,"symptoms":["feel sad"]}}"#,
        )
        .unwrap()
        .remove(0);
        assert_eq!(d.age_years, Some(19));
        assert_eq!(d.gender.as_deref(), Some("female"));
        assert_eq!(d.gold.as_ref().unwrap().depression_risk, Some(2));
        assert_eq!(d.age_bucket(), AgeBucket::From18To25);
    }

    #[test]
    fn schema_violations() {
        let bad = [
            (r#"{"id":"d","turns":[]}"#, "turns"),
            (r#"{"turns":[{"role":"patient","text":"x"}]}"#, "id"),
            (r#"{"id":"d","turns":[{"role":"patient","text":"x"}],"age":-3}"#, "age"),
            (
                r#"{"id":"d","turns":[{"role":"patient","text":"x"}],"gold":{"depression_risk":4}}"#,
                "gold.depression_risk",
            ),
            (r#"{"id":"d","turns":[{"role":"nurse","text":"x"}]}"#, "turns[0].role"),
            (
                r#"{"id":"d","turns":[{"role":"patient","text":"x","turn_index":3},{"role":"patient","text":"y","turn_index":2}]}"#,
                "turns[1].turn_index",
            ),
        ];
        for (rec, want) in bad {
            match parse_dialogues(rec) {
                Err(DatasetError::Schema { field, .. }) => assert_eq!(field, want, "{rec}"),
                other => panic!("{rec}: {other:?}"),
            }
        }
        let dup = "{\"id\":\"a\",\"turns\":[{\"role\":\"patient\",\"text\":\"x\"}]}\n{\"id\":\"a\",\"turns\":[{\"role\":\"patient\",\"text\":\"x\"}]}";
        assert!(matches!(parse_dialogues(dup), Err(DatasetError::Schema { line: 2, .. })));
    }

    #[test]
    fn age_buckets() {
        assert_eq!(AgeBucket::of(Some(17)), AgeBucket::UpTo17);
        assert_eq!(AgeBucket::of(Some(18)), AgeBucket::From18To25);
        assert_eq!(AgeBucket::of(Some(26)), AgeBucket::From26To35);
        assert_eq!(AgeBucket::of(Some(60)), AgeBucket::From46To60);
        assert_eq!(AgeBucket::of(Some(61)), AgeBucket::Over60);
        assert_eq!(AgeBucket::of(None), AgeBucket::Unknown);
        assert_eq!(bucket_age(Some(-1)), Err(NegativeAge(-1)));
        assert_eq!(bucket_age(None), Ok(AgeBucket::Unknown));
    }
}
