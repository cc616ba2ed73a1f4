//! Labeled-section scanning and the item grammar used inside sections.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::criteria::Diagnosis;
use crate::kgstore::{normalize, EntityId, EntityKind, KnowledgeGraph};
use crate::retrieval::extract_mentions;

pub const SYMPTOMS: &str = "SYMPTOMS";
pub const DURATION: &str = "DURATION";
pub const CANDIDATES: &str = "CANDIDATES";
pub const CRITERIA_CHECK: &str = "CRITERIA CHECK";
pub const EXCLUSION_CHECK: &str = "EXCLUSION CHECK";
pub const FINAL_DIAGNOSIS: &str = "FINAL DIAGNOSIS";
pub const REASONING: &str = "REASONING";
pub const STEPWISE_REASONING: &str = "STEPWISE REASONING";

/// Every label a response may carry.
pub const RESPONSE_LABELS: [&str; 8] =
    [SYMPTOMS, DURATION, CANDIDATES, CRITERIA_CHECK, EXCLUSION_CHECK, FINAL_DIAGNOSIS, REASONING, STEPWISE_REASONING];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("missing sections: {}", .0.join(", "))]
pub struct MissingSection(pub Vec<String>);

/// Header label of `line`, if it opens one of `labels`, and the text after
/// the colon. Markdown emphasis and heading marks are ignored.
fn header<'a>(line: &'a str, labels: &[&str]) -> Option<(String, &'a str)> {
    let l = line.trim().trim_start_matches(['#', '*', ' ']);
    let mut best: Option<(&str, &str)> = None;
    for label in labels {
        let n = label.len();
        if l.len() < n || !l.is_char_boundary(n) || !l[..n].eq_ignore_ascii_case(label) {
            continue;
        }
        let rest = l[n..].trim_start_matches('*');
        let body = if rest.trim().is_empty() {
            ""
        } else if let Some(b) = rest.strip_prefix(':') {
            b.trim_start_matches('*')
        } else {
            continue;
        };
        if best.is_none_or(|(b, _)| b.len() < n) {
            best = Some((label, body));
        }
    }
    best.map(|(label, body)| (label.to_ascii_uppercase(), body.trim()))
}

/// All sections among `labels` found in `text`, keyed by upper-case label.
/// Text before the first header is ignored; the first occurrence of a label
/// wins.
pub fn scan_sections(text: &str, labels: &[&str]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let flush = |cur: Option<(String, Vec<&str>)>, out: &mut BTreeMap<String, String>| {
        if let Some((label, lines)) = cur {
            out.entry(label).or_insert_with(|| lines.join("\n").trim().to_string());
        }
    };
    for line in text.lines() {
        if let Some((label, inline)) = header(line, labels) {
            flush(current.take(), &mut out);
            let mut lines = Vec::new();
            if !inline.is_empty() {
                lines.push(inline);
            }
            current = Some((label, lines));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(current, &mut out);
    out
}

/// Map each expected label to its body, or name every absent label.
pub fn parse_structured_output(
    stage_text: &str,
    expected_sections: &[&str],
) -> Result<BTreeMap<String, String>, MissingSection> {
    let found = scan_sections(stage_text, expected_sections);
    let missing: Vec<String> =
        expected_sections.iter().map(|l| l.to_ascii_uppercase()).filter(|l| !found.contains_key(l)).collect();
    if missing.is_empty() {
        Ok(found)
    } else {
        Err(MissingSection(missing))
    }
}

/// Body of a list line ("- x", "* x", "3. x", "2) x").
pub fn list_item(line: &str) -> Option<&str> {
    let l = line.trim();
    for m in ['-', '*', '•'] {
        if let Some(r) = l.strip_prefix(m) {
            return Some(r.trim());
        }
    }
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &l[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return Some(r.trim());
        }
    }
    None
}

pub fn is_none_marker(text: &str) -> bool {
    matches!(
        normalize(text).as_str(),
        "none" | "n a" | "unknown" | "no diagnosis" | "no diagnosis made" | "no disorder"
    ) || text.trim() == Diagnosis::NONE_LABEL
}

/// First word read as a yes/no verdict.
pub fn yes_no(text: &str) -> Option<bool> {
    let word = normalize(text).split(' ').next().unwrap_or_default().to_string();
    match word.as_str() {
        "yes" | "true" | "met" | "clear" => Some(true),
        "no" | "false" | "unmet" | "not" => Some(false),
        _ => None,
    }
}

/// Resolve an item to an entity of `kind`: a bracketed id, then the text
/// before any `|` or `(` as an alias, then a unique alias mention.
pub fn resolve_item(text: &str, kg: &KnowledgeGraph, kind: EntityKind) -> Option<EntityId> {
    let of_kind = |id: &EntityId| kg.entity(id).is_some_and(|e| e.kind == kind);
    if let (Some(a), Some(b)) = (text.find('['), text.find(']')) {
        if a < b {
            let id = EntityId::new(text[a + 1..b].trim());
            if of_kind(&id) {
                return Some(id);
            }
        }
    }
    let head = text.split(['|', '(', '[']).next().unwrap_or_default();
    if let Some(id) = kg.lookup_entity(head).into_iter().find(|id| of_kind(id)) {
        return Some(id);
    }
    let found: BTreeSet<EntityId> =
        extract_mentions(text, kg).into_iter().flat_map(|m| m.ids).filter(|id| of_kind(id)).collect();
    if found.len() == 1 {
        found.into_iter().next()
    } else {
        None
    }
}

/// Conclusion text: a disorder or an explicit no-diagnosis phrase.
pub fn resolve_diagnosis(text: &str, kg: &KnowledgeGraph) -> Option<Diagnosis> {
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let line = list_item(line).unwrap_or(line);
        if is_none_marker(line) {
            return Some(Diagnosis::NoDiagnosis);
        }
        if let Some(id) = resolve_item(line, kg, EntityKind::Disorder) {
            return Some(Diagnosis::Disorder(id));
        }
    }
    None
}

static DURATION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(\d+)\s*(day|week|month|year)s?\b").expect("valid pattern"));

/// Longest duration mentioned in `text`, in days.
pub fn duration_days(text: &str) -> Option<u32> {
    DURATION_RE
        .captures_iter(text)
        .filter_map(|c| {
            let n: u32 = c[1].parse().ok()?;
            let unit = match c[2].to_ascii_lowercase().as_str() {
                "day" => 1,
                "week" => 7,
                "month" => 30,
                _ => 365,
            };
            n.checked_mul(unit)
        })
        .max()
}

/// Yes/no assertions about one disorder's rule steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StepAssertions {
    pub count_met: Option<bool>,
    pub core_met: Option<bool>,
    pub exclusions_clear: Option<bool>,
    #[serde(default)]
    pub duration_met: Option<bool>,
}

impl StepAssertions {
    /// Fill fields still unset from `other`.
    pub fn merge(&mut self, other: StepAssertions) {
        self.count_met = self.count_met.or(other.count_met);
        self.core_met = self.core_met.or(other.core_met);
        self.exclusions_clear = self.exclusions_clear.or(other.exclusions_clear);
        self.duration_met = self.duration_met.or(other.duration_met);
    }

    pub fn is_empty(&self) -> bool {
        self.count_met.is_none()
            && self.core_met.is_none()
            && self.exclusions_clear.is_none()
            && self.duration_met.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionBlock {
    /// `None` when the block header did not resolve to a disorder.
    pub disorder: Option<EntityId>,
    pub header: String,
    pub text: String,
    pub assertions: StepAssertions,
}

fn key_value(line: &str) -> Option<(String, &str)> {
    let (k, v) = line.split_once(':')?;
    Some((normalize(k), v.trim()))
}

/// Split a section body into per-disorder blocks. A block opens at a
/// `disorder: <name>` line; recognized keys inside it are the step
/// assertions. Other lines stay in the block text.
pub fn assertion_blocks(body: &str, kg: &KnowledgeGraph) -> Vec<AssertionBlock> {
    let mut out: Vec<AssertionBlock> = Vec::new();
    for raw in body.lines() {
        let line = list_item(raw).unwrap_or(raw.trim());
        let kv = key_value(line);
        if let Some(("disorder", v)) = kv.as_ref().map(|(k, v)| (k.as_str(), *v)) {
            out.push(AssertionBlock {
                disorder: resolve_item(v, kg, EntityKind::Disorder),
                header: v.to_string(),
                text: raw.trim().to_string(),
                assertions: StepAssertions::default(),
            });
            continue;
        }
        let Some(block) = out.last_mut() else { continue };
        block.text.push('\n');
        block.text.push_str(raw.trim());
        let Some((key, value)) = kv else { continue };
        let slot = match key.as_str() {
            "symptom count met" | "count met" | "symptom count" => &mut block.assertions.count_met,
            "core symptom met" | "core symptoms met" | "core met" | "core symptom" => &mut block.assertions.core_met,
            "exclusions clear" | "exclusion clear" | "exclusions cleared" => &mut block.assertions.exclusions_clear,
            "duration met" | "duration criterion met" => &mut block.assertions.duration_met,
            _ => continue,
        };
        if slot.is_none() {
            *slot = yes_no(value);
        }
    }
    out
}

/// The `active exclusions:` line of an exclusion-check body: resolved ids and
/// unresolved names. `None` when the line is absent.
pub fn active_exclusions(body: &str, kg: &KnowledgeGraph) -> Option<(BTreeSet<EntityId>, Vec<String>)> {
    for raw in body.lines() {
        let line = list_item(raw).unwrap_or(raw.trim());
        let Some((key, value)) = key_value(line) else { continue };
        if key != "active exclusions" && key != "active exclusion" {
            continue;
        }
        let mut ids = BTreeSet::new();
        let mut unresolved = Vec::new();
        if !is_none_marker(value) {
            for part in value.split([',', ';']).map(str::trim).filter(|p| !p.is_empty()) {
                match resolve_item(part, kg, EntityKind::Exclusion) {
                    Some(id) => {
                        ids.insert(id);
                    }
                    None => unresolved.push(part.to_string()),
                }
            }
        }
        return Some((ids, unresolved));
    }
    None
}

/// One extracted symptom: `- <name> | turns: 1, 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymptomItem {
    pub raw: String,
    pub symptom: Option<EntityId>,
    pub turns: Vec<usize>,
    pub turns_malformed: bool,
}

pub fn symptom_items(body: &str, kg: &KnowledgeGraph) -> Vec<SymptomItem> {
    body.lines()
        .filter_map(list_item)
        .filter(|item| !is_none_marker(item))
        .map(|item| {
            let (name, rest) = item.split_once('|').unwrap_or((item, ""));
            let mut turns = Vec::new();
            let mut turns_malformed = false;
            if let Some((k, v)) = key_value(rest.trim()) {
                if k == "turns" || k == "turn" {
                    for t in v.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                        match t.parse() {
                            Ok(n) => turns.push(n),
                            Err(_) => turns_malformed = true,
                        }
                    }
                }
            }
            let symptom =
                resolve_item(name, kg, EntityKind::Symptom).or_else(|| resolve_item(item, kg, EntityKind::Symptom));
            SymptomItem { raw: item.to_string(), symptom, turns, turns_malformed }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg() -> KnowledgeGraph {
        KnowledgeGraph::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/kg.jsonl")).unwrap()
    }

    const CLEAN: &str = "SYMPTOMS:\n- depressed mood | turns: 1\nDURATION: 21 days\nFINAL DIAGNOSIS: Major depressive disorder\nREASONING:\nMood is low.";

    #[test]
    fn all_sections_found() {
        let m = parse_structured_output(CLEAN, &[SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING]).unwrap();
        assert_eq!(m[DURATION], "21 days");
        assert_eq!(m[SYMPTOMS], "- depressed mood | turns: 1");
        assert_eq!(m[REASONING], "Mood is low.");
    }

    #[test]
    fn missing_sections_listed() {
        let text = "SYMPTOMS:\n- x\n";
        let err = parse_structured_output(text, &[SYMPTOMS, FINAL_DIAGNOSIS, REASONING]).unwrap_err();
        assert_eq!(err.0, vec!["FINAL DIAGNOSIS".to_string(), "REASONING".to_string()]);
    }

    #[test]
    fn shuffled_and_decorated_headers() {
        let shuffled = "Sure, here you go.\n**reasoning:**\nMood is low.\n## Final Diagnosis\nMajor depressive disorder\nduration: 21 days\nSymptoms:\n- depressed mood | turns: 1\n";
        let labels = [SYMPTOMS, DURATION, FINAL_DIAGNOSIS, REASONING];
        let a = parse_structured_output(CLEAN, &labels).unwrap();
        let b = parse_structured_output(shuffled, &labels).unwrap();
        assert_eq!(a[SYMPTOMS], b[SYMPTOMS]);
        assert_eq!(a[DURATION], b[DURATION]);
        assert_eq!(a[REASONING], b[REASONING]);
        assert_eq!(b[FINAL_DIAGNOSIS], "Major depressive disorder");
    }

    #[test]
    fn body_keys_are_not_headers() {
        let text = "CRITERIA CHECK:\ndisorder: MDD\nduration met: yes\nsymptom count met: no\nFINAL DIAGNOSIS: none";
        let m = scan_sections(text, &RESPONSE_LABELS);
        assert!(m[CRITERIA_CHECK].contains("duration met: yes"));
        assert!(!m.contains_key(DURATION));
    }

    #[test]
    fn blocks_and_exclusions() {
        let kg = kg();
        let body = "active exclusions: mania, nonsense\ndisorder: Major depressive disorder\nsymptom count met: yes (6 of 5)\nnote\ncore symptom met: no\ndisorder: [dis_gad]\nexclusions clear: yes";
        let blocks = assertion_blocks(body, &kg);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].disorder, Some("dis_mdd".into()));
        assert_eq!(
            blocks[0].assertions,
            StepAssertions { count_met: Some(true), core_met: Some(false), ..Default::default() }
        );
        assert_eq!(blocks[1].disorder, Some("dis_gad".into()));
        assert_eq!(blocks[1].assertions.exclusions_clear, Some(true));
        let (ids, bad) = active_exclusions(body, &kg).unwrap();
        assert_eq!(ids, BTreeSet::from([EntityId::from("exc_manic_episode")]));
        assert_eq!(bad, vec!["nonsense".to_string()]);
    }

    #[test]
    fn items_and_durations() {
        let kg = kg();
        let items = symptom_items("- depressed mood | turns: 1, 3\n- can't sleep | turns: 2\nprose line\n- glorp", &kg);
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].symptom, Some("sym_depressed_mood".into()));
        assert_eq!(items[0].turns, vec![1, 3]);
        assert_eq!(items[1].symptom, Some("sym_insomnia".into()));
        assert_eq!(items[2].symptom, None);
        assert_eq!(duration_days("for 3 weeks, maybe 2 months"), Some(60));
        assert_eq!(duration_days("a while"), None);
        assert_eq!(resolve_diagnosis("no diagnosis", &kg), Some(Diagnosis::NoDiagnosis));
        assert_eq!(
            resolve_diagnosis("Thinking...\nmajor depression", &kg),
            Some(Diagnosis::Disorder("dis_mdd".into()))
        );
    }
}
