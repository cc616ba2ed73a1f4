use std::collections::BTreeSet;
use std::path::PathBuf;

use dxtrust::criteria::{CriteriaSet, Diagnosis};
use dxtrust::kgstore::{normalize, EntityId, EntityKind, KgError, KnowledgeGraph, Relation};
use proptest::prelude::*;

fn fx(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn kg() -> KnowledgeGraph {
    KnowledgeGraph::load(fx("kg.jsonl")).unwrap()
}

const RELATIONS: [Relation; 5] = [
    Relation::IncludesDisorder,
    Relation::HasSymptom,
    Relation::HasCriterion,
    Relation::HasExclusion,
    Relation::HasSpecifier,
];

#[test]
fn fixture_counts_match_a_line_count() {
    let text = std::fs::read_to_string(fx("kg.jsonl")).unwrap();
    let count = |ty: &str| text.lines().filter(|l| l.contains(&format!("\"type\": \"{ty}\""))).count();
    let g = kg();
    assert_eq!(g.triplets().len(), count("triplet"));
    // literal objects (specifier values) become modifier entities
    let modifiers = g.entities_of_kind(EntityKind::Modifier).count();
    assert_eq!(g.entity_count(), count("entity") + modifiers);
}

#[test]
fn serialization_round_trips() {
    let g = kg();
    let again = KnowledgeGraph::from_jsonl(&g.to_jsonl()).unwrap();
    assert!(g == again);
    assert_eq!(g.to_jsonl(), again.to_jsonl());
}

#[test]
fn neighbors_are_complete_and_ordered() {
    let g = kg();
    for e in g.entities() {
        let all = g.neighbors(&e.id, None).unwrap();
        let expected: Vec<_> = g.triplets().iter().filter(|t| t.subject == e.id).collect();
        assert_eq!(all.len(), expected.len(), "{}", e.id);
        for r in RELATIONS {
            let got = g.neighbors(&e.id, Some(r)).unwrap();
            let want = g.triplets().iter().filter(|t| t.subject == e.id && t.relation == r).count();
            assert_eq!(got.len(), want);
            assert!(got.windows(2).all(|w| w[0].object <= w[1].object));
        }
        assert!(all.windows(2).all(|w| (w[0].relation, &w[0].object) <= (w[1].relation, &w[1].object)));
    }
    assert!(matches!(g.neighbors(&EntityId::new("nope"), None), Err(KgError::NotFound(_))));
}

#[test]
fn orphan_disorder_is_rejected() {
    let text = std::fs::read_to_string(fx("kg.jsonl")).unwrap();
    let cut: String = text
        .lines()
        .filter(|l| !(l.contains("includes_disorder") && l.contains("dis_gad")))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(matches!(KnowledgeGraph::from_jsonl(&cut), Err(KgError::Integrity(m)) if m.contains("dis_gad")));
}

fn decorated_alias() -> impl Strategy<Value = (String, String)> {
    let aliases: Vec<String> = kg().alias_index().keys().cloned().collect();
    (prop::sample::select(aliases), any::<u64>()).prop_map(|(alias, seed)| {
        let mut out = String::new();
        for (i, ch) in alias.chars().enumerate() {
            let bit = (seed >> (i % 64)) & 1 == 1;
            if ch == ' ' {
                out.push_str(if bit { "  " } else { " " });
            } else if bit {
                out.extend(ch.to_uppercase());
            } else {
                out.push(ch);
            }
        }
        if seed & 1 == 1 {
            out.push('.');
        }
        (alias, out)
    })
}

proptest! {
    #[test]
    fn lookup_ignores_case_spacing_and_punctuation((alias, decorated) in decorated_alias()) {
        let g = kg();
        let direct = g.lookup_entity(&alias);
        prop_assert!(!direct.is_empty());
        prop_assert_eq!(g.lookup_entity(&decorated), direct.clone());
        prop_assert_eq!(g.lookup_entity(&normalize(&decorated)), direct);
    }
}

fn mdd_symptoms() -> Vec<EntityId> {
    kg().symptoms_of(&EntityId::new("dis_mdd")).into_iter().collect()
}

fn mdd_exclusions() -> Vec<EntityId> {
    let g = kg();
    CriteriaSet::load(fx("criteria.jsonl"), &g)
        .unwrap()
        .get(&EntityId::new("dis_mdd"))
        .unwrap()
        .exclusions
        .iter()
        .cloned()
        .collect()
}

fn subset(items: &[EntityId], mask: u32) -> BTreeSet<EntityId> {
    items.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, e)| e.clone()).collect()
}

proptest! {
    #[test]
    fn rules_are_monotone(smask in 0u32..512, emask in 0u32..16, extra in 0usize..9, excl in 0usize..4, days in prop::option::of(0u32..60)) {
        let g = kg();
        let criteria = CriteriaSet::load(fx("criteria.jsonl"), &g).unwrap();
        let symptoms = mdd_symptoms();
        let exclusions = mdd_exclusions();
        let s = subset(&symptoms, smask);
        let e = subset(&exclusions, emask);
        for c in criteria.iter() {
            let base = c.evaluate(&s, &e, days);
            prop_assert_eq!(base, c.evaluate(&s.clone(), &e.clone(), days));

            let mut more = s.clone();
            more.insert(symptoms[extra].clone());
            if base.indicated {
                prop_assert!(c.evaluate(&more, &e, days).indicated);
            }
            let mut blocked = e.clone();
            blocked.insert(exclusions[excl % exclusions.len()].clone());
            if !base.indicated {
                prop_assert!(!c.evaluate(&s, &blocked, days).indicated);
            }
        }
    }
}

#[test]
fn empty_evidence_is_never_labelled() {
    let g = kg();
    let criteria = CriteriaSet::load(fx("criteria.jsonl"), &g).unwrap();
    for days in [None, Some(0), Some(10_000)] {
        assert_eq!(criteria.silver_label(&BTreeSet::new(), &BTreeSet::new(), days), Diagnosis::NoDiagnosis);
    }
    assert_eq!(CriteriaSet::default().silver_label(&BTreeSet::new(), &BTreeSet::new(), None), Diagnosis::NoDiagnosis);
}
