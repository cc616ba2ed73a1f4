use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use dxtrust::claims::{claim_weight, entity_pr, kas_aggregate, triplet_match_score, AttributionLabel};
use dxtrust::kgstore::{EntityId, EntityKind, KnowledgeGraph};
use dxtrust::providers::LocalEmbedder;
use dxtrust::retrieval::{
    claim_triplet_sim, extract_entities, rank_candidate_disorders, walk_retrieve, RetrievedEvidence,
};
use proptest::prelude::*;

fn kg() -> &'static KnowledgeGraph {
    static KG: OnceLock<KnowledgeGraph> = OnceLock::new();
    KG.get_or_init(|| {
        KnowledgeGraph::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/kg.jsonl")).unwrap()
    })
}

fn ids(kind: Option<EntityKind>) -> Vec<EntityId> {
    kg().entities().filter(|e| kind.is_none_or(|k| e.kind == k)).map(|e| e.id.clone()).collect()
}

fn seeds() -> impl Strategy<Value = BTreeSet<EntityId>> {
    prop::collection::btree_set(prop::sample::select(ids(None)), 0..6)
}

proptest! {
    #[test]
    fn walk_respects_graph_budget_and_order(seeds in seeds(), budget in 0usize..40) {
        let e = LocalEmbedder::default();
        let ev = walk_retrieve(kg(), &seeds, budget, &e).unwrap();
        prop_assert!(ev.triplets.len() <= budget);
        prop_assert_eq!(ev.budget_used, ev.triplets.len());
        for t in &ev.triplets {
            prop_assert!(kg().triplets().contains(&t.triplet));
            prop_assert!((0.0..=1.0).contains(&t.relevance));
        }
        prop_assert!(ev.triplets.windows(2).all(|w| w[0].relevance >= w[1].relevance));
        let keys: BTreeSet<_> = ev.triplet_keys().into_iter().collect();
        prop_assert_eq!(keys.len(), ev.triplets.len());
        prop_assert_eq!(walk_retrieve(kg(), &seeds, budget, &e).unwrap(), ev);
    }

    #[test]
    fn ranking_is_bounded_and_sorted(symptoms in prop::collection::btree_set(prop::sample::select(ids(Some(EntityKind::Symptom))), 0..10), k in 0usize..5) {
        let c = rank_candidate_disorders(kg(), &symptoms, k);
        prop_assert!(c.ranked.len() <= k);
        for w in c.ranked.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert!(c.ranked.iter().all(|(_, s)| *s > 0.0 && *s <= 1.0));
        let distinct: BTreeSet<_> = c.ids().collect();
        prop_assert_eq!(distinct.len(), c.ranked.len());
    }

    #[test]
    fn similarity_is_bounded_and_grows_with_evidence(seeds in seeds(), claim in "[a-z ]{0,60}", cut in 0usize..32) {
        let e = LocalEmbedder::default();
        let full = walk_retrieve(kg(), &seeds, 32, &e).unwrap();
        let part = RetrievedEvidence { triplets: full.triplets[..cut.min(full.triplets.len())].to_vec(), ..full.clone() };
        let a = claim_triplet_sim(&claim, &part, &e).unwrap();
        let b = claim_triplet_sim(&claim, &full, &e).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(a <= b);
    }

    #[test]
    fn tms_and_weight_stay_in_range(sim in 0.0f64..=1.0, epr in 0.0f64..=1.0, alpha in 0.0f64..=1.0, label in prop::sample::select(AttributionLabel::ALL.to_vec())) {
        let tms = triplet_match_score(sim, epr, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&tms));
        let w = claim_weight(label, tms);
        prop_assert!((-1.0..=2.0).contains(&w));
        prop_assert_eq!(w, label.cs() * tms);
    }

    #[test]
    fn epr_bounds(a in prop::collection::btree_set(prop::sample::select(ids(None)), 0..8), b in prop::collection::btree_set(prop::sample::select(ids(None)), 0..8)) {
        let v = entity_pr(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        if !a.is_empty() {
            prop_assert_eq!(entity_pr(&a, &a), 1.0);
        }
        if a.is_disjoint(&b) && !(a.is_empty() && b.is_empty()) {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn kas_is_open_unit_and_order_free(mut w in prop::collection::vec(-2.0f64..=2.0, 0..30)) {
        let k = kas_aggregate(&w);
        prop_assert!(k > 0.0 && k < 1.0);
        w.reverse();
        prop_assert_eq!(kas_aggregate(&w), k);
        w.sort_by(f64::total_cmp);
        prop_assert_eq!(kas_aggregate(&w), k);
    }
}

#[test]
fn out_of_range_inputs_are_domain_errors() {
    assert!(triplet_match_score(1.1, 0.5, 0.5).is_err());
    assert!(triplet_match_score(0.5, -0.1, 0.5).is_err());
    assert!(triplet_match_score(0.5, 0.5, f64::NAN).is_err());
    assert_eq!(entity_pr(&BTreeSet::new(), &BTreeSet::new()), 1.0);
}

#[test]
fn extraction_is_a_set() {
    let once = extract_entities("I feel hopeless", kg());
    let thrice = extract_entities("hopeless, hopeless and hopeless", kg());
    assert_eq!(once, thrice);
    assert!(extract_entities("", kg()).is_empty());
}
