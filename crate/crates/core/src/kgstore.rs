//! DSM-5-style knowledge graph: entities, typed triplets, alias lexicon.
//!
//! The graph is loaded once from a line-delimited JSON file and is immutable
//! afterwards. Integrity (referential, kind-consistency, root reachability) is
//! checked after the whole file has been read, so records may appear in any
//! order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read knowledge graph: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("entity not found: {0}")]
    NotFound(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Disorder,
    Symptom,
    Criterion,
    Exclusion,
    Specifier,
    Modifier,
    Root,
}

/// Closed relation vocabulary. Declaration order is the sort order used by
/// [`KnowledgeGraph::neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    IncludesDisorder,
    HasSymptom,
    HasCriterion,
    HasExclusion,
    HasSpecifier,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::IncludesDisorder,
        Relation::HasSymptom,
        Relation::HasCriterion,
        Relation::HasExclusion,
        Relation::HasSpecifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::IncludesDisorder => "includes_disorder",
            Relation::HasSymptom => "has_symptom",
            Relation::HasCriterion => "has_criterion",
            Relation::HasExclusion => "has_exclusion",
            Relation::HasSpecifier => "has_specifier",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    fn endpoint_kinds_ok(self, subject: EntityKind, object: EntityKind) -> bool {
        use EntityKind::*;
        match self {
            Relation::IncludesDisorder => subject == Root && object == Disorder,
            Relation::HasSymptom => subject == Disorder && object == Symptom,
            Relation::HasCriterion => subject == Disorder && matches!(object, Criterion | Modifier),
            Relation::HasExclusion => subject == Disorder && object == Exclusion,
            Relation::HasSpecifier => subject == Disorder && matches!(object, Specifier | Modifier),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub canonical_name: String,
    /// Normalized surface forms; always contains the normalized canonical name.
    pub aliases: BTreeSet<String>,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: EntityId,
    pub relation: Relation,
    pub object: EntityId,
    pub source: String,
}

impl Triplet {
    /// Stable identifier used in score reports.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.subject, self.relation, self.object)
    }
}

/// Lowercase, NFC-normalize, turn punctuation into spaces and collapse runs of
/// whitespace.
pub fn normalize(text: &str) -> String {
    let mapped: String =
        text.nfc().flat_map(char::to_lowercase).map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokens of the normalized text.
pub fn tokens(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Entity {
        id: String,
        name: String,
        kind: EntityKind,
        #[serde(default)]
        aliases: Vec<String>,
    },
    Triplet {
        subject: String,
        relation: String,
        #[serde(default)]
        object: Option<String>,
        #[serde(default)]
        object_literal: Option<String>,
        #[serde(default)]
        source: String,
    },
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RecordOut<'a> {
    Entity { id: &'a str, name: &'a str, kind: EntityKind, aliases: Vec<&'a str> },
    Triplet { subject: &'a str, relation: Relation, object: &'a str, source: &'a str },
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: BTreeMap<EntityId, Entity>,
    triplets: Vec<Triplet>,
    alias_index: BTreeMap<String, BTreeSet<EntityId>>,
    outgoing: BTreeMap<EntityId, Vec<usize>>,
    incoming: BTreeMap<EntityId, Vec<usize>>,
    root: EntityId,
    max_alias_tokens: usize,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities && self.triplets == other.triplets
    }
}

impl KnowledgeGraph {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KgError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_jsonl(&text)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, KgError> {
        let mut entities: BTreeMap<EntityId, Entity> = BTreeMap::new();
        let mut raw_triplets: Vec<(usize, String, Relation, TripletObject, String)> = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(line).map_err(|e| KgError::Parse { line: line_no, message: e.to_string() })?;
            match record {
                Record::Entity { id, name, kind, aliases } => {
                    if id.trim().is_empty() {
                        return Err(KgError::Parse { line: line_no, message: "empty entity id".into() });
                    }
                    if normalize(&name).is_empty() {
                        return Err(KgError::Parse {
                            line: line_no,
                            message: format!("entity {id} has an empty name"),
                        });
                    }
                    let id = EntityId::new(id);
                    if entities.contains_key(&id) {
                        return Err(KgError::Integrity(format!("duplicate entity id {id}")));
                    }
                    let mut alias_set: BTreeSet<String> =
                        aliases.iter().map(|a| normalize(a)).filter(|a| !a.is_empty()).collect();
                    alias_set.insert(normalize(&name));
                    entities.insert(id.clone(), Entity { id, canonical_name: name, aliases: alias_set, kind });
                }
                Record::Triplet { subject, relation, object, object_literal, source } => {
                    let rel = Relation::parse(&relation).ok_or_else(|| KgError::Parse {
                        line: line_no,
                        message: format!("unknown relation {relation:?}"),
                    })?;
                    let obj = match (object, object_literal) {
                        (Some(o), None) => TripletObject::Id(o),
                        (None, Some(l)) if !normalize(&l).is_empty() => TripletObject::Literal(l),
                        _ => {
                            return Err(KgError::Parse {
                                line: line_no,
                                message: "triplet needs exactly one of object / object_literal".into(),
                            })
                        }
                    };
                    raw_triplets.push((line_no, subject, rel, obj, source));
                }
            }
        }

        // literal objects become modifier entities
        let mut triplets = Vec::with_capacity(raw_triplets.len());
        for (_, subject, relation, object, source) in raw_triplets {
            let object = match object {
                TripletObject::Id(id) => EntityId::new(id),
                TripletObject::Literal(lit) => {
                    let id = EntityId::new(format!("lit_{}", normalize(&lit).replace(' ', "_")));
                    match entities.get(&id) {
                        Some(e) if e.kind == EntityKind::Modifier => {}
                        Some(_) => {
                            return Err(KgError::Integrity(format!(
                                "literal {lit:?} collides with declared entity {id}"
                            )))
                        }
                        None => {
                            let aliases = BTreeSet::from([normalize(&lit)]);
                            entities.insert(
                                id.clone(),
                                Entity { id: id.clone(), canonical_name: lit, aliases, kind: EntityKind::Modifier },
                            );
                        }
                    }
                    id
                }
            };
            triplets.push(Triplet { subject: EntityId::new(subject), relation, object, source });
        }

        Self::assemble(entities, triplets)
    }

    fn assemble(entities: BTreeMap<EntityId, Entity>, triplets: Vec<Triplet>) -> Result<Self, KgError> {
        let roots: Vec<&EntityId> = entities.values().filter(|e| e.kind == EntityKind::Root).map(|e| &e.id).collect();
        let root = match roots.as_slice() {
            [r] => (*r).clone(),
            [] => return Err(KgError::Integrity("no root entity".into())),
            many => {
                let ids: Vec<_> = many.iter().map(|id| id.as_str()).collect();
                return Err(KgError::Integrity(format!("multiple root entities: {}", ids.join(", "))));
            }
        };

        let mut seen = BTreeSet::new();
        for t in &triplets {
            let subj = entities
                .get(&t.subject)
                .ok_or_else(|| KgError::Integrity(format!("triplet references unknown entity {}", t.subject)))?;
            let obj = entities
                .get(&t.object)
                .ok_or_else(|| KgError::Integrity(format!("triplet references unknown entity {}", t.object)))?;
            if !t.relation.endpoint_kinds_ok(subj.kind, obj.kind) {
                return Err(KgError::Integrity(format!(
                    "{} cannot link {:?} {} to {:?} {}",
                    t.relation, subj.kind, t.subject, obj.kind, t.object
                )));
            }
            if !seen.insert((&t.subject, t.relation, &t.object)) {
                return Err(KgError::Integrity(format!("duplicate triplet {}", t.key())));
            }
        }

        let mut outgoing: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        let mut incoming: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        for (i, t) in triplets.iter().enumerate() {
            outgoing.entry(t.subject.clone()).or_default().push(i);
            incoming.entry(t.object.clone()).or_default().push(i);
        }
        for list in outgoing.values_mut() {
            list.sort_by(|&a, &b| {
                (triplets[a].relation, &triplets[a].object).cmp(&(triplets[b].relation, &triplets[b].object))
            });
        }

        // every disorder must be reachable from the root
        let mut reached = BTreeSet::from([root.clone()]);
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(id) = queue.pop_front() {
            for &i in outgoing.get(&id).map(Vec::as_slice).unwrap_or_default() {
                if reached.insert(triplets[i].object.clone()) {
                    queue.push_back(triplets[i].object.clone());
                }
            }
        }
        if let Some(orphan) = entities.values().find(|e| e.kind == EntityKind::Disorder && !reached.contains(&e.id)) {
            return Err(KgError::Integrity(format!("disorder {} is not reachable from the root", orphan.id)));
        }

        let mut alias_index: BTreeMap<String, BTreeSet<EntityId>> = BTreeMap::new();
        let mut max_alias_tokens = 0;
        for e in entities.values() {
            for a in &e.aliases {
                max_alias_tokens = max_alias_tokens.max(a.split(' ').count());
                alias_index.entry(a.clone()).or_default().insert(e.id.clone());
            }
        }

        Ok(Self { entities, triplets, alias_index, outgoing, incoming, root, max_alias_tokens })
    }

    /// Serialize back into the line-record format. Entities come first, sorted
    /// by id, then triplets in load order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entities.values() {
            let rec = RecordOut::Entity {
                id: e.id.as_str(),
                name: &e.canonical_name,
                kind: e.kind,
                aliases: e.aliases.iter().map(String::as_str).collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("entity record serializes"));
            out.push('\n');
        }
        for t in &self.triplets {
            let rec = RecordOut::Triplet {
                subject: t.subject.as_str(),
                relation: t.relation,
                object: t.object.as_str(),
                source: &t.source,
            };
            out.push_str(&serde_json::to_string(&rec).expect("triplet record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn root(&self) -> &EntityId {
        &self.root
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entities_of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &Entity> {
        self.entities.values().filter(move |e| e.kind == kind)
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn alias_index(&self) -> &BTreeMap<String, BTreeSet<EntityId>> {
        &self.alias_index
    }

    pub(crate) fn max_alias_tokens(&self) -> usize {
        self.max_alias_tokens
    }

    pub fn name_of<'a>(&'a self, id: &'a EntityId) -> &'a str {
        self.entities.get(id).map(|e| e.canonical_name.as_str()).unwrap_or(id.as_str())
    }

    /// Entity ids whose normalized alias equals the normalized surface form.
    pub fn lookup_entity(&self, surface: &str) -> BTreeSet<EntityId> {
        self.alias_index.get(&normalize(surface)).cloned().unwrap_or_default()
    }

    /// Outgoing triplets of `entity`, optionally filtered by relation, ordered
    /// by (relation, object id).
    pub fn neighbors(&self, entity: &EntityId, relation: Option<Relation>) -> Result<Vec<&Triplet>, KgError> {
        if !self.entities.contains_key(entity) {
            return Err(KgError::NotFound(entity.clone()));
        }
        Ok(self
            .outgoing
            .get(entity)
            .map(Vec::as_slice)
            .unwrap_or_default()
            .iter()
            .map(|&i| &self.triplets[i])
            .filter(|t| relation.is_none_or(|r| t.relation == r))
            .collect())
    }

    /// Indices (into [`Self::triplets`]) of every triplet touching `entity`.
    pub(crate) fn incident(&self, entity: &EntityId) -> impl Iterator<Item = usize> + '_ {
        let out = self.outgoing.get(entity).map(Vec::as_slice).unwrap_or_default();
        let inc = self.incoming.get(entity).map(Vec::as_slice).unwrap_or_default();
        out.iter().chain(inc).copied()
    }

    /// The has_symptom objects of a disorder.
    pub fn symptoms_of(&self, disorder: &EntityId) -> BTreeSet<EntityId> {
        self.neighbors(disorder, Some(Relation::HasSymptom))
            .map(|ts| ts.into_iter().map(|t| t.object.clone()).collect())
            .unwrap_or_default()
    }

    pub fn disorders(&self) -> impl Iterator<Item = &EntityId> {
        self.entities_of_kind(EntityKind::Disorder).map(|e| &e.id)
    }

    /// "<subject name> <relation with spaces> <object name>"
    pub fn verbalize(&self, t: &Triplet) -> String {
        format!("{} {} {}", self.name_of(&t.subject), t.relation.as_str().replace('_', " "), self.name_of(&t.object))
    }
}

enum TripletObject {
    Id(String),
    Literal(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"type":"entity","id":"root","name":"Root","kind":"root"}
{"type":"entity","id":"d","name":"Some disorder","kind":"disorder"}
{"type":"triplet","subject":"root","relation":"includes_disorder","object":"d","source":"x"}
{"type":"entity","id":"s1","name":"depressed mood","kind":"symptom","aliases":["feel sad"]}
{"type":"entity","id":"s2","name":"insomnia","kind":"symptom"}
{"type":"triplet","subject":"d","relation":"has_symptom","object":"s1","source":"x"}
{"type":"triplet","subject":"d","relation":"has_symptom","object":"s2","source":"x"}
"#;

    #[test]
    fn smallest_valid_graph() {
        let kg = KnowledgeGraph::from_jsonl(SMALL).unwrap();
        assert_eq!(kg.entity_count(), 4);
        assert_eq!(kg.triplets().len(), 3);
        assert_eq!(kg.root().as_str(), "root");
    }

    #[test]
    fn dangling_object_names_the_id() {
        let text = format!(
            "{SMALL}{}\n",
            r#"{"type":"triplet","subject":"d","relation":"has_symptom","object":"ghost","source":"x"}"#
        );
        let err = KnowledgeGraph::from_jsonl(&text).unwrap_err();
        assert!(matches!(&err, KgError::Integrity(m) if m.contains("ghost")), "{err}");
    }

    #[test]
    fn unknown_relation_is_parse_error() {
        let text = format!(
            "{SMALL}{}\n",
            r#"{"type":"triplet","subject":"d","relation":"has symptom","object":"s1","source":"x"}"#
        );
        assert!(matches!(KnowledgeGraph::from_jsonl(&text), Err(KgError::Parse { line: 8, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{SMALL}not json\n");
        assert!(matches!(KnowledgeGraph::from_jsonl(&text), Err(KgError::Parse { line: 8, .. })));
    }

    #[test]
    fn integrity_failures() {
        let dup = format!("{SMALL}{}\n", r#"{"type":"entity","id":"s2","name":"x","kind":"symptom"}"#);
        assert!(matches!(KnowledgeGraph::from_jsonl(&dup), Err(KgError::Integrity(_))));

        let dup_t = format!(
            "{SMALL}{}\n",
            r#"{"type":"triplet","subject":"d","relation":"has_symptom","object":"s2","source":"y"}"#
        );
        assert!(matches!(KnowledgeGraph::from_jsonl(&dup_t), Err(KgError::Integrity(_))));

        let bad_kind = format!(
            "{SMALL}{}\n",
            r#"{"type":"triplet","subject":"s1","relation":"has_symptom","object":"s2","source":"y"}"#
        );
        assert!(matches!(KnowledgeGraph::from_jsonl(&bad_kind), Err(KgError::Integrity(_))));

        let two_roots = format!("{SMALL}{}\n", r#"{"type":"entity","id":"r2","name":"R2","kind":"root"}"#);
        assert!(matches!(KnowledgeGraph::from_jsonl(&two_roots), Err(KgError::Integrity(_))));

        let no_root = SMALL.lines().skip(1).filter(|l| !l.contains("includes_disorder")).collect::<Vec<_>>().join("\n");
        assert!(matches!(KnowledgeGraph::from_jsonl(&no_root), Err(KgError::Integrity(_))));

        let orphan = format!("{SMALL}{}\n", r#"{"type":"entity","id":"d2","name":"Other","kind":"disorder"}"#);
        let err = KnowledgeGraph::from_jsonl(&orphan).unwrap_err();
        assert!(matches!(&err, KgError::Integrity(m) if m.contains("d2")), "{err}");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("DEPRESSED,  MOOD."), "depressed mood");
        assert_eq!(normalize("  can't\tsleep "), "can t sleep");
        assert_eq!(normalize("Self-Esteem"), "self esteem");
        // NFD input composes before lowercasing
        assert_eq!(normalize("Cafe\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn lookup_and_neighbors() {
        let kg = KnowledgeGraph::from_jsonl(SMALL).unwrap();
        assert_eq!(kg.lookup_entity("Feel SAD!"), BTreeSet::from([EntityId::from("s1")]));
        assert!(kg.lookup_entity("purple unicorn").is_empty());
        let n = kg.neighbors(&"d".into(), Some(Relation::HasSymptom)).unwrap();
        assert_eq!(n.iter().map(|t| t.object.as_str()).collect::<Vec<_>>(), ["s1", "s2"]);
        assert!(matches!(kg.neighbors(&"nope".into(), None), Err(KgError::NotFound(_))));
    }

    #[test]
    fn literal_objects_become_modifiers() {
        let text = format!(
            "{SMALL}{}\n",
            r#"{"type":"triplet","subject":"d","relation":"has_specifier","object_literal":"Single episode","source":"x"}"#
        );
        let kg = KnowledgeGraph::from_jsonl(&text).unwrap();
        let lit = kg.entity(&"lit_single_episode".into()).unwrap();
        assert_eq!(lit.kind, EntityKind::Modifier);
        assert_eq!(kg.entity_count(), 5);
        let again = KnowledgeGraph::from_jsonl(&kg.to_jsonl()).unwrap();
        assert_eq!(kg, again);
    }

    #[test]
    fn verbalization_template() {
        let kg = KnowledgeGraph::from_jsonl(SMALL).unwrap();
        assert_eq!(kg.verbalize(&kg.triplets()[1]), "Some disorder has symptom depressed mood");
    }
}
