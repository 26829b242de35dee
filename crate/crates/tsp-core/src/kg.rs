//! In-memory knowledge graph: symbol interning, triple indices, inverse
//! augmentation, and neighborhood queries.
//!
//! Entities and relations are interned to dense integer ids at load time;
//! every join and lookup runs on ids, labels only appear at I/O boundaries.
//! A [`TripleStore`] is immutable after construction, so concurrent readers
//! need no synchronization.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relation labels carrying this prefix denote the inverse of their base relation.
pub const INVERSE_PREFIX: &str = "inv_";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        path: String,
        line: usize,
        found: usize,
    },
    #[error("relation `{0}` already carries the `inv_` prefix; the graph was augmented before")]
    AlreadyAugmented(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
}

/// Dense index of an interned entity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(u32);

impl EntityId {
    pub fn new(raw: u32) -> Self {
        EntityId(raw)
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense index of an interned relation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(u32);

impl RelationId {
    pub fn new(raw: u32) -> Self {
        RelationId(raw)
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An interned (head, relation, tail) fact. Equality and hashing are by the
/// id triplet, so a store holds each fact at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// A label-level triple used at I/O boundaries: predicted triples may name
/// entities or relations that never occur in the store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl LabelTriple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        LabelTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// Fold an inverse-relation triple to its base form:
    /// `(h, inv_r, t)` becomes `(t, r, h)`. Applied repeatedly until the
    /// relation no longer carries the prefix.
    pub fn fold_inverse(&self) -> LabelTriple {
        let mut out = self.clone();
        while let Some(base) = out.relation.strip_prefix(INVERSE_PREFIX) {
            out = LabelTriple::new(out.tail.clone(), base.to_string(), out.head.clone());
        }
        out
    }
}

impl fmt::Display for LabelTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Default)]
struct Interner {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.ids.insert(label.to_string(), id);
        id
    }

    fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Shared symbol tables for a store and all subgraphs derived from it.
/// Sharing keeps ids comparable across a graph and its partition.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    entities: Interner,
    relations: Interner,
}

impl Vocab {
    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0)
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }

    pub fn relation_labels(&self) -> impl Iterator<Item = &str> {
        self.relations.labels.iter().map(String::as_str)
    }

    /// True when the relation label carries the inverse prefix.
    pub fn is_inverse(&self, id: RelationId) -> bool {
        self.relation_label(id).starts_with(INVERSE_PREFIX)
    }

    /// For an inverse relation, the id of its base relation, when interned.
    pub fn base_of(&self, id: RelationId) -> Option<RelationId> {
        self.relation_label(id)
            .strip_prefix(INVERSE_PREFIX)
            .and_then(|base| self.relation(base))
    }
}

/// Indexed, immutable triple set.
///
/// Maintains four consistent views of one underlying set: a per-relation
/// index, (head, relation) -> tails, (tail, relation) -> heads, and an
/// undirected entity adjacency used by neighborhood queries.
pub struct TripleStore {
    vocab: Arc<Vocab>,
    triples: Vec<Triple>,
    set: HashSet<Triple>,
    by_relation: HashMap<RelationId, Vec<Triple>>,
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    adjacency: HashMap<EntityId, Vec<EntityId>>,
}

impl fmt::Debug for TripleStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TripleStore")
            .field("triples", &self.triples.len())
            .field("entities", &self.vocab.num_entities())
            .field("relations", &self.vocab.num_relations())
            .finish()
    }
}

impl TripleStore {
    /// Build a store from label triples, interning symbols in first-seen
    /// order and silently deduplicating repeated facts.
    pub fn from_labels<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut vocab = Vocab::default();
        let mut triples = Vec::new();
        let mut set = HashSet::new();
        for (h, r, t) in rows {
            let triple = Triple::new(
                EntityId(vocab.entities.intern(h)),
                RelationId(vocab.relations.intern(r)),
                EntityId(vocab.entities.intern(t)),
            );
            if set.insert(triple) {
                triples.push(triple);
            }
        }
        Self::build(Arc::new(vocab), triples, set)
    }

    /// Load a store from a UTF-8 TSV file: one `head<TAB>relation<TAB>tail`
    /// triple per line, `#`-prefixed comment lines and blank lines skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let rows = read_tsv_triples(path.as_ref())?;
        Ok(Self::from_labels(
            rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        ))
    }

    fn build(vocab: Arc<Vocab>, triples: Vec<Triple>, set: HashSet<Triple>) -> Self {
        let mut by_relation: HashMap<RelationId, Vec<Triple>> = HashMap::new();
        let mut tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut heads: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut adjacency: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
        for &t in &triples {
            by_relation.entry(t.relation).or_default().push(t);
            tails.entry((t.head, t.relation)).or_default().push(t.tail);
            heads.entry((t.tail, t.relation)).or_default().push(t.head);
            adjacency.entry(t.head).or_default().push(t.tail);
            adjacency.entry(t.tail).or_default().push(t.head);
        }
        for neighbors in adjacency.values_mut() {
            neighbors.sort_unstable();
            neighbors.dedup();
        }
        TripleStore {
            vocab,
            triples,
            set,
            by_relation,
            tails,
            heads,
            adjacency,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_arc(&self) -> Arc<Vocab> {
        Arc::clone(&self.vocab)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Number of relations whose label does not carry the inverse prefix.
    pub fn num_base_relations(&self) -> usize {
        self.vocab
            .relation_labels()
            .filter(|l| !l.starts_with(INVERSE_PREFIX))
            .count()
    }

    pub fn contains(&self, triple: Triple) -> bool {
        self.set.contains(&triple)
    }

    /// Membership by label; unknown labels are simply absent facts.
    pub fn contains_labels(&self, head: &str, relation: &str, tail: &str) -> bool {
        match (
            self.vocab.entity(head),
            self.vocab.relation(relation),
            self.vocab.entity(tail),
        ) {
            (Some(h), Some(r), Some(t)) => self.contains(Triple::new(h, r, t)),
            _ => false,
        }
    }

    pub fn contains_label_triple(&self, triple: &LabelTriple) -> bool {
        self.contains_labels(&triple.head, &triple.relation, &triple.tail)
    }

    /// All triples with the given relation, in insertion order.
    pub fn relation_triples(&self, relation: RelationId) -> &[Triple] {
        self.by_relation
            .get(&relation)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Tails t such that (head, relation, t) holds.
    pub fn tails_of(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Heads h such that (h, relation, tail) holds.
    pub fn heads_of(&self, tail: EntityId, relation: RelationId) -> &[EntityId] {
        self.heads
            .get(&(tail, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Undirected neighbors: every entity sharing a triple with `e`, in either
    /// direction.
    pub fn neighbors(&self, e: EntityId) -> &[EntityId] {
        self.adjacency.get(&e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn label_triple(&self, t: Triple) -> LabelTriple {
        LabelTriple::new(
            self.vocab.entity_label(t.head),
            self.vocab.relation_label(t.relation),
            self.vocab.entity_label(t.tail),
        )
    }

    /// Export the whole store as a sorted label-triple set.
    pub fn label_triples(&self) -> BTreeSet<LabelTriple> {
        self.triples.iter().map(|&t| self.label_triple(t)).collect()
    }

    /// Entities reachable from `seed` in at most `hops` undirected steps,
    /// including the seed itself (`hops = 0` yields `{seed}`).
    pub fn khop_neighbors(
        &self,
        seed: EntityId,
        hops: usize,
    ) -> Result<BTreeSet<EntityId>, StoreError> {
        if seed.index() >= self.vocab.num_entities() {
            return Err(StoreError::UnknownEntity(seed.0));
        }
        let mut seen: BTreeSet<EntityId> = BTreeSet::new();
        seen.insert(seed);
        let mut frontier = VecDeque::from([seed]);
        for _ in 0..hops {
            let mut next = VecDeque::new();
            while let Some(e) = frontier.pop_front() {
                for &n in self.neighbors(e) {
                    if seen.insert(n) {
                        next.push_back(n);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(seen)
    }

    /// Augment the graph with inverse facts: for every (h, r, t) add
    /// (t, inv_r, h). Errors if any relation already carries the prefix, so
    /// applying the augmentation twice is rejected rather than compounded.
    pub fn add_inverses(&self) -> Result<TripleStore, StoreError> {
        for label in self.vocab.relation_labels() {
            if label.starts_with(INVERSE_PREFIX) {
                return Err(StoreError::AlreadyAugmented(label.to_string()));
            }
        }
        let mut vocab = (*self.vocab).clone();
        let base_count = vocab.relations.len() as u32;
        for base in 0..base_count {
            let inv_label = format!("{INVERSE_PREFIX}{}", vocab.relations.label(base));
            vocab.relations.intern(&inv_label);
        }
        let mut triples = self.triples.clone();
        let mut set = self.set.clone();
        for &t in &self.triples {
            let inv = Triple::new(t.tail, RelationId(t.relation.0 + base_count), t.head);
            if set.insert(inv) {
                triples.push(inv);
            }
        }
        Ok(Self::build(Arc::new(vocab), triples, set))
    }

    /// The subgraph induced by an entity set: exactly the triples whose head
    /// AND tail are both in the set. The result shares this store's vocab.
    pub fn induced(&self, entities: &BTreeSet<EntityId>) -> Result<TripleStore, StoreError> {
        for &e in entities {
            if e.index() >= self.vocab.num_entities() {
                return Err(StoreError::UnknownEntity(e.0));
            }
        }
        let mut triples = Vec::new();
        let mut set = HashSet::new();
        for &t in &self.triples {
            if entities.contains(&t.head) && entities.contains(&t.tail) && set.insert(t) {
                triples.push(t);
            }
        }
        Ok(Self::build(Arc::clone(&self.vocab), triples, set))
    }

    /// Connected components of the undirected entity graph, each sorted, in
    /// order of their smallest entity id. Isolated entities cannot occur:
    /// every interned entity appears in some triple.
    pub fn connected_components(&self) -> Vec<BTreeSet<EntityId>> {
        let n = self.vocab.num_entities();
        let mut seen = vec![false; n];
        let mut components = Vec::new();
        for start in 0..n as u32 {
            if seen[start as usize] {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut queue = VecDeque::from([EntityId(start)]);
            seen[start as usize] = true;
            comp.insert(EntityId(start));
            while let Some(e) = queue.pop_front() {
                for &nb in self.neighbors(e) {
                    if !seen[nb.index()] {
                        seen[nb.index()] = true;
                        comp.insert(nb);
                        queue.push_back(nb);
                    }
                }
            }
            components.push(comp);
        }
        components
    }
}

/// Parse a TSV triple file into label rows. Shared by the graph loader and
/// the test-set loader.
pub fn read_tsv_triples(path: &Path) -> Result<Vec<(String, String, String)>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(StoreError::MalformedLine {
                path: path.display().to_string(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        rows.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(rows)
}

/// Load a test split as a label-triple set, deduplicated.
pub fn load_label_set(path: impl AsRef<Path>) -> Result<BTreeSet<LabelTriple>, StoreError> {
    let rows = read_tsv_triples(path.as_ref())?;
    Ok(rows
        .into_iter()
        .map(|(h, r, t)| LabelTriple::new(h, r, t))
        .collect())
}
