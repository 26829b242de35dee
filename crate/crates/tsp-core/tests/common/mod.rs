//! Shared test support: seeded random graphs, brute-force oracles that stay
//! independent of the indexed implementations they check, and the replay
//! fixture session used by the end-to-end tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use tsp_core::gateway::{build_rule_prompt, build_tsp_prompt, explain_rule, ReplayBackend};
use tsp_core::kg::{EntityId, LabelTriple, TripleStore};
use tsp_core::partition::{build_subgraphs, partition, rule_related_triples, PartitionConfig};
use tsp_core::rules::{parse_rule, Rule};

// ---------------------------------------------------------------------------
// seeded random graphs and rules
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random store with at most `max_triples` triples over bounded entity and
/// relation pools.
pub fn random_store(
    rng: &mut ChaCha8Rng,
    max_triples: usize,
    max_entities: usize,
    max_relations: usize,
) -> TripleStore {
    let n_triples = rng.gen_range(1..=max_triples);
    let n_entities = rng.gen_range(2..=max_entities.max(2));
    let n_relations = rng.gen_range(1..=max_relations.max(1));
    let rows: Vec<(String, String, String)> = (0..n_triples)
        .map(|_| {
            (
                format!("e{}", rng.gen_range(0..n_entities)),
                format!("r{}", rng.gen_range(0..n_relations)),
                format!("e{}", rng.gen_range(0..n_entities)),
            )
        })
        .collect();
    TripleStore::from_labels(rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
}

/// A random chain rule over the same `r*` label pool (relations may or may
/// not occur in a given store).
pub fn random_rule(rng: &mut ChaCha8Rng, max_relations: usize) -> Rule {
    let k = if rng.gen_bool(0.5) { 2 } else { 3 };
    let pick = |rng: &mut ChaCha8Rng| format!("r{}", rng.gen_range(0..max_relations.max(1)));
    let head = pick(rng);
    let body: Vec<String> = (0..k).map(|_| pick(rng)).collect();
    Rule::new(head, body).expect("length 2 or 3")
}

// ---------------------------------------------------------------------------
// brute-force oracles (independent of the indexed implementations)
// ---------------------------------------------------------------------------

/// Nested-loop join over the raw triple list.
pub fn bf_ground_body(store: &TripleStore, rule: &Rule) -> BTreeSet<(EntityId, EntityId)> {
    let label = |id| store.vocab().relation_label(id);
    let body = rule.body();
    let mut pairs = BTreeSet::new();
    for t1 in store.triples() {
        if label(t1.relation) != body[0] {
            continue;
        }
        for t2 in store.triples() {
            if label(t2.relation) != body[1] || t2.head != t1.tail {
                continue;
            }
            if body.len() == 2 {
                pairs.insert((t1.head, t2.tail));
            } else {
                for t3 in store.triples() {
                    if label(t3.relation) == body[2] && t3.head == t2.tail {
                        pairs.insert((t1.head, t3.tail));
                    }
                }
            }
        }
    }
    pairs
}

/// Support / head facts / body groundings by raw scans.
pub fn bf_score(store: &TripleStore, rule: &Rule) -> (u64, u64, u64) {
    let label = |id| store.vocab().relation_label(id);
    let pairs = bf_ground_body(store, rule);
    let head_facts = store
        .triples()
        .iter()
        .filter(|t| label(t.relation) == rule.head())
        .count() as u64;
    let support = pairs
        .iter()
        .filter(|&&(x, y)| {
            store
                .triples()
                .iter()
                .any(|t| t.head == x && t.tail == y && label(t.relation) == rule.head())
        })
        .count() as u64;
    (support, head_facts, pairs.len() as u64)
}

/// One forward-chaining closure step by raw scans: derivable head pairs not
/// already facts.
pub fn bf_entail(store: &TripleStore, rule: &Rule) -> BTreeSet<(EntityId, EntityId)> {
    let label = |id| store.vocab().relation_label(id);
    bf_ground_body(store, rule)
        .into_iter()
        .filter(|&(x, y)| {
            !store
                .triples()
                .iter()
                .any(|t| t.head == x && t.tail == y && label(t.relation) == rule.head())
        })
        .collect()
}

/// Breadth-first reachability built from per-level raw scans.
pub fn bf_khop(store: &TripleStore, seed: EntityId, hops: usize) -> BTreeSet<EntityId> {
    let mut seen = BTreeSet::from([seed]);
    let mut frontier = vec![seed];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &e in &frontier {
            for t in store.triples() {
                let neighbor = if t.head == e {
                    Some(t.tail)
                } else if t.tail == e {
                    Some(t.head)
                } else {
                    None
                };
                if let Some(n) = neighbor {
                    if seen.insert(n) {
                        next.push(n);
                    }
                }
            }
        }
        frontier = next;
    }
    seen
}

/// Pair sets as labels, for comparing across stores with different vocabs.
pub fn label_pairs(
    store: &TripleStore,
    pairs: &BTreeSet<(EntityId, EntityId)>,
) -> BTreeSet<(String, String)> {
    pairs
        .iter()
        .map(|&(x, y)| {
            (
                store.vocab().entity_label(x).to_string(),
                store.vocab().entity_label(y).to_string(),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fixture session
// ---------------------------------------------------------------------------

/// Root of the committed fixture files, reachable from any crate in the
/// workspace's `crates/` directory.
pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .expect("crates dir")
        .join("tsp-core/tests/fixtures")
}

pub fn session_train_path() -> PathBuf {
    fixtures_root().join("session/train.txt")
}

pub fn session_test_path() -> PathBuf {
    fixtures_root().join("session/test.txt")
}

/// Partition settings under which each fixture family collapses into exactly
/// one group (family radius <= l_hops - 1 from every entity).
pub fn session_partition_config() -> PartitionConfig {
    PartitionConfig {
        l_hops: 3,
        min_group: 2,
        max_group: 30,
        seed: 0,
    }
}

pub fn session_rules() -> Vec<Rule> {
    vec![
        parse_rule("nephewOf(X,Y) <- sonOf(X,Z1) ^ brotherOf(Z1,Y)").unwrap(),
        parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap(),
    ]
}

fn read_response(name: &str) -> String {
    let path = fixtures_root().join("session/responses").join(name);
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing committed response {}: {e}", path.display()))
}

/// Which fixture family a subgraph holds, by marker entity.
pub fn family_of(subgraph: &TripleStore) -> &'static str {
    for (marker, family) in [("a_tom", "a"), ("b_sam", "b"), ("c_max", "c")] {
        if let Some(id) = subgraph.vocab().entity(marker) {
            if !subgraph.neighbors(id).is_empty() {
                return family;
            }
        }
    }
    panic!("subgraph matches no fixture family");
}

/// Materialize the committed response texts as a replay fixture directory
/// keyed by prompt fingerprint, covering both the mining prompts (one per
/// relation of the augmented fixture graph) and the prediction prompts (one
/// per subgraph x rule).
pub fn materialize_session_fixtures(fixture_dir: &Path) {
    let store = TripleStore::load(session_train_path()).expect("fixture train loads");
    let graph = store.add_inverses().expect("fixture augments");

    // mining prompts
    let relations: Vec<String> = graph.vocab().relation_labels().map(str::to_string).collect();
    for head in &relations {
        let prompt = build_rule_prompt(&relations, head).expect("head in list");
        let response = match head.as_str() {
            "uncleOf" => read_response("mining/uncleOf.txt"),
            "nephewOf" => read_response("mining/nephewOf.txt"),
            _ => read_response("mining/default.txt"),
        };
        ReplayBackend::store_fixture(fixture_dir, &prompt.fingerprint, "model=fixture", &response)
            .expect("fixture write");
    }

    // prediction prompts
    let groups = partition(&graph, &session_partition_config()).expect("fixture partitions");
    let subgraphs = build_subgraphs(&graph, &groups).expect("subgraphs build");
    assert_eq!(subgraphs.len(), 3, "fixture graph must split into 3 groups");
    for subgraph in &subgraphs {
        let family = family_of(&subgraph.store);
        for rule in &session_rules() {
            let related: Vec<LabelTriple> = rule_related_triples(&subgraph.store, rule)
                .into_iter()
                .map(|t| subgraph.store.label_triple(t))
                .collect();
            let prompt = build_tsp_prompt(rule, &explain_rule(rule), &related);
            let kind = if rule.head() == "nephewOf" { "nephew" } else { "uncle" };
            let response = read_response(&format!("tsp/family_{family}_{kind}.txt"));
            ReplayBackend::store_fixture(
                fixture_dir,
                &prompt.fingerprint,
                "model=fixture",
                &response,
            )
            .expect("fixture write");
        }
    }
}
