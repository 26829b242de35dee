//! Chain Horn rules: parsing, rendering, grounding, scoring, filtering, and
//! forward application.
//!
//! A rule has the shape `head(X,Y) <- b1(X,Z1) ^ b2(Z1,Y)` (or the 3-atom
//! chain): the variable pattern is fixed by position, so only the head
//! relation and the ordered body relations are stored. Grounding runs as a
//! relation-indexed hash join left-to-right along the chain; the brute-force
//! join oracle lives in test code only.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::kg::{EntityId, Triple, TripleStore};

/// Allowed body lengths, inclusive.
pub const MIN_BODY_LEN: usize = 2;
pub const MAX_BODY_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("no rule arrow (`<-`) found in `{0}`")]
    MissingArrow(String),
    #[error("more than one rule arrow in `{0}`")]
    ExtraArrow(String),
    #[error("atom `{atom}` is malformed: {detail}")]
    BadAtom { atom: String, detail: String },
    #[error("atom `{atom}` has {found} arguments, expected 2")]
    BadArity { atom: String, found: usize },
    #[error("variable chain broken at atom `{atom}`: {detail}")]
    BrokenChain { atom: String, detail: String },
    #[error("rule body has {0} atoms, allowed lengths are 2 and 3")]
    BadLength(usize),
}

/// A chain Horn rule: head relation plus ordered body relations.
///
/// Relations are held as labels; they are resolved against a store's symbol
/// table at grounding time, since rules arrive from text and may mention
/// relations a given graph does not contain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    head: String,
    body: Vec<String>,
}

impl Rule {
    pub fn new(head: impl Into<String>, body: Vec<String>) -> Result<Self, RuleError> {
        if body.len() < MIN_BODY_LEN || body.len() > MAX_BODY_LEN {
            return Err(RuleError::BadLength(body.len()));
        }
        Ok(Rule {
            head: head.into(),
            body,
        })
    }

    pub fn head(&self) -> &str {
        &self.head
    }

    pub fn body(&self) -> &[String] {
        &self.body
    }

    /// Body length K.
    pub fn body_len(&self) -> usize {
        self.body.len()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_rule(self))
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render_rule(self))
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_rule(&text).map_err(serde::de::Error::custom)
    }
}

struct Atom {
    relation: String,
    first: String,
    second: String,
    source: String,
}

fn parse_atom(text: &str) -> Result<Atom, RuleError> {
    let source = text.trim().to_string();
    let bad = |detail: &str| RuleError::BadAtom {
        atom: source.clone(),
        detail: detail.to_string(),
    };
    let open = source.find('(').ok_or_else(|| bad("missing `(`"))?;
    let close = source.rfind(')').ok_or_else(|| bad("missing `)`"))?;
    if close != source.len() - 1 {
        return Err(bad("trailing text after `)`"));
    }
    let relation = source[..open].trim().to_string();
    if relation.is_empty() || !relation.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return Err(bad("relation name must be word characters"));
    }
    let args: Vec<&str> = source[open + 1..close].split(',').map(str::trim).collect();
    if args.len() != 2 {
        return Err(RuleError::BadArity {
            atom: source.clone(),
            found: args.len(),
        });
    }
    for arg in &args {
        if arg.is_empty() || !arg.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(bad("variables must be word characters"));
        }
    }
    Ok(Atom {
        relation,
        first: args[0].to_string(),
        second: args[1].to_string(),
        source,
    })
}

/// Replace the tolerated arrow and conjunction synonyms with the canonical
/// tokens, so one grammar handles every accepted spelling.
pub(crate) fn normalize_rule_text(text: &str) -> String {
    text.replace(['\u{27F5}', '\u{2190}'], "<-")
        .replace('\u{2227}', "^")
}

/// Parse a rule line such as `uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)`.
///
/// Accepts `∧` for `^` and `⟵`/`←` for `<-`, flexible whitespace, and any
/// identifier variable names, as long as the positional chain is intact:
/// the head's first variable opens the chain, each body atom hands its second
/// variable to the next atom's first, and the head's second variable closes
/// the chain. All chain variables must be pairwise distinct.
pub fn parse_rule(text: &str) -> Result<Rule, RuleError> {
    let normalized = normalize_rule_text(text);
    let mut sides = normalized.split("<-");
    let head_part = sides
        .next()
        .ok_or_else(|| RuleError::MissingArrow(text.trim().to_string()))?;
    let body_part = sides
        .next()
        .ok_or_else(|| RuleError::MissingArrow(text.trim().to_string()))?;
    if sides.next().is_some() {
        return Err(RuleError::ExtraArrow(text.trim().to_string()));
    }

    let head = parse_atom(head_part)?;
    let body: Vec<Atom> = body_part
        .split('^')
        .map(parse_atom)
        .collect::<Result<_, _>>()?;
    if body.len() < MIN_BODY_LEN || body.len() > MAX_BODY_LEN {
        return Err(RuleError::BadLength(body.len()));
    }

    if head.first == head.second {
        return Err(RuleError::BrokenChain {
            atom: head.source.clone(),
            detail: "head variables must be distinct".to_string(),
        });
    }
    if body[0].first != head.first {
        return Err(RuleError::BrokenChain {
            atom: body[0].source.clone(),
            detail: format!(
                "first body variable `{}` does not match head variable `{}`",
                body[0].first, head.first
            ),
        });
    }
    for window in body.windows(2) {
        if window[0].second != window[1].first {
            return Err(RuleError::BrokenChain {
                atom: window[1].source.clone(),
                detail: format!(
                    "expected shared variable `{}`, found `{}`",
                    window[0].second, window[1].first
                ),
            });
        }
    }
    let last = body.last().expect("body length checked");
    if last.second != head.second {
        return Err(RuleError::BrokenChain {
            atom: last.source.clone(),
            detail: format!(
                "last body variable `{}` does not match head variable `{}`",
                last.second, head.second
            ),
        });
    }
    let mut vars: Vec<&str> = vec![&head.first];
    vars.extend(body.iter().map(|a| a.second.as_str()));
    let distinct: HashSet<&str> = vars.iter().copied().collect();
    if distinct.len() != vars.len() {
        return Err(RuleError::BrokenChain {
            atom: head.source.clone(),
            detail: "chain variables must be pairwise distinct".to_string(),
        });
    }

    Rule::new(head.relation, body.into_iter().map(|a| a.relation).collect())
}

/// Canonical text form; `parse_rule(render_rule(r)) == r` and rendering is
/// deterministic. Variables are renamed positionally to X, Z1, Z2, Y.
pub fn render_rule(rule: &Rule) -> String {
    let k = rule.body.len();
    let var = |i: usize| -> String {
        if i == 0 {
            "X".to_string()
        } else if i == k {
            "Y".to_string()
        } else {
            format!("Z{i}")
        }
    };
    let body = rule
        .body
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{r}({},{})", var(i), var(i + 1)))
        .collect::<Vec<_>>()
        .join(" ^ ");
    format!("{}(X,Y) <- {}", rule.head, body)
}

/// Rule quality on a specific graph. Support counts distinct (x, y) head
/// pairs rather than distinct full bindings; zero denominators yield zero
/// ratios with the degenerate flag set instead of an error, so mined rules
/// naming fact-free relations flow through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleQuality {
    pub support: u64,
    pub head_coverage: f64,
    pub confidence: f64,
    pub body_groundings: u64,
    pub head_facts: u64,
    pub degenerate: bool,
}

/// Distinct (x, y) endpoint pairs for which the body chain is satisfiable.
/// Unknown body relations yield the empty set. Reflexive pairs (x = y) are
/// counted like any other.
pub fn ground_body(store: &TripleStore, rule: &Rule) -> BTreeSet<(EntityId, EntityId)> {
    let Some(body) = resolve_body(store, rule) else {
        return BTreeSet::new();
    };
    let mut pairs = BTreeSet::new();
    for t1 in store.relation_triples(body[0]) {
        match body.len() {
            2 => {
                for &y in store.tails_of(t1.tail, body[1]) {
                    pairs.insert((t1.head, y));
                }
            }
            _ => {
                for &z2 in store.tails_of(t1.tail, body[1]) {
                    for &y in store.tails_of(z2, body[2]) {
                        pairs.insert((t1.head, y));
                    }
                }
            }
        }
    }
    pairs
}

/// Like [`ground_body`], additionally keeping one witness binding (the body
/// triples of the first chain found in scan order) per endpoint pair.
pub fn ground_body_witnessed(
    store: &TripleStore,
    rule: &Rule,
) -> BTreeMap<(EntityId, EntityId), Vec<Triple>> {
    let Some(body) = resolve_body(store, rule) else {
        return BTreeMap::new();
    };
    let mut out: BTreeMap<(EntityId, EntityId), Vec<Triple>> = BTreeMap::new();
    for t1 in store.relation_triples(body[0]) {
        match body.len() {
            2 => {
                for &y in store.tails_of(t1.tail, body[1]) {
                    out.entry((t1.head, y)).or_insert_with(|| {
                        vec![*t1, Triple::new(t1.tail, body[1], y)]
                    });
                }
            }
            _ => {
                for &z2 in store.tails_of(t1.tail, body[1]) {
                    for &y in store.tails_of(z2, body[2]) {
                        out.entry((t1.head, y)).or_insert_with(|| {
                            vec![
                                *t1,
                                Triple::new(t1.tail, body[1], z2),
                                Triple::new(z2, body[2], y),
                            ]
                        });
                    }
                }
            }
        }
    }
    out
}

fn resolve_body(store: &TripleStore, rule: &Rule) -> Option<Vec<crate::kg::RelationId>> {
    rule.body
        .iter()
        .map(|label| store.vocab().relation(label))
        .collect()
}

/// Score a rule on a graph: support, head coverage, confidence.
pub fn score_rule(store: &TripleStore, rule: &Rule) -> RuleQuality {
    let pairs = ground_body(store, rule);
    let body_groundings = pairs.len() as u64;
    let head_rel = store.vocab().relation(rule.head());
    let head_facts = head_rel
        .map(|r| store.relation_triples(r).len() as u64)
        .unwrap_or(0);
    let support = match head_rel {
        Some(r) => pairs
            .iter()
            .filter(|&&(x, y)| store.contains(Triple::new(x, r, y)))
            .count() as u64,
        None => 0,
    };
    let degenerate = head_facts == 0 || body_groundings == 0;
    RuleQuality {
        support,
        head_coverage: ratio(support, head_facts),
        confidence: ratio(support, body_groundings),
        body_groundings,
        head_facts,
        degenerate,
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Deduplicate, score, and threshold a rule list. Retains exactly the rules
/// with `confidence >= alpha_conf` and `head_coverage >= alpha_hc`; output is
/// sorted by (head relation, confidence descending, canonical text).
pub fn filter_rules(
    rules: &[Rule],
    alpha_conf: f64,
    alpha_hc: f64,
    store: &TripleStore,
) -> Vec<(Rule, RuleQuality)> {
    let mut seen = HashSet::new();
    let mut scored: Vec<(Rule, RuleQuality)> = Vec::new();
    for rule in rules {
        if !seen.insert(rule.clone()) {
            continue;
        }
        let quality = score_rule(store, rule);
        if quality.confidence >= alpha_conf && quality.head_coverage >= alpha_hc {
            scored.push((rule.clone(), quality));
        }
    }
    scored.sort_by(|(ra, qa), (rb, qb)| {
        ra.head()
            .cmp(rb.head())
            .then(
                qb.confidence
                    .partial_cmp(&qa.confidence)
                    .expect("confidence is finite"),
            )
            .then_with(|| render_rule(ra).cmp(&render_rule(rb)))
    });
    scored
}

/// A triple derived by forward application of a rule, with the body triples
/// that witnessed it. The predicted relation is the rule's head label; it may
/// be absent from the graph's vocabulary, which is why it is not an id here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entailment {
    pub head_entity: EntityId,
    pub tail_entity: EntityId,
    pub witnesses: Vec<Triple>,
}

/// Forward-apply a rule: every (x, head, y) licensed by a body grounding and
/// not already present in the graph. Serves as the deterministic,
/// hallucination-free reference predictor.
pub fn entail(store: &TripleStore, rule: &Rule) -> Vec<Entailment> {
    let head_rel = store.vocab().relation(rule.head());
    ground_body_witnessed(store, rule)
        .into_iter()
        .filter(|&((x, y), _)| match head_rel {
            Some(r) => !store.contains(Triple::new(x, r, y)),
            None => true,
        })
        .map(|((x, y), witnesses)| Entailment {
            head_entity: x,
            tail_entity: y,
            witnesses,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::TripleStore;

    #[test]
    fn parse_two_atom_rule() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        assert_eq!(rule.head(), "uncleOf");
        assert_eq!(rule.body(), ["brotherOf", "fatherOf"]);
    }

    #[test]
    fn parse_three_atom_rule_with_inverse() {
        let rule =
            parse_rule("fatherOf(X,Y) <- inv_wifeOf(X,Z1) ^ motherOf(Z1,Z2) ^ sisterOf(Z2,Y)")
                .unwrap();
        assert_eq!(rule.head(), "fatherOf");
        assert_eq!(rule.body_len(), 3);
        assert_eq!(rule.body()[0], "inv_wifeOf");
    }

    #[test]
    fn parse_accepts_unicode_synonyms_and_loose_whitespace() {
        let a = parse_rule("uncleOf(X,Y) ⟵ brotherOf(X,Z1) ∧ fatherOf(Z1,Y)").unwrap();
        let b = parse_rule("  uncleOf( X , Y )<-brotherOf(X,Z1)^fatherOf( Z1 , Y ) ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_rejects_broken_chain() {
        let err = parse_rule("a(X,Y) <- b(X,Z1) ^ c(Z2,Y)").unwrap_err();
        match err {
            RuleError::BrokenChain { atom, .. } => assert!(atom.contains('c')),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn parse_rejects_bad_arity_and_lengths() {
        assert!(matches!(
            parse_rule("a(X,Y) <- b(X,Z1,Q) ^ c(Z1,Y)"),
            Err(RuleError::BadArity { found: 3, .. })
        ));
        assert!(matches!(
            parse_rule("a(X,Y) <- b(X,Y)"),
            Err(RuleError::BadLength(1))
        ));
        assert!(matches!(
            parse_rule("a(X,Y) <- b(X,Z1) ^ c(Z1,Z2) ^ d(Z2,Z3) ^ e(Z3,Y)"),
            Err(RuleError::BadLength(4))
        ));
        assert!(matches!(
            parse_rule("no arrow here"),
            Err(RuleError::MissingArrow(_))
        ));
    }

    #[test]
    fn render_is_canonical_and_round_trips() {
        let rule = Rule::new(
            "uncleOf",
            vec!["brotherOf".to_string(), "fatherOf".to_string()],
        )
        .unwrap();
        let text = render_rule(&rule);
        assert_eq!(text, "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)");
        assert_eq!(parse_rule(&text).unwrap(), rule);
        assert_eq!(render_rule(&rule), text);
    }

    #[test]
    fn round_trip_renames_variables_positionally() {
        let rule = parse_rule("uncleOf(A,B) <- brotherOf(A,C) ^ fatherOf(C,B)").unwrap();
        assert_eq!(
            render_rule(&rule),
            "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)"
        );
    }

    fn uncle_rule() -> Rule {
        parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap()
    }

    /// Five-triple store: one full uncle chain with its head fact and one
    /// chain without it.
    fn uncle_store() -> TripleStore {
        TripleStore::from_labels([
            ("b", "brotherOf", "f"),
            ("f", "fatherOf", "c"),
            ("b", "uncleOf", "c"),
            ("b2", "brotherOf", "f2"),
            ("f2", "fatherOf", "c2"),
        ])
    }

    #[test]
    fn ground_body_single_chain() {
        let store = TripleStore::from_labels([("b", "brotherOf", "f"), ("f", "fatherOf", "c")]);
        let pairs = ground_body(&store, &uncle_rule());
        let labeled: Vec<(String, String)> = pairs
            .iter()
            .map(|&(x, y)| {
                (
                    store.vocab().entity_label(x).to_string(),
                    store.vocab().entity_label(y).to_string(),
                )
            })
            .collect();
        assert_eq!(labeled, [("b".to_string(), "c".to_string())]);
    }

    #[test]
    fn ground_body_counts_reflexive_pairs() {
        let store = TripleStore::from_labels([("a", "r", "b"), ("b", "s", "a")]);
        let rule = Rule::new("h", vec!["r".to_string(), "s".to_string()]).unwrap();
        let pairs = ground_body(&store, &rule);
        let a = store.vocab().entity("a").unwrap();
        assert!(pairs.contains(&(a, a)));
    }

    #[test]
    fn ground_body_unknown_relation_is_empty() {
        let store = TripleStore::from_labels([("a", "r", "b")]);
        assert!(ground_body(&store, &uncle_rule()).is_empty());
    }

    #[test]
    fn score_rule_counts_support_and_ratios() {
        let q = score_rule(&uncle_store(), &uncle_rule());
        assert_eq!(q.support, 1);
        assert_eq!(q.body_groundings, 2);
        assert_eq!(q.head_facts, 1);
        assert!((q.confidence - 0.5).abs() < 1e-12);
        assert!((q.head_coverage - 1.0).abs() < 1e-12);
        assert!(!q.degenerate);
    }

    #[test]
    fn score_rule_missing_head_is_degenerate_zero() {
        let store = TripleStore::from_labels([("b", "brotherOf", "f"), ("f", "fatherOf", "c")]);
        let q = score_rule(&store, &uncle_rule());
        assert_eq!(q.support, 0);
        assert_eq!(q.head_facts, 0);
        assert_eq!(q.head_coverage, 0.0);
        assert!(q.degenerate);
    }

    #[test]
    fn entail_predicts_missing_heads_with_witnesses() {
        let store = uncle_store();
        let out = entail(&store, &uncle_rule());
        assert_eq!(out.len(), 1);
        let e = &out[0];
        assert_eq!(store.vocab().entity_label(e.head_entity), "b2");
        assert_eq!(store.vocab().entity_label(e.tail_entity), "c2");
        assert_eq!(e.witnesses.len(), 2);
        for w in &e.witnesses {
            assert!(store.contains(*w));
        }
    }

    #[test]
    fn entail_is_empty_when_heads_already_present() {
        let store = TripleStore::from_labels([
            ("b", "brotherOf", "f"),
            ("f", "fatherOf", "c"),
            ("b", "uncleOf", "c"),
        ]);
        assert!(entail(&store, &uncle_rule()).is_empty());
    }

    #[test]
    fn filter_rules_thresholds_dedups_and_sorts() {
        let store = uncle_store();
        let rule = uncle_rule();
        let rules = vec![rule.clone(), rule.clone()];
        let kept = filter_rules(&rules, 0.45, 0.05, &store);
        assert_eq!(kept.len(), 1);
        assert!(filter_rules(&rules, 1.01, 0.05, &store).is_empty());
        let all = filter_rules(&rules, 0.0, 0.0, &store);
        assert_eq!(all.len(), 1);
    }
}
