//! Prompt construction and response parsing for the two LLM interactions:
//! rule mining and per-subgraph triple prediction.
//!
//! Prompt templates live in versioned files under `templates/` and are frozen
//! by golden-snapshot tests; building a prompt is a pure function of its
//! inputs, and the content fingerprint keys the replay fixture store. The
//! response parsers are total: they never fail on arbitrary text, and every
//! candidate they see is either accepted or recorded as a reject.

pub mod backend;

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg::LabelTriple;
use crate::rules::{parse_rule, render_rule, Rule};

pub use backend::{
    create_backend, BackendConfig, BackendRegistry, CompletionBackend, HttpBackend, ReplayBackend,
    StubBackend,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("rule head `{0}` is not in the relation list")]
    HeadNotInRelations(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("unknown backend `{name}`; known backends: {known}")]
    UnknownBackend { name: String, known: String },
    #[error("backend `{backend}` failed: {detail}")]
    Backend { backend: String, detail: String },
    #[error("no replay fixture for prompt fingerprint {fingerprint} (looked in {path})")]
    FixtureMissing { fingerprint: String, path: String },
    #[error("malformed fixture {path}: {detail}")]
    MalformedFixture { path: String, detail: String },
    #[error("stub backend has no response left")]
    StubExhausted,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which prompt family a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    RuleMining,
    Tsp,
}

/// A fully rendered prompt: ordered named sections, the rendered text, and a
/// content hash used as the replay fixture key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDoc {
    pub kind: PromptKind,
    pub sections: Vec<(String, String)>,
    pub rendered: String,
    pub fingerprint: String,
    /// Set when a prediction prompt was built over an empty triple list.
    pub empty_context: bool,
}

impl PromptDoc {
    fn assemble(kind: PromptKind, sections: Vec<(String, String)>, empty_context: bool) -> Self {
        let mut rendered = String::new();
        for (name, text) in &sections {
            rendered.push_str(&format!("[{}]\n", name.to_uppercase()));
            rendered.push_str(text.trim_end());
            rendered.push_str("\n\n");
        }
        let fingerprint = hex::encode(Sha256::digest(rendered.as_bytes()));
        PromptDoc {
            kind,
            sections,
            rendered,
            fingerprint,
            empty_context,
        }
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }
}

const RULE_MINING_TEMPLATE: &str = include_str!("../../templates/rule_mining.txt");
const TSP_TEMPLATE: &str = include_str!("../../templates/tsp.txt");

fn template_sections(template: &str) -> Vec<(String, String)> {
    let mut sections = Vec::new();
    let mut name: Option<String> = None;
    let mut buf = String::new();
    for line in template.lines() {
        if let Some(next) = line.strip_prefix("---section:") {
            if let Some(n) = name.take() {
                sections.push((n, buf.trim_end().to_string()));
            }
            name = Some(next.trim().to_string());
            buf.clear();
        } else {
            buf.push_str(line);
            buf.push('\n');
        }
    }
    if let Some(n) = name {
        sections.push((n, buf.trim_end().to_string()));
    }
    sections
}

/// Build a rule-mining prompt for one head relation.
///
/// Sections, in order: background, relations, rule_head, example, notes.
/// Every relation appears exactly once in the relations section; the head
/// must be one of them.
pub fn build_rule_prompt(relations: &[String], head: &str) -> Result<PromptDoc, GatewayError> {
    if !relations.iter().any(|r| r == head) {
        return Err(GatewayError::HeadNotInRelations(head.to_string()));
    }
    let mut seen = HashSet::new();
    let distinct: Vec<&str> = relations
        .iter()
        .map(String::as_str)
        .filter(|r| seen.insert(*r))
        .collect();
    let relation_list = distinct.join(", ");
    let sections = template_sections(RULE_MINING_TEMPLATE)
        .into_iter()
        .map(|(name, text)| {
            let text = text
                .replace("{{relations}}", &relation_list)
                .replace("{{rule_head}}", head);
            (name, text)
        })
        .collect();
    Ok(PromptDoc::assemble(PromptKind::RuleMining, sections, false))
}

/// Natural-language reading of a rule, used to accompany it in prediction
/// prompts.
pub fn explain_rule(rule: &Rule) -> String {
    let k = rule.body_len();
    let var = |i: usize| -> String {
        if i == 0 {
            "X".to_string()
        } else if i == k {
            "Y".to_string()
        } else {
            format!("Z{i}")
        }
    };
    let clauses: Vec<String> = rule
        .body()
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{} {r} {}", var(i), var(i + 1)))
        .collect();
    format!(
        "if {} all hold, then X {} Y holds.",
        clauses.join(" and "),
        rule.head()
    )
}

/// Build a prediction prompt from a rule, its explanation, and the
/// rule-related triples of one subgraph. Contains no worked example; the
/// reasoning is zero-shot with a step-by-step instruction and a pinned
/// output grammar.
pub fn build_tsp_prompt(rule: &Rule, explanation: &str, triples: &[LabelTriple]) -> PromptDoc {
    let empty_context = triples.is_empty();
    let triple_list = if empty_context {
        "(no rule-related triples in this subgraph)".to_string()
    } else {
        triples
            .iter()
            .map(|t| format!("({}, {}, {})", t.head, t.relation, t.tail))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let sections = template_sections(TSP_TEMPLATE)
        .into_iter()
        .map(|(name, text)| {
            let text = text
                .replace("{{rule}}", &render_rule(rule))
                .replace("{{explanation}}", explanation)
                .replace("{{triples}}", &triple_list);
            (name, text)
        })
        .collect();
    PromptDoc::assemble(PromptKind::Tsp, sections, empty_context)
}

/// A rule candidate the miner could not parse, kept for the rejects log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedCandidate {
    pub line_no: usize,
    pub text: String,
    pub reason: String,
}

/// Outcome of scanning one mining response.
#[derive(Debug, Clone, Default)]
pub struct MinedRules {
    pub rules: Vec<Rule>,
    pub rejects: Vec<RejectedCandidate>,
}

fn rule_candidate_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"[A-Za-z_]\w*\s*\([^()]*\)\s*<-\s*[A-Za-z_]\w*\s*\([^()]*\)(?:\s*\^\s*[A-Za-z_]\w*\s*\([^()]*\))*",
        )
        .expect("static regex")
    })
}

/// Scan free-form miner output for rule lines. Tolerates `∧`/`^`, `<-`/`⟵`/`←`,
/// numbered list prefixes, and surrounding prose. Lines without an arrow are
/// prose and skipped; every line with an arrow is accounted for as either an
/// accepted rule or a reject with a reason.
pub fn parse_mined_rules(text: &str) -> MinedRules {
    let mut out = MinedRules::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = crate::rules::normalize_rule_text(raw);
        if !line.contains("<-") {
            continue;
        }
        let reject = |reason: String| RejectedCandidate {
            line_no: idx + 1,
            text: raw.trim().to_string(),
            reason,
        };
        match rule_candidate_regex().find(&line) {
            Some(m) => match parse_rule(m.as_str()) {
                Ok(rule) => out.rules.push(rule),
                Err(e) => out.rejects.push(reject(e.to_string())),
            },
            None => out.rejects.push(reject(
                "line contains an arrow but no rule-shaped text".to_string(),
            )),
        }
    }
    out
}

/// A predicted triple extracted from one backend response, with whatever
/// premise triples the response cited for it. Premises may legitimately be
/// empty (free-text fallback); emptiness is recorded, never fabricated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted: LabelTriple,
    pub premises: Vec<LabelTriple>,
    pub rule: Rule,
    pub subgraph_id: usize,
    /// Byte range of the source text this record was read from; None for
    /// records that did not come from response text (the oracle predictor).
    pub span: Option<(usize, usize)>,
    /// Fingerprint of the prompt that produced the response, or "oracle".
    pub fingerprint: String,
}

fn tuple_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^,()]+),([^,()]+),([^,()]+)\)").expect("static regex"))
}

fn premises_line_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*premises\s*:\s*(.*)$").expect("static regex"))
}

fn prediction_line_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*prediction\s*:\s*(.*)$").expect("static regex"))
}

fn parse_tuples(text: &str) -> Vec<LabelTriple> {
    tuple_regex()
        .captures_iter(text)
        .map(|c| {
            LabelTriple::new(
                c[1].trim().to_string(),
                c[2].trim().to_string(),
                c[3].trim().to_string(),
            )
        })
        .collect()
}

/// Extract prediction records from a backend response.
///
/// Primary path: `PREMISES:` / `PREDICTION:` line blocks; every PREDICTION
/// line yields one record carrying the premises cited since the previous
/// prediction. Fallback, when no structured block exists: every `(h, r, t)`
/// tuple whose relation is a known label becomes a premise-less record.
/// Entity labels are taken verbatim; unknown entities are the auditor's
/// problem, not a parse failure.
pub fn parse_predictions(
    text: &str,
    rule: &Rule,
    subgraph_id: usize,
    known_relations: &HashSet<String>,
    fingerprint: &str,
) -> Vec<PredictionRecord> {
    let mut records = Vec::new();
    let mut pending: Vec<LabelTriple> = Vec::new();
    let mut block_start: Option<usize> = None;
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(c) = premises_line_regex().captures(line) {
            if block_start.is_none() {
                block_start = Some(offset);
            }
            pending.extend(parse_tuples(&c[1]));
        } else if let Some(c) = prediction_line_regex().captures(line) {
            if let Some(predicted) = parse_tuples(&c[1]).into_iter().next() {
                let start = block_start.unwrap_or(offset);
                records.push(PredictionRecord {
                    predicted,
                    premises: std::mem::take(&mut pending),
                    rule: rule.clone(),
                    subgraph_id,
                    span: Some((start, offset + line.len())),
                    fingerprint: fingerprint.to_string(),
                });
            } else {
                pending.clear();
            }
            block_start = None;
        }
        offset += raw.len();
    }
    if !records.is_empty() {
        return records;
    }

    // Fallback: bare tuples with a known relation anywhere in the text.
    tuple_regex()
        .captures_iter(text)
        .filter_map(|c| {
            let m = c.get(0).expect("whole match");
            let t = LabelTriple::new(
                c[1].trim().to_string(),
                c[2].trim().to_string(),
                c[3].trim().to_string(),
            );
            known_relations.contains(&t.relation).then(|| PredictionRecord {
                predicted: t,
                premises: Vec::new(),
                rule: rule.clone(),
                subgraph_id,
                span: Some((m.start(), m.end())),
                fingerprint: fingerprint.to_string(),
            })
        })
        .collect()
}

impl fmt::Display for PredictionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} via {} on subgraph {}",
            self.predicted, self.rule, self.subgraph_id
        )
    }
}

/// Serialize records as JSON lines.
pub fn write_records(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines prediction file.
pub fn read_records(text: &str) -> Result<Vec<PredictionRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rule;

    fn relations() -> Vec<String> {
        ["fatherOf", "inv_fatherOf", "uncleOf", "inv_uncleOf"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn rule_prompt_has_five_sections_in_order() {
        let doc = build_rule_prompt(&relations(), "fatherOf").unwrap();
        let names: Vec<&str> = doc.sections.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["background", "relations", "rule_head", "example", "notes"]
        );
        assert!(doc.section("rule_head").unwrap().contains("fatherOf"));
    }

    #[test]
    fn rule_prompt_lists_every_relation_once() {
        let doc = build_rule_prompt(&relations(), "uncleOf").unwrap();
        let section = doc.section("relations").unwrap();
        assert_eq!(section.matches("inv_fatherOf").count(), 1);
        // `fatherOf` also occurs inside `inv_fatherOf`
        assert_eq!(section.matches("fatherOf").count(), 2);
    }

    #[test]
    fn rule_prompt_rejects_unknown_head() {
        assert!(matches!(
            build_rule_prompt(&relations(), "nieceOf"),
            Err(GatewayError::HeadNotInRelations(_))
        ));
    }

    #[test]
    fn prompt_fingerprint_is_stable() {
        let a = build_rule_prompt(&relations(), "fatherOf").unwrap();
        let b = build_rule_prompt(&relations(), "fatherOf").unwrap();
        assert_eq!(a.rendered, b.rendered);
        assert_eq!(a.fingerprint, b.fingerprint);
        let c = build_rule_prompt(&relations(), "uncleOf").unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }

    #[test]
    fn tsp_prompt_contains_rule_triples_and_grammar() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let triples = vec![
            LabelTriple::new("b", "brotherOf", "f"),
            LabelTriple::new("f", "fatherOf", "c"),
        ];
        let doc = build_tsp_prompt(&rule, &explain_rule(&rule), &triples);
        let names: Vec<&str> = doc.sections.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["rule", "triples", "instruction", "output_format"]);
        assert!(!doc.empty_context);
        assert!(doc.rendered.contains("(b, brotherOf, f)"));
        assert!(doc.rendered.contains("(f, fatherOf, c)"));
        assert!(doc.rendered.contains("PREMISES:"));
        assert!(doc.rendered.contains("PREDICTION:"));
        // zero-shot: the only worked rules live in the mining example, not here
        assert!(doc.section("example").is_none());
    }

    #[test]
    fn tsp_prompt_flags_empty_context() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let doc = build_tsp_prompt(&rule, "explanation", &[]);
        assert!(doc.empty_context);
        assert!(!doc.rendered.is_empty());
    }

    #[test]
    fn mined_rules_accepts_numbered_lines_with_prose() {
        let text = "Here are my rules:\n1. nieceOf(X,Y) <- sisterOf(X,Z1) ^ nephewOf(Z1,Y)\nThat is all.";
        let mined = parse_mined_rules(text);
        assert_eq!(mined.rules.len(), 1);
        assert!(mined.rejects.is_empty());
        assert_eq!(mined.rules[0].head(), "nieceOf");
    }

    #[test]
    fn mined_rules_pure_prose_yields_nothing() {
        let mined = parse_mined_rules("No rules can be found for this relation.");
        assert!(mined.rules.is_empty());
        assert!(mined.rejects.is_empty());
    }

    #[test]
    fn mined_rules_records_broken_chain_reject() {
        let mined = parse_mined_rules("a(X,Y) <- b(X,Z1) ^ c(Z2,Y)");
        assert!(mined.rules.is_empty());
        assert_eq!(mined.rejects.len(), 1);
        assert!(mined.rejects[0].reason.contains("chain"));
    }

    #[test]
    fn mined_rules_accepts_unicode_arrows() {
        let mined = parse_mined_rules("uncleOf(X,Y) ⟵ brotherOf(X,Z1) ∧ fatherOf(Z1,Y)");
        assert_eq!(mined.rules.len(), 1);
    }

    fn known() -> HashSet<String> {
        ["uncleOf", "brotherOf", "fatherOf"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn predictions_structured_block() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let text = "PREMISES: (e1, brotherOf, e2); (e2, fatherOf, e3)\nPREDICTION: (e1, uncleOf, e3)\n";
        let records = parse_predictions(text, &rule, 0, &known(), "fp");
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].premises.len(), 2);
        assert_eq!(records[0].predicted, LabelTriple::new("e1", "uncleOf", "e3"));
    }

    #[test]
    fn predictions_fallback_scans_known_relation_tuples() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let text = "I believe (e1, uncleOf, e3) holds, and also (e1, magic, e9).";
        let records = parse_predictions(text, &rule, 2, &known(), "fp");
        assert_eq!(records.len(), 1);
        assert!(records[0].premises.is_empty());
        assert_eq!(records[0].subgraph_id, 2);
    }

    #[test]
    fn prediction_spans_reparse_to_same_record() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let text = "preamble\nPREMISES: (e1, brotherOf, e2)\nPREMISES: (e2, fatherOf, e3)\nPREDICTION: (e1, uncleOf, e3)\ntrailer (e9, uncleOf, e9)\n";
        let records = parse_predictions(text, &rule, 0, &known(), "fp");
        assert_eq!(records.len(), 1);
        let (start, end) = records[0].span.unwrap();
        let slice = &text[start..end];
        let again = parse_predictions(slice, &rule, 0, &known(), "fp");
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].predicted, records[0].predicted);
        assert_eq!(again[0].premises, records[0].premises);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let rule = parse_rule("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)").unwrap();
        let records = vec![PredictionRecord {
            predicted: LabelTriple::new("a", "uncleOf", "b"),
            premises: vec![LabelTriple::new("a", "brotherOf", "c")],
            rule,
            subgraph_id: 3,
            span: Some((0, 10)),
            fingerprint: "abc".to_string(),
        }];
        let text = write_records(&records);
        let back = read_records(&text).unwrap();
        assert_eq!(back, records);
    }
}
