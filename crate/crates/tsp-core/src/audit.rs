//! Hallucination auditing: checks each predicted triple's cited premises
//! against the subgraph it was predicted from, and cross-checks the
//! prediction itself against the deterministic rule oracle.
//!
//! Two failure modes are measured: cited premise triples that do not exist
//! in the subgraph, and reasoning that does not follow the given rule (wrong
//! head relation, or premises that do not instantiate the body chain).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::PredictionRecord;
use crate::kg::TripleStore;
use crate::rules::{ground_body, render_rule, Rule};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("record rule `{record_rule}` does not match audited rule `{rule}`")]
    RuleMismatch { record_rule: String, rule: String },
}

/// Per-prediction audit verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record: PredictionRecord,
    /// Existence of each cited premise in the subgraph, in citation order.
    /// Empty when the record cited no premises.
    pub premise_flags: Vec<bool>,
    /// Whether the predicted triple's entities are known to the graph's
    /// symbol table.
    pub entities_known: bool,
    /// Predicted relation equals the rule head.
    pub head_matches_rule: bool,
    /// Whether the cited premises instantiate the rule body as a chain
    /// ending in the predicted pair. None when no premises were cited
    /// (free-text fallback records are audited by oracle entailment only).
    pub premise_chain_valid: Option<bool>,
    /// Whether the prediction is derivable from the subgraph by the rule.
    /// Computed independently of the cited premises, via the grounding
    /// oracle, so a fabricated-but-lucky citation cannot influence it.
    pub entailed_by_subgraph: bool,
}

/// Audit one prediction against the subgraph it was made from.
pub fn audit(
    subgraph: &TripleStore,
    rule: &Rule,
    record: &PredictionRecord,
) -> Result<AuditRecord, AuditError> {
    if record.rule != *rule {
        return Err(AuditError::RuleMismatch {
            record_rule: render_rule(&record.rule),
            rule: render_rule(rule),
        });
    }

    let premise_flags: Vec<bool> = record
        .premises
        .iter()
        .map(|p| subgraph.contains_label_triple(p))
        .collect();

    let vocab = subgraph.vocab();
    let head_id = vocab.entity(&record.predicted.head);
    let tail_id = vocab.entity(&record.predicted.tail);
    let entities_known = head_id.is_some() && tail_id.is_some();
    let head_matches_rule = record.predicted.relation == rule.head();

    let premise_chain_valid = if record.premises.is_empty() {
        None
    } else {
        Some(chain_valid(rule, record))
    };

    let entailed_by_subgraph = match (head_id, tail_id) {
        (Some(h), Some(t)) => head_matches_rule && ground_body(subgraph, rule).contains(&(h, t)),
        _ => false,
    };

    Ok(AuditRecord {
        record: record.clone(),
        premise_flags,
        entities_known,
        head_matches_rule,
        premise_chain_valid,
        entailed_by_subgraph,
    })
}

/// The cited premises instantiate the body chain: one premise per body atom,
/// relations in body order, adjacent premises sharing the chain entity, and
/// the chain's endpoints equal to the predicted pair.
fn chain_valid(rule: &Rule, record: &PredictionRecord) -> bool {
    if record.premises.len() != rule.body_len() {
        return false;
    }
    for (premise, body_rel) in record.premises.iter().zip(rule.body()) {
        if premise.relation != *body_rel {
            return false;
        }
    }
    if record.premises[0].head != record.predicted.head {
        return false;
    }
    for window in record.premises.windows(2) {
        if window[0].tail != window[1].head {
            return false;
        }
    }
    record.premises.last().expect("non-empty").tail == record.predicted.tail
}

/// A rate with its raw counts; `rate()` is None when the denominator is
/// zero, which reports render as "undefined" rather than a silent 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RateStat {
    pub numerator: u64,
    pub denominator: u64,
}

impl RateStat {
    pub fn rate(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    fn bump(&mut self, hit: bool) {
        self.denominator += 1;
        if hit {
            self.numerator += 1;
        }
    }

    fn display(&self) -> String {
        match self.rate() {
            Some(r) => format!("{r:.4} ({}/{})", self.numerator, self.denominator),
            None => format!("undefined ({}/{})", self.numerator, self.denominator),
        }
    }
}

/// Counts for one breakdown bucket (per rule or per subgraph).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BucketStats {
    pub predictions: u64,
    pub with_premises: u64,
    pub nonexistent_premise: u64,
    pub rule_non_compliant: u64,
    pub unknown_entity: u64,
    pub oracle_confirmed: u64,
}

/// Aggregated hallucination measurements over a set of audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub total_predictions: u64,
    pub with_premises: u64,
    /// Predictions citing at least one premise absent from their subgraph,
    /// over predictions that cited premises at all.
    pub nonexistent_premise: RateStat,
    /// Predictions whose reasoning does not follow the given rule: wrong
    /// head relation, or cited premises that fail the chain test.
    pub rule_non_compliant: RateStat,
    /// Predictions naming entities the graph has never seen.
    pub unknown_entity: RateStat,
    /// Predictions confirmed derivable by the rule oracle.
    pub oracle_confirmed: RateStat,
    /// Cited premises that do not exist, tallied per body relation label.
    pub nonexistent_premises_by_relation: BTreeMap<String, u64>,
    pub per_rule: BTreeMap<String, BucketStats>,
    pub per_subgraph: BTreeMap<usize, BucketStats>,
}

/// Aggregate audits into rates with explicit numerators and denominators.
/// Permutation-invariant in the input order.
pub fn summarize(audits: &[AuditRecord]) -> HallucinationReport {
    let mut report = HallucinationReport {
        total_predictions: audits.len() as u64,
        with_premises: 0,
        nonexistent_premise: RateStat::default(),
        rule_non_compliant: RateStat::default(),
        unknown_entity: RateStat::default(),
        oracle_confirmed: RateStat::default(),
        nonexistent_premises_by_relation: BTreeMap::new(),
        per_rule: BTreeMap::new(),
        per_subgraph: BTreeMap::new(),
    };
    for a in audits {
        let has_premises = !a.record.premises.is_empty();
        let fabricated = a.premise_flags.iter().any(|&ok| !ok);
        let non_compliant = !a.head_matches_rule || a.premise_chain_valid == Some(false);
        let unknown = !a.entities_known;

        if has_premises {
            report.with_premises += 1;
            report.nonexistent_premise.bump(fabricated);
            for (premise, &exists) in a.record.premises.iter().zip(&a.premise_flags) {
                if !exists {
                    *report
                        .nonexistent_premises_by_relation
                        .entry(premise.relation.clone())
                        .or_insert(0) += 1;
                }
            }
        }
        report.rule_non_compliant.bump(non_compliant);
        report.unknown_entity.bump(unknown);
        report.oracle_confirmed.bump(a.entailed_by_subgraph);

        let rule_bucket = report
            .per_rule
            .entry(render_rule(&a.record.rule))
            .or_default();
        let sub_bucket = report.per_subgraph.entry(a.record.subgraph_id).or_default();
        for bucket in [rule_bucket, sub_bucket] {
            bucket.predictions += 1;
            bucket.with_premises += u64::from(has_premises);
            bucket.nonexistent_premise += u64::from(has_premises && fabricated);
            bucket.rule_non_compliant += u64::from(non_compliant);
            bucket.unknown_entity += u64::from(unknown);
            bucket.oracle_confirmed += u64::from(a.entailed_by_subgraph);
        }
    }
    report
}

impl std::fmt::Display for HallucinationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "hallucination report")?;
        writeln!(f, "  predictions audited: {}", self.total_predictions)?;
        writeln!(f, "  with cited premises: {}", self.with_premises)?;
        writeln!(
            f,
            "  nonexistent premise rate: {}",
            self.nonexistent_premise.display()
        )?;
        writeln!(
            f,
            "  rule non-compliance rate: {}",
            self.rule_non_compliant.display()
        )?;
        writeln!(f, "  unknown entity rate: {}", self.unknown_entity.display())?;
        writeln!(
            f,
            "  oracle-confirmed rate: {}",
            self.oracle_confirmed.display()
        )?;
        if !self.nonexistent_premises_by_relation.is_empty() {
            writeln!(f, "  nonexistent premises by relation:")?;
            for (rel, count) in &self.nonexistent_premises_by_relation {
                writeln!(f, "    {rel}: {count}")?;
            }
        }
        writeln!(f, "  per rule:")?;
        for (rule, b) in &self.per_rule {
            writeln!(
                f,
                "    {rule}: predictions={} fabricated={} non_compliant={} confirmed={}",
                b.predictions, b.nonexistent_premise, b.rule_non_compliant, b.oracle_confirmed
            )?;
        }
        writeln!(f, "  per subgraph:")?;
        for (id, b) in &self.per_subgraph {
            writeln!(
                f,
                "    {id}: predictions={} fabricated={} non_compliant={} confirmed={}",
                b.predictions, b.nonexistent_premise, b.rule_non_compliant, b.oracle_confirmed
            )?;
        }
        Ok(())
    }
}
