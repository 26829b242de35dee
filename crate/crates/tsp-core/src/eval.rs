//! Closed-world evaluation: canonicalize and deduplicate the predicted
//! triple set, split it against the test set, and compute the three
//! precision/recall style metrics.
//!
//! Every raw count that feeds a metric is kept in the report, so any metric
//! variant can be recomputed externally from the tallies alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::PredictionRecord;
use crate::kg::{LabelTriple, TripleStore};
use crate::rules::render_rule;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty; recall is undefined")]
    EmptyTestSet,
    #[error("count invariant violated: positives={positives}, predicted={predicted}, test={test}")]
    BadCounts {
        positives: u64,
        predicted: u64,
        test: u64,
    },
}

/// Canonicalization outcome: the deduplicated prediction set plus the
/// accounting of everything that was folded, collapsed, or removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalPredictions {
    pub t_predict: BTreeSet<LabelTriple>,
    pub input_records: u64,
    /// Predictions whose relation carried the inverse prefix and were folded
    /// to base form.
    pub folded: u64,
    /// Exact duplicates collapsed across rules and subgraphs.
    pub duplicates_removed: u64,
    /// Predictions already present in the training graph; the prediction
    /// target is missing triples, so these leave the set but stay counted.
    pub known_facts_removed: u64,
    /// Predictions with identical head and tail, kept but flagged.
    pub reflexive_flagged: u64,
}

/// Fold inverse predictions to base form, deduplicate, and drop predictions
/// that are already facts of the training graph.
pub fn canonicalize_predictions(
    records: &[PredictionRecord],
    train: &TripleStore,
) -> CanonicalPredictions {
    let mut out = CanonicalPredictions {
        t_predict: BTreeSet::new(),
        input_records: records.len() as u64,
        folded: 0,
        duplicates_removed: 0,
        known_facts_removed: 0,
        reflexive_flagged: 0,
    };
    for record in records {
        let mut triple = record.predicted.clone();
        if triple.relation.starts_with(crate::kg::INVERSE_PREFIX) {
            triple = triple.fold_inverse();
            out.folded += 1;
        }
        if train.contains_label_triple(&triple) {
            out.known_facts_removed += 1;
            continue;
        }
        if triple.head == triple.tail {
            out.reflexive_flagged += 1;
        }
        if !out.t_predict.insert(triple) {
            out.duplicates_removed += 1;
        }
    }
    out
}

/// Partition predictions into the correctly predicted set `T+` (intersection
/// with the test set) and the remainder `T-`.
pub fn split_pos_neg(
    t_predict: &BTreeSet<LabelTriple>,
    t_test: &BTreeSet<LabelTriple>,
) -> (BTreeSet<LabelTriple>, BTreeSet<LabelTriple>) {
    let positives: BTreeSet<LabelTriple> = t_predict.intersection(t_test).cloned().collect();
    let negatives: BTreeSet<LabelTriple> = t_predict.difference(&positives).cloned().collect();
    (positives, negatives)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub jprecision: f64,
    pub st_recall: f64,
    pub f_tsp: f64,
}

/// Compute the three metrics from raw counts.
///
/// `jprecision = positives / predicted` (0 when nothing was predicted);
/// `st_recall = sqrt(positives / test)`, the square root damping the large
/// test set; `f_tsp` is their harmonic mean (0 when both are 0).
pub fn compute_metrics(n_positive: u64, n_predict: u64, n_test: u64) -> Result<Metrics, EvalError> {
    if n_test == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    if n_positive > n_predict || n_positive > n_test {
        return Err(EvalError::BadCounts {
            positives: n_positive,
            predicted: n_predict,
            test: n_test,
        });
    }
    let jprecision = if n_predict == 0 {
        0.0
    } else {
        n_positive as f64 / n_predict as f64
    };
    let st_recall = (n_positive as f64 / n_test as f64).sqrt();
    Ok(Metrics {
        jprecision,
        st_recall,
        f_tsp: harmonic_mean(jprecision, st_recall),
    })
}

/// Harmonic mean of two scores; 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Counts for one breakdown bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SliceCounts {
    /// Distinct canonical predictions attributable to this bucket. A triple
    /// predicted under several buckets counts once in each; the topline
    /// deduplicates globally.
    pub predicted: u64,
    pub positive: u64,
}

/// Full evaluation report: metrics plus every raw count behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_predict: u64,
    pub n_positive: u64,
    pub n_negative: u64,
    pub n_test: u64,
    pub jprecision: f64,
    pub st_recall: f64,
    pub f_tsp: f64,
    pub input_records: u64,
    pub folded: u64,
    pub duplicates_removed: u64,
    pub known_facts_removed: u64,
    pub reflexive_flagged: u64,
    pub per_rule: BTreeMap<String, SliceCounts>,
    pub per_subgraph: BTreeMap<usize, SliceCounts>,
}

/// Canonicalize, split, and compute metrics in one step.
pub fn evaluate(
    records: &[PredictionRecord],
    train: &TripleStore,
    t_test: &BTreeSet<LabelTriple>,
) -> Result<EvalReport, EvalError> {
    let canonical = canonicalize_predictions(records, train);
    let (positives, negatives) = split_pos_neg(&canonical.t_predict, t_test);
    let metrics = compute_metrics(
        positives.len() as u64,
        canonical.t_predict.len() as u64,
        t_test.len() as u64,
    )?;

    let mut per_rule: BTreeMap<String, BTreeSet<LabelTriple>> = BTreeMap::new();
    let mut per_subgraph: BTreeMap<usize, BTreeSet<LabelTriple>> = BTreeMap::new();
    for record in records {
        let triple = record.predicted.fold_inverse();
        if !canonical.t_predict.contains(&triple) {
            continue;
        }
        per_rule
            .entry(render_rule(&record.rule))
            .or_default()
            .insert(triple.clone());
        per_subgraph
            .entry(record.subgraph_id)
            .or_default()
            .insert(triple);
    }
    let bucketize = |set: &BTreeSet<LabelTriple>| SliceCounts {
        predicted: set.len() as u64,
        positive: set.iter().filter(|t| positives.contains(*t)).count() as u64,
    };

    Ok(EvalReport {
        n_predict: canonical.t_predict.len() as u64,
        n_positive: positives.len() as u64,
        n_negative: negatives.len() as u64,
        n_test: t_test.len() as u64,
        jprecision: metrics.jprecision,
        st_recall: metrics.st_recall,
        f_tsp: metrics.f_tsp,
        input_records: canonical.input_records,
        folded: canonical.folded,
        duplicates_removed: canonical.duplicates_removed,
        known_facts_removed: canonical.known_facts_removed,
        reflexive_flagged: canonical.reflexive_flagged,
        per_rule: per_rule.iter().map(|(k, v)| (k.clone(), bucketize(v))).collect(),
        per_subgraph: per_subgraph
            .iter()
            .map(|(&k, v)| (k, bucketize(v)))
            .collect(),
    })
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "evaluation report")?;
        writeln!(f, "  predicted: {}", self.n_predict)?;
        writeln!(f, "  positive: {}", self.n_positive)?;
        writeln!(f, "  negative: {}", self.n_negative)?;
        writeln!(f, "  test size: {}", self.n_test)?;
        writeln!(f, "  jprecision: {:.6}", self.jprecision)?;
        writeln!(f, "  st_recall: {:.6}", self.st_recall)?;
        writeln!(f, "  f_tsp: {:.6}", self.f_tsp)?;
        writeln!(f, "  input records: {}", self.input_records)?;
        writeln!(f, "  inverse-folded: {}", self.folded)?;
        writeln!(f, "  duplicates removed: {}", self.duplicates_removed)?;
        writeln!(f, "  known facts removed: {}", self.known_facts_removed)?;
        writeln!(f, "  reflexive flagged: {}", self.reflexive_flagged)?;
        writeln!(f, "  per rule:")?;
        for (rule, c) in &self.per_rule {
            writeln!(f, "    {rule}: predicted={} positive={}", c.predicted, c.positive)?;
        }
        writeln!(f, "  per subgraph:")?;
        for (id, c) in &self.per_subgraph {
            writeln!(f, "    {id}: predicted={} positive={}", c.predicted, c.positive)?;
        }
        Ok(())
    }
}
