//! Stage commands tying the pipeline together: mine rules, score rules,
//! partition, predict, audit, evaluate, and the full composition.
//!
//! Every stage reads and writes plain files, so stages can be mixed freely:
//! a hand-written rules file feeds `predict` exactly like a mined one. With
//! the replay backend or the oracle predictor, reruns are byte-identical.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::audit::{audit, summarize, AuditError, AuditRecord, HallucinationReport};
use crate::concurrency::parallel_map;
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::gateway::{
    build_rule_prompt, build_tsp_prompt, create_backend, explain_rule, parse_mined_rules,
    parse_predictions, read_records, write_records, BackendConfig, CompletionBackend,
    GatewayError, PredictionRecord, RejectedCandidate,
};
use crate::kg::{load_label_set, StoreError, TripleStore};
use crate::partition::{
    build_subgraphs, partition, render_manifest, rule_related_triples, EntityGroup,
    PartitionConfig, PartitionError, PartitionStats, Subgraph,
};
use crate::rules::{
    filter_rules, parse_rule, render_rule, score_rule, Rule, RuleError, RuleQuality,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("{path}:{line}: {source}")]
    RulesFile {
        path: String,
        line: usize,
        source: RuleError,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictions file: {0}")]
    Records(#[from] serde_json::Error),
    #[error("unknown predictor `{name}`; known predictors: {known}")]
    UnknownPredictor { name: String, known: String },
    #[error("record references subgraph {0}, but the partition has no such group")]
    UnknownSubgraph(usize),
    #[error("this command needs a rules file (`rules` in config or --rules)")]
    MissingRulesPath,
    #[error("this command needs a test split (`test` in config or --test)")]
    MissingTestPath,
}

/// Everything a pipeline run needs. Flat key=value config files and CLI
/// flags both funnel through [`PipelineConfig::set`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub train_path: PathBuf,
    pub test_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub rules_path: Option<PathBuf>,
    pub partition: PartitionConfig,
    pub alpha_conf: f64,
    pub alpha_hc: f64,
    pub min_rule_len: usize,
    pub max_rule_len: usize,
    pub backend: BackendConfig,
    pub predictor: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_path: PathBuf::from("train.txt"),
            test_path: None,
            out_dir: PathBuf::from("out"),
            rules_path: None,
            partition: PartitionConfig::default(),
            alpha_conf: 0.45,
            alpha_hc: 0.05,
            min_rule_len: 2,
            max_rule_len: 3,
            backend: BackendConfig::default(),
            predictor: "oracle".to_string(),
        }
    }
}

impl PipelineConfig {
    /// Parse a flat `key = value` config file (`#` comments allowed).
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    idx + 1
                ))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Apply one key/value pair; shared by the config file and CLI flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |detail: String| PipelineError::Config(detail);
        let parse_num = |what: &str, v: &str| {
            v.parse::<u64>()
                .map_err(|_| bad(format!("{what} must be an integer, got `{v}`")))
        };
        let parse_float = |what: &str, v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("{what} must be a number, got `{v}`")))
        };
        match key {
            "train" => self.train_path = PathBuf::from(value),
            "test" => self.test_path = Some(PathBuf::from(value)),
            "out" => self.out_dir = PathBuf::from(value),
            "rules" => self.rules_path = Some(PathBuf::from(value)),
            "predictor" => self.predictor = value.to_string(),
            "seed" => self.partition.seed = parse_num("seed", value)?,
            "l_hops" => self.partition.l_hops = parse_num("l_hops", value)? as usize,
            "min_group" => self.partition.min_group = parse_num("min_group", value)? as usize,
            "max_group" => self.partition.max_group = parse_num("max_group", value)? as usize,
            "alpha_conf" => self.alpha_conf = parse_float("alpha_conf", value)?,
            "alpha_hc" => self.alpha_hc = parse_float("alpha_hc", value)?,
            "min_rule_len" => self.min_rule_len = parse_num("min_rule_len", value)? as usize,
            "max_rule_len" => self.max_rule_len = parse_num("max_rule_len", value)? as usize,
            "backend" => self.backend.mode = value.to_string(),
            "endpoint" => self.backend.endpoint = value.to_string(),
            "model" => self.backend.model = value.to_string(),
            "temperature" => self.backend.temperature = parse_float("temperature", value)?,
            "max_tokens" => self.backend.max_tokens = parse_num("max_tokens", value)? as u32,
            "timeout_secs" => self.backend.timeout_secs = parse_num("timeout_secs", value)?,
            "max_retries" => self.backend.max_retries = parse_num("max_retries", value)? as u32,
            "fixture_dir" => self.backend.fixture_dir = Some(PathBuf::from(value)),
            "stub_script" => self.backend.stub_script = Some(PathBuf::from(value)),
            "api_key_env" => self.backend.api_key_env = value.to_string(),
            "min_request_interval_ms" => {
                self.backend.min_request_interval_ms = parse_num("min_request_interval_ms", value)?
            }
            "in_flight" => self.backend.in_flight = parse_num("in_flight", value)? as usize,
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// rules files
// ---------------------------------------------------------------------------

/// Read a rules file: one rule per line in arrow syntax, `#` comments
/// skipped, anything after `|` (the scorer's annotation) ignored.
pub fn load_rules_file(path: &Path) -> Result<Vec<Rule>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('|').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rule = parse_rule(line).map_err(|source| PipelineError::RulesFile {
            path: path.display().to_string(),
            line: idx + 1,
            source,
        })?;
        rules.push(rule);
    }
    Ok(rules)
}

/// Render scored rules with the trailing annotation the loader ignores.
pub fn render_rules_file(scored: &[(Rule, RuleQuality)]) -> String {
    let mut out = String::new();
    for (rule, q) in scored {
        out.push_str(&format!(
            "{} | support={} hc={:.4} conf={:.4}\n",
            render_rule(rule),
            q.support,
            q.head_coverage,
            q.confidence
        ));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

// ---------------------------------------------------------------------------
// predictor strategies
// ---------------------------------------------------------------------------

/// One prediction strategy, applied per (subgraph, rule) pair.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &'static str;
    fn predict(&self, subgraph: &Subgraph, rule: &Rule)
        -> Result<Vec<PredictionRecord>, PipelineError>;
}

/// Deterministic forward-chaining predictor; its witnesses double as cited
/// premises so the auditor sees the same shape as backend output.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn predict(
        &self,
        subgraph: &Subgraph,
        rule: &Rule,
    ) -> Result<Vec<PredictionRecord>, PipelineError> {
        let store = &subgraph.store;
        Ok(crate::rules::entail(store, rule)
            .into_iter()
            .map(|e| PredictionRecord {
                predicted: crate::kg::LabelTriple::new(
                    store.vocab().entity_label(e.head_entity),
                    rule.head(),
                    store.vocab().entity_label(e.tail_entity),
                ),
                premises: e.witnesses.iter().map(|&w| store.label_triple(w)).collect(),
                rule: rule.clone(),
                subgraph_id: subgraph.id,
                span: None,
                fingerprint: "oracle".to_string(),
            })
            .collect())
    }
}

/// Prompts a completion backend with the rule and the subgraph's
/// rule-related triples, then parses whatever came back.
pub struct LlmPredictor {
    backend: Box<dyn CompletionBackend>,
}

impl LlmPredictor {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Self {
        LlmPredictor { backend }
    }
}

impl Predictor for LlmPredictor {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn predict(
        &self,
        subgraph: &Subgraph,
        rule: &Rule,
    ) -> Result<Vec<PredictionRecord>, PipelineError> {
        let store = &subgraph.store;
        let related: Vec<crate::kg::LabelTriple> = rule_related_triples(store, rule)
            .into_iter()
            .map(|t| store.label_triple(t))
            .collect();
        let prompt = build_tsp_prompt(rule, &explain_rule(rule), &related);
        let response = self.backend.complete(&prompt)?;
        let known: HashSet<String> = store
            .vocab()
            .relation_labels()
            .map(str::to_string)
            .collect();
        Ok(parse_predictions(
            &response,
            rule,
            subgraph.id,
            &known,
            &prompt.fingerprint,
        ))
    }
}

type PredictorFactory =
    Box<dyn Fn(&PipelineConfig) -> Result<Box<dyn Predictor>, PipelineError> + Send + Sync>;

/// Name-keyed registry of prediction strategies; `oracle` and `llm` are
/// built in.
pub struct PredictorRegistry {
    factories: std::collections::BTreeMap<String, PredictorFactory>,
}

impl PredictorRegistry {
    pub fn empty() -> Self {
        PredictorRegistry {
            factories: std::collections::BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register("oracle", |_cfg| Ok(Box::new(OraclePredictor)));
        registry.register("llm", |cfg| {
            Ok(Box::new(LlmPredictor::new(create_backend(&cfg.backend)?)))
        });
        registry
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PipelineConfig) -> Result<Box<dyn Predictor>, PipelineError>
            + Send
            + Sync
            + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, config: &PipelineConfig) -> Result<Box<dyn Predictor>, PipelineError> {
        let factory = self.factories.get(&config.predictor).ok_or_else(|| {
            PipelineError::UnknownPredictor {
                name: config.predictor.clone(),
                known: self.names().join(", "),
            }
        })?;
        factory(config)
    }
}

// ---------------------------------------------------------------------------
// stage commands
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct MineOutcome {
    pub rules_file: PathBuf,
    pub rejects_file: PathBuf,
    pub scored: Vec<(Rule, RuleQuality)>,
    pub rejects: Vec<(String, RejectedCandidate)>,
}

fn load_augmented(config: &PipelineConfig) -> Result<TripleStore, PipelineError> {
    let store = TripleStore::load(&config.train_path)?;
    Ok(store.add_inverses()?)
}

/// Mine rules: every relation (inverses included) takes a turn as the rule
/// head, the backend proposes rules, and the survivors of scoring and
/// thresholding land in the rules file. A backend failure aborts the stage
/// but the partial rules and the rejects log are written first.
pub fn cmd_mine_rules(config: &PipelineConfig) -> Result<MineOutcome, PipelineError> {
    let graph = load_augmented(config)?;
    let backend = create_backend(&config.backend)?;
    let relations: Vec<String> = graph.vocab().relation_labels().map(str::to_string).collect();

    let rules_file = config.out_dir.join("rules.txt");
    let rejects_file = config.out_dir.join("rules_rejects.txt");
    let mut mined: Vec<Rule> = Vec::new();
    let mut rejects: Vec<(String, RejectedCandidate)> = Vec::new();
    let mut backend_failure: Option<GatewayError> = None;

    for head in &relations {
        let prompt = build_rule_prompt(&relations, head)?;
        let response = match backend.complete(&prompt) {
            Ok(text) => text,
            Err(e) => {
                log::error!("mining head `{head}` failed: {e}");
                backend_failure = Some(e);
                break;
            }
        };
        let outcome = parse_mined_rules(&response);
        for rule in outcome.rules {
            if rule.body_len() < config.min_rule_len || rule.body_len() > config.max_rule_len {
                rejects.push((
                    head.clone(),
                    RejectedCandidate {
                        line_no: 0,
                        text: render_rule(&rule),
                        reason: format!(
                            "body length {} outside configured bounds {}..={}",
                            rule.body_len(),
                            config.min_rule_len,
                            config.max_rule_len
                        ),
                    },
                ));
            } else {
                mined.push(rule);
            }
        }
        rejects.extend(outcome.rejects.into_iter().map(|r| (head.clone(), r)));
    }

    let scored = filter_rules(&mined, config.alpha_conf, config.alpha_hc, &graph);
    write_file(&rules_file, &render_rules_file(&scored))?;
    let mut rejects_text = String::new();
    for (head, r) in &rejects {
        rejects_text.push_str(&format!(
            "{head}\t{}\t{}\t{}\n",
            r.line_no, r.reason, r.text
        ));
    }
    write_file(&rejects_file, &rejects_text)?;

    match backend_failure {
        Some(e) => Err(e.into()),
        None => Ok(MineOutcome {
            rules_file,
            rejects_file,
            scored,
            rejects,
        }),
    }
}

/// Score an existing rules file on the augmented training graph and write
/// the annotated copy. No thresholding; the annotations carry the numbers.
pub fn cmd_score_rules(config: &PipelineConfig) -> Result<MineOutcome, PipelineError> {
    let rules_path = config
        .rules_path
        .as_ref()
        .ok_or(PipelineError::MissingRulesPath)?;
    let graph = load_augmented(config)?;
    let rules = load_rules_file(rules_path)?;
    let mut seen = HashSet::new();
    let scored: Vec<(Rule, RuleQuality)> = rules
        .into_iter()
        .filter(|r| seen.insert(r.clone()))
        .map(|r| {
            let q = score_rule(&graph, &r);
            (r, q)
        })
        .collect();
    let rules_file = config.out_dir.join("scored_rules.txt");
    write_file(&rules_file, &render_rules_file(&scored))?;
    Ok(MineOutcome {
        rules_file,
        rejects_file: PathBuf::new(),
        scored,
        rejects: Vec::new(),
    })
}

#[derive(Debug)]
pub struct PartitionOutcome {
    pub manifest_file: PathBuf,
    pub groups: Vec<EntityGroup>,
    pub stats: PartitionStats,
}

/// Partition the augmented graph and write the group manifest.
pub fn cmd_partition(config: &PipelineConfig) -> Result<PartitionOutcome, PipelineError> {
    let graph = load_augmented(config)?;
    let groups = partition(&graph, &config.partition)?;
    let stats = PartitionStats::compute(&graph, &groups);
    let manifest_file = config.out_dir.join("partition.tsv");
    write_file(&manifest_file, &render_manifest(&graph, &groups))?;
    Ok(PartitionOutcome {
        manifest_file,
        groups,
        stats,
    })
}

#[derive(Debug)]
pub struct PredictOutcome {
    pub predictions_file: PathBuf,
    pub records: Vec<PredictionRecord>,
    /// One entry per failed (subgraph, rule) task; failures skip the task
    /// but never abort the run.
    pub failures: Vec<String>,
}

/// Run the configured predictor over every subgraph x rule pair.
pub fn cmd_predict(config: &PipelineConfig) -> Result<PredictOutcome, PipelineError> {
    let rules_path = config
        .rules_path
        .as_ref()
        .ok_or(PipelineError::MissingRulesPath)?;
    let rules = load_rules_file(rules_path)?;
    let graph = load_augmented(config)?;
    let groups = partition(&graph, &config.partition)?;
    let subgraphs = build_subgraphs(&graph, &groups)?;
    let predictor = PredictorRegistry::builtin().create(config)?;
    predict_over(config, &subgraphs, &rules, predictor.as_ref())
}

/// The prediction grid with an injectable strategy; the public commands and
/// the tests share this path.
pub fn predict_over(
    config: &PipelineConfig,
    subgraphs: &[Subgraph],
    rules: &[Rule],
    predictor: &dyn Predictor,
) -> Result<PredictOutcome, PipelineError> {
    let tasks: Vec<(usize, usize)> = (0..subgraphs.len())
        .flat_map(|s| (0..rules.len()).map(move |r| (s, r)))
        .collect();
    let results = parallel_map(tasks.len(), config.backend.in_flight, |i| {
        let (s, r) = tasks[i];
        predictor.predict(&subgraphs[s], &rules[r])
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let (s, r) = tasks[i];
        match result {
            Ok(batch) => records.extend(batch),
            Err(e) => {
                let detail = format!(
                    "subgraph {} x rule `{}`: {e}",
                    subgraphs[s].id,
                    render_rule(&rules[r])
                );
                log::warn!("prediction task failed: {detail}");
                failures.push(detail);
            }
        }
    }

    let predictions_file = config.out_dir.join("predictions.jsonl");
    write_file(&predictions_file, &write_records(&records))?;
    if !failures.is_empty() {
        let failures_file = config.out_dir.join("prediction_failures.log");
        write_file(&failures_file, &(failures.join("\n") + "\n"))?;
    }
    Ok(PredictOutcome {
        predictions_file,
        records,
        failures,
    })
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub report: HallucinationReport,
    pub report_file: PathBuf,
    pub report_json: PathBuf,
    pub audits: Vec<AuditRecord>,
}

fn audit_records(
    config: &PipelineConfig,
    records: &[PredictionRecord],
) -> Result<Vec<AuditRecord>, PipelineError> {
    let graph = load_augmented(config)?;
    let groups = partition(&graph, &config.partition)?;
    let subgraphs = build_subgraphs(&graph, &groups)?;
    records
        .iter()
        .map(|record| {
            let subgraph = subgraphs
                .get(record.subgraph_id)
                .ok_or(PipelineError::UnknownSubgraph(record.subgraph_id))?;
            Ok(audit(&subgraph.store, &record.rule, record)?)
        })
        .collect()
}

/// Audit a predictions file against the (recomputed) partition it came from.
pub fn cmd_audit(
    config: &PipelineConfig,
    predictions_path: &Path,
) -> Result<AuditOutcome, PipelineError> {
    let records = read_predictions_file(predictions_path)?;
    let audits = audit_records(config, &records)?;
    let report = summarize(&audits);
    let report_file = config.out_dir.join("hallucination_report.txt");
    let report_json = config.out_dir.join("hallucination_report.json");
    write_file(&report_file, &report.to_string())?;
    write_json(&report_json, &report)?;
    Ok(AuditOutcome {
        report,
        report_file,
        report_json,
        audits,
    })
}

fn read_predictions_file(path: &Path) -> Result<Vec<PredictionRecord>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(read_records(&text)?)
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub eval_report: EvalReport,
    pub hallucination_report: HallucinationReport,
    pub eval_file: PathBuf,
    pub eval_json: PathBuf,
    pub hallucination_file: PathBuf,
    pub hallucination_json: PathBuf,
}

/// Canonicalize, split against the test set, compute metrics, and audit.
/// Known-fact removal runs against the raw training graph; predictions are
/// folded to base form first, and the test split stays untouched.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    predictions_path: &Path,
) -> Result<EvaluateOutcome, PipelineError> {
    let test_path = config
        .test_path
        .as_ref()
        .ok_or(PipelineError::MissingTestPath)?;
    let t_test = load_label_set(test_path)?;
    let train_raw = TripleStore::load(&config.train_path)?;
    let records = read_predictions_file(predictions_path)?;

    let eval_report = evaluate(&records, &train_raw, &t_test)?;
    let audits = audit_records(config, &records)?;
    let hallucination_report = summarize(&audits);

    let eval_file = config.out_dir.join("eval_report.txt");
    let eval_json = config.out_dir.join("eval_report.json");
    let hallucination_file = config.out_dir.join("hallucination_report.txt");
    let hallucination_json = config.out_dir.join("hallucination_report.json");
    write_file(&eval_file, &eval_report.to_string())?;
    write_json(&eval_json, &eval_report)?;
    write_file(&hallucination_file, &hallucination_report.to_string())?;
    write_json(&hallucination_json, &hallucination_report)?;
    Ok(EvaluateOutcome {
        eval_report,
        hallucination_report,
        eval_file,
        eval_json,
        hallucination_file,
        hallucination_json,
    })
}

/// Mean and sample standard deviation (zero for a single run).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSpread {
    pub mean: f64,
    pub spread: f64,
}

pub fn mean_spread(values: &[f64]) -> MeanSpread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let spread = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanSpread { mean, spread }
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub n_predict: MeanSpread,
    pub n_positive: MeanSpread,
    pub jprecision: MeanSpread,
    pub st_recall: MeanSpread,
    pub f_tsp: MeanSpread,
}

impl std::fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "aggregate over {} runs (mean +/- sample std)", self.runs)?;
        writeln!(
            f,
            "  predicted: {:.1} +/- {:.1}",
            self.n_predict.mean, self.n_predict.spread
        )?;
        writeln!(
            f,
            "  positive: {:.1} +/- {:.1}",
            self.n_positive.mean, self.n_positive.spread
        )?;
        writeln!(
            f,
            "  jprecision: {:.4} +/- {:.4}",
            self.jprecision.mean, self.jprecision.spread
        )?;
        writeln!(
            f,
            "  st_recall: {:.4} +/- {:.4}",
            self.st_recall.mean, self.st_recall.spread
        )?;
        writeln!(
            f,
            "  f_tsp: {:.4} +/- {:.4}",
            self.f_tsp.mean, self.f_tsp.spread
        )
    }
}

/// Evaluate several prediction files (independent runs) and aggregate.
pub fn cmd_evaluate_runs(
    config: &PipelineConfig,
    prediction_paths: &[PathBuf],
) -> Result<(Vec<EvaluateOutcome>, AggregateReport), PipelineError> {
    if prediction_paths.is_empty() {
        return Err(PipelineError::Config(
            "evaluate --runs needs at least one predictions file".to_string(),
        ));
    }
    let mut outcomes = Vec::new();
    for (i, path) in prediction_paths.iter().enumerate() {
        let mut run_config = config.clone();
        run_config.out_dir = config.out_dir.join(format!("run_{i}"));
        outcomes.push(cmd_evaluate(&run_config, path)?);
    }
    let nums = |f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.eval_report)).collect()
    };
    let aggregate = AggregateReport {
        runs: outcomes.len(),
        n_predict: mean_spread(&nums(&|r| r.n_predict as f64)),
        n_positive: mean_spread(&nums(&|r| r.n_positive as f64)),
        jprecision: mean_spread(&nums(&|r| r.jprecision)),
        st_recall: mean_spread(&nums(&|r| r.st_recall)),
        f_tsp: mean_spread(&nums(&|r| r.f_tsp)),
    };
    write_file(
        &config.out_dir.join("aggregate_report.txt"),
        &aggregate.to_string(),
    )?;
    write_json(&config.out_dir.join("aggregate_report.json"), &aggregate)?;
    Ok((outcomes, aggregate))
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub mine: Option<MineOutcome>,
    pub predict: PredictOutcome,
    pub evaluate: EvaluateOutcome,
}

/// The full composition: mine (unless a rules file is given), predict,
/// evaluate. Equals running the stage commands back to back with the same
/// config.
pub fn cmd_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let (mine, rules_path) = match &config.rules_path {
        Some(path) => (None, path.clone()),
        None => {
            let outcome = cmd_mine_rules(config)?;
            let path = outcome.rules_file.clone();
            (Some(outcome), path)
        }
    };
    let mut predict_config = config.clone();
    predict_config.rules_path = Some(rules_path);
    let predict = cmd_predict(&predict_config)?;
    let evaluate = cmd_evaluate(config, &predict.predictions_file)?;
    Ok(PipelineOutcome {
        mine,
        predict,
        evaluate,
    })
}
