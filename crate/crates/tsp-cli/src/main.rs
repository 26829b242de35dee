//! `tsp`: stage-by-stage driver for the triple set prediction pipeline.
//!
//! Settings come from defaults, then an optional `--config` file of
//! `key = value` lines, then flags; later sources win. API credentials are
//! read from the environment only (`TSP_API_KEY` by default).

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tsp_core::pipeline::{
    cmd_audit, cmd_evaluate, cmd_evaluate_runs, cmd_mine_rules, cmd_partition, cmd_pipeline,
    cmd_predict, cmd_score_rules, PipelineConfig,
};

#[derive(Parser)]
#[command(name = "tsp", version, about = "Triple set prediction over knowledge graphs")]
struct Cli {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Training triples (TSV: head<TAB>relation<TAB>tail).
    #[arg(long, global = true)]
    train: Option<PathBuf>,

    /// Test triples, required by `evaluate` and `pipeline`.
    #[arg(long, global = true)]
    test: Option<PathBuf>,

    /// Output directory for stage files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Rules file; skips mining in `pipeline`, feeds `predict`/`score-rules`.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,

    /// Seed for the partition pick order.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Completion backend: http, replay, or stub.
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Prediction strategy: oracle or llm.
    #[arg(long, global = true)]
    predictor: Option<String>,

    /// Confidence threshold for rule filtering.
    #[arg(long = "alpha-conf", global = true)]
    alpha_conf: Option<f64>,

    /// Head-coverage threshold for rule filtering.
    #[arg(long = "alpha-hc", global = true)]
    alpha_hc: Option<f64>,

    /// Neighborhood radius for entity grouping.
    #[arg(long = "l-hops", global = true)]
    l_hops: Option<usize>,

    #[arg(long = "min-group", global = true)]
    min_group: Option<usize>,

    #[arg(long = "max-group", global = true)]
    max_group: Option<usize>,

    /// Chat-completion endpoint for the http backend.
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// Model name sent to the http backend.
    #[arg(long, global = true)]
    model: Option<String>,

    #[arg(long, global = true)]
    temperature: Option<f64>,

    /// Fixture directory: read by replay, recorded to by http.
    #[arg(long = "fixture-dir", global = true)]
    fixture_dir: Option<PathBuf>,

    /// Script file for the stub backend (responses separated by `---`).
    #[arg(long = "stub-script", global = true)]
    stub_script: Option<PathBuf>,

    /// Bound on concurrently in-flight completions.
    #[arg(long = "in-flight", global = true)]
    in_flight: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine rules through the backend, score, threshold, write rules.txt.
    MineRules,
    /// Score an existing rules file and write the annotated copy.
    ScoreRules,
    /// Group entities and write the partition manifest.
    Partition,
    /// Predict missing triples for every subgraph x rule pair.
    Predict,
    /// Audit a predictions file for fabricated premises and rule violations.
    Audit {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Score predictions against the test split; several files aggregate as
    /// independent runs (mean +/- spread).
    Evaluate {
        #[arg(long = "predictions", visible_alias = "runs", required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
    },
    /// mine-rules (unless --rules), predict, evaluate, in one go.
    Pipeline,
}

fn build_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &cli.train {
        config.train_path = v.clone();
    }
    if let Some(v) = &cli.test {
        config.test_path = Some(v.clone());
    }
    if let Some(v) = &cli.out {
        config.out_dir = v.clone();
    }
    if let Some(v) = &cli.rules {
        config.rules_path = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        config.partition.seed = v;
    }
    if let Some(v) = &cli.backend {
        config.backend.mode = v.clone();
    }
    if let Some(v) = &cli.predictor {
        config.predictor = v.clone();
    }
    if let Some(v) = cli.alpha_conf {
        config.alpha_conf = v;
    }
    if let Some(v) = cli.alpha_hc {
        config.alpha_hc = v;
    }
    if let Some(v) = cli.l_hops {
        config.partition.l_hops = v;
    }
    if let Some(v) = cli.min_group {
        config.partition.min_group = v;
    }
    if let Some(v) = cli.max_group {
        config.partition.max_group = v;
    }
    if let Some(v) = &cli.endpoint {
        config.backend.endpoint = v.clone();
    }
    if let Some(v) = &cli.model {
        config.backend.model = v.clone();
    }
    if let Some(v) = cli.temperature {
        config.backend.temperature = v;
    }
    if let Some(v) = &cli.fixture_dir {
        config.backend.fixture_dir = Some(v.clone());
    }
    if let Some(v) = &cli.stub_script {
        config.backend.stub_script = Some(v.clone());
    }
    if let Some(v) = cli.in_flight {
        config.backend.in_flight = v;
    }
    Ok(config)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::MineRules => {
            let outcome = cmd_mine_rules(&config)?;
            println!(
                "wrote {} rules to {} ({} rejects logged in {})",
                outcome.scored.len(),
                outcome.rules_file.display(),
                outcome.rejects.len(),
                outcome.rejects_file.display()
            );
        }
        Command::ScoreRules => {
            let outcome = cmd_score_rules(&config)?;
            println!(
                "scored {} rules into {}",
                outcome.scored.len(),
                outcome.rules_file.display()
            );
        }
        Command::Partition => {
            let outcome = cmd_partition(&config)?;
            println!(
                "{} groups ({} multi-homed entities, {} triples lost) -> {}",
                outcome.stats.group_count,
                outcome.stats.multi_homed_entities,
                outcome.stats.lost_triples,
                outcome.manifest_file.display()
            );
        }
        Command::Predict => {
            let outcome = cmd_predict(&config)?;
            println!(
                "{} prediction records -> {} ({} failed tasks)",
                outcome.records.len(),
                outcome.predictions_file.display(),
                outcome.failures.len()
            );
        }
        Command::Audit { predictions } => {
            let outcome = cmd_audit(&config, predictions)?;
            print!("{}", outcome.report);
            println!("reports: {}, {}", outcome.report_file.display(), outcome.report_json.display());
        }
        Command::Evaluate { predictions } => {
            if predictions.len() == 1 {
                let outcome = cmd_evaluate(&config, &predictions[0])?;
                print!("{}", outcome.eval_report);
                print!("{}", outcome.hallucination_report);
                println!(
                    "reports: {}, {}",
                    outcome.eval_file.display(),
                    outcome.hallucination_file.display()
                );
            } else {
                let (_, aggregate) = cmd_evaluate_runs(&config, predictions)?;
                print!("{aggregate}");
            }
        }
        Command::Pipeline => {
            let outcome = cmd_pipeline(&config)?;
            if let Some(mine) = &outcome.mine {
                println!("mined {} rules", mine.scored.len());
            }
            println!(
                "{} prediction records ({} failed tasks)",
                outcome.predict.records.len(),
                outcome.predict.failures.len()
            );
            print!("{}", outcome.evaluate.eval_report);
            print!("{}", outcome.evaluate.hallucination_report);
            println!("outputs in {}", config.out_dir.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
