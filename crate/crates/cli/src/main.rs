mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;

use nle_core::corpus::{load_corpus, CorpusPaths, LoadedCorpus};
use nle_core::keywords::{KeywordLexicon, KeywordTagger};
use nle_core::label::{Label, LabelState};
use nle_core::mention::{load_external_labels, write_label_csv, BuiltinLabeler, Labeler, MentionLexicon, TextLabels};
use nle_core::metrics::auc::Pathologies;
use nle_core::metrics::evaluate::{evaluate, load_eval_pairs, load_gt_labels, load_predictions, EvaluateOptions};
use nle_core::pipeline::{read_dataset, write_outputs, DatasetStats, Pipeline};
use nle_core::rules::{audit_exclusivity, builtin_rules, rule_table_hash, RuleEngine};
use nle_core::segment::segment_report;

use config::{pick, FileConfig, LabelerKind};

#[derive(Debug, Parser)]
#[command(name = "mimic-nle", about = "Extract and score natural-language explanations from chest X-ray reports")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0: one per core).
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    /// More log output on stderr (-v info, -vv debug, -vvv trace).
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the extraction funnel over a report corpus and write the dataset.
    Extract(ExtractArgs),
    /// Print dataset statistics for an output directory.
    Stats(StatsArgs),
    /// Label every report sentence and write the label CSV, or label one text.
    Label(LabelArgs),
    /// Check that no label state matches more than one rule.
    AuditRules(AuditArgs),
    /// Score predictions and generated explanations.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct CorpusArgs {
    /// Report root containing p<subject>/s<study>.txt files.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Image metadata CSV (image_id, study_id, view_position).
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Split CSV (study_id, split).
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Manifest CSV (study_id, path[, subject_id]) instead of walking --corpus.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Keyword lexicon TOML.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Mention lexicon TOML for the built-in labeler.
    #[arg(long)]
    mention_lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    labeler: Option<LabelerKind>,
    /// Sentence label CSV for --labeler external.
    #[arg(long)]
    labels_file: Option<PathBuf>,
    /// Deduplicate on diagnosis labels regardless of certainty.
    #[arg(long)]
    dedup_ignore_certainty: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Directory written by `extract`.
    dataset: PathBuf,
    /// Rebuild the tables from the JSONL records instead of stats.json.
    #[arg(long)]
    from_records: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output CSV for corpus labeling.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label this text and print JSON instead of reading a corpus.
    #[arg(long, conflicts_with = "corpus")]
    text: Option<String>,
}

#[derive(Debug, Args)]
struct AuditArgs {}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Evaluation pairs JSONL.
    #[arg(long = "eval")]
    eval_file: Option<PathBuf>,
    /// Prediction CSV: image_id plus 30 probability columns.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Per-image ground-truth label CSV; defaults to the pairs' gt_binary.
    #[arg(long)]
    gt_labels: Option<PathBuf>,
    /// Score at or above which a diagnosis counts as predicted present.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated list of the ten pathologies on the prediction axis.
    #[arg(long, value_delimiter = ',')]
    pathologies: Option<Vec<String>>,
    /// Labeler applied to explanation text for CLEV.
    #[arg(long, value_enum)]
    clev_labeler: Option<LabelerKind>,
    /// Text label CSV for --clev-labeler external.
    #[arg(long)]
    clev_labels_file: Option<PathBuf>,
    #[arg(long)]
    mention_lexicon: Option<PathBuf>,
    /// Write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report JSON on stdout instead of the table.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Data(String),
    Audit(String),
}

impl From<nle_core::Error> for Failure {
    fn from(e: nle_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn require<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("missing required option {flag}")))
}

fn keyword_lexicon(flag: Option<&Path>, file: &FileConfig) -> Result<KeywordLexicon, Failure> {
    let lex = match pick(flag, file.pipeline.lexicon.as_deref()) {
        Some(p) => KeywordLexicon::from_path(p)?,
        None => file.lexicon.clone().unwrap_or_default(),
    };
    lex.validate()?;
    Ok(lex)
}

fn builtin_labeler(flag: Option<&Path>, file: &FileConfig) -> Result<BuiltinLabeler, Failure> {
    let lex = match pick(flag, file.pipeline.mention_lexicon.as_deref()) {
        Some(p) => MentionLexicon::from_path(p)?,
        None => MentionLexicon::default(),
    };
    Ok(BuiltinLabeler::new(&lex)?)
}

fn corpus(args: &CorpusArgs, file: &FileConfig) -> Result<LoadedCorpus, Failure> {
    let c = &file.corpus;
    let paths = CorpusPaths {
        report_root: require(pick(args.corpus.clone(), c.report_root.clone()), "--corpus")?,
        metadata: pick(args.metadata.clone(), c.metadata.clone()),
        splits: pick(args.splits.clone(), c.splits.clone()),
        manifest: pick(args.manifest.clone(), c.manifest.clone()),
    };
    let t = Instant::now();
    let loaded = load_corpus(&paths)?;
    log::info!(
        "loaded {} reports ({} ingest issues) in {:.2?}",
        loaded.reports.len(),
        loaded.issues.len(),
        t.elapsed()
    );
    Ok(loaded)
}

fn extract(args: ExtractArgs, file: &FileConfig) -> Outcome {
    let out = require(pick(args.out, file.pipeline.out.clone()), "--out")?;
    let kind = pick(args.labeler, file.pipeline.labeler).unwrap_or_default();
    let tagger = KeywordTagger::new(&keyword_lexicon(args.corpus.lexicon.as_deref(), file)?)?;
    let rules = RuleEngine::default();
    let loaded = corpus(&args.corpus, file)?;

    let builtin;
    let mut external = None;
    let labeler: &dyn Labeler = match kind {
        LabelerKind::Builtin => {
            builtin = builtin_labeler(args.corpus.mention_lexicon.as_deref(), file)?;
            &builtin
        }
        LabelerKind::External => {
            let path = require(pick(args.labels_file, file.pipeline.labels_file.clone()), "--labels-file")?;
            &*external.insert(load_external_labels(&path)?)
        }
    };
    let pipeline = Pipeline {
        tagger: &tagger,
        labeler,
        rules: &rules,
        dedup_ignore_certainty: args.dedup_ignore_certainty || file.pipeline.dedup_ignore_certainty.unwrap_or(false),
    };
    let t = Instant::now();
    let output = pipeline.run(&loaded.reports);
    log::info!("pipeline finished in {:.2?}", t.elapsed());
    if let Some(ext) = &external {
        let misses = ext.misses();
        if misses > 0 {
            log::warn!("{misses} sentences had no row in the label file and were treated as unlabeled");
        }
    }
    let written = write_outputs(&out, &output, &loaded.issues)?;
    let stats: DatasetStats = serde_json::from_slice(
        &std::fs::read(&written.stats).map_err(|e| Failure::Data(format!("{}: {e}", written.stats.display())))?,
    )
    .map_err(|e| Failure::Data(e.to_string()))?;
    print!("{}", stats.to_table());
    Ok(())
}

fn stats(args: StatsArgs) -> Outcome {
    let stats_path = args.dataset.join("stats.json");
    let stats = if args.from_records || !stats_path.exists() {
        DatasetStats::from_records(&read_dataset(&args.dataset)?)
    } else {
        let bytes = std::fs::read(&stats_path).map_err(|e| Failure::Data(format!("{}: {e}", stats_path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", stats_path.display())))?
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats).map_err(|e| Failure::Data(e.to_string()))?);
    } else {
        print!("{}", stats.to_table());
    }
    Ok(())
}

fn state_json(state: &LabelState) -> serde_json::Value {
    let map: BTreeMap<&str, &str> = state
        .iter()
        .filter(|(_, c)| c.is_present() || c.as_str() == "negative")
        .map(|(l, c)| (l.name(), c.as_str()))
        .collect();
    serde_json::json!(map)
}

fn label(args: LabelArgs, file: &FileConfig) -> Outcome {
    let labeler = builtin_labeler(args.corpus.mention_lexicon.as_deref(), file)?;
    if let Some(text) = args.text {
        println!("{}", state_json(&labeler.label_text(&text)));
        return Ok(());
    }
    let out = require(args.out, "--out")?;
    let loaded = corpus(&args.corpus, file)?;
    let rows: Vec<_> = loaded
        .reports
        .par_iter()
        .flat_map_iter(|r| segment_report(r).into_iter().map(|s| {
            let state = labeler.label(&s);
            (s, state)
        }))
        .collect();
    write_label_csv(&out, rows.iter().map(|(s, st)| (s, *st)))?;
    log::info!("wrote {} sentence labels to {}", rows.len(), out.display());
    Ok(())
}

fn audit(_args: AuditArgs) -> Outcome {
    let t = Instant::now();
    let report = audit_exclusivity(&RuleEngine::default());
    log::info!("audit finished in {:.2?}", t.elapsed());
    print!("{}", report.to_table());
    if report.is_exclusive() {
        Ok(())
    } else {
        Err(Failure::Audit(format!("{} label states match more than one rule", report.multi_matched.len())))
    }
}

fn pathologies(names: Option<Vec<String>>) -> Result<Pathologies, Failure> {
    let Some(names) = names else {
        return Ok(Pathologies::default());
    };
    let labels = names
        .iter()
        .map(|n| n.trim().parse::<Label>().map_err(|_| Failure::Usage(format!("unknown pathology {n:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Pathologies::from_labels(&labels).map_err(|e| Failure::Usage(e.to_string()))
}

fn run_evaluate(args: EvaluateArgs, file: &FileConfig) -> Outcome {
    let ev = &file.evaluate;
    let eval_file = require(args.eval_file, "--eval")?;
    let pred_file = require(args.predictions, "--predictions")?;
    let threshold = pick(args.threshold, ev.threshold).unwrap_or(nle_core::metrics::evaluate::DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Usage(format!("--threshold {threshold} outside [0, 1]")));
    }
    let opts = EvaluateOptions {
        threshold,
        pathologies: pathologies(pick(args.pathologies, ev.pathologies.clone()))?,
    };
    let pairs = load_eval_pairs(&eval_file)?;
    let preds = load_predictions(&pred_file)?;
    let gt = args.gt_labels.as_deref().map(load_gt_labels).transpose()?;

    let report = match pick(args.clev_labeler, ev.clev_labeler).unwrap_or_default() {
        LabelerKind::Builtin => {
            let l = builtin_labeler(args.mention_lexicon.as_deref(), file)?;
            evaluate(pairs, &preds, gt.as_ref(), &opts, |t| l.label_text(t))?
        }
        LabelerKind::External => {
            let path = require(pick(args.clev_labels_file, ev.clev_labels_file.clone()), "--clev-labels-file")?;
            let l = TextLabels::load(&path)?;
            let r = evaluate(pairs, &preds, gt.as_ref(), &opts, |t| l.label_text(t))?;
            if l.misses() > 0 {
                log::warn!("{} explanation texts had no row in {}", l.misses(), path.display());
            }
            r
        }
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))?;
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{json}\n")).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    let jobs = pick(cli.jobs, file.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Extract(a) => extract(a, &file),
        Command::Stats(a) => stats(a),
        Command::Label(a) => label(a, &file),
        Command::AuditRules(a) => audit(a),
        Command::Evaluate(a) => run_evaluate(a, &file),
    })
}

fn version() -> String {
    format!(
        "{} (rules {})",
        env!("CARGO_PKG_VERSION"),
        rule_table_hash(&builtin_rules())
    )
}

fn main() -> ExitCode {
    let cmd = Cli::command().version(&*Box::leak(version().into_boxed_str()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = run(cli);
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n");
            let _ = Cli::command().print_help();
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Audit(m)) => {
            eprintln!("audit failed: {m}");
            ExitCode::from(3)
        }
    }
}
