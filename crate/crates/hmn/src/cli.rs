//! Command-line front end: dataset generation, training, evaluation, batch
//! generation and an interactive REPL.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
//! `HMN_LOG={error,info,debug}` controls log verbosity.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    generate_synthetic_task, load_babi_dialogs, load_entity_list, load_normalized_dialogs,
    samples_from_dialogues, tag_history, write_entity_list, write_normalized_dialogs,
    CorpusError, Dialogue, DialogueSample, KbTriple, Speaker, SyntheticConfig, Turn, EOS,
};
use crate::metrics::{corpus_bleu, entity_f1, response_accuracy, EvalPair, EvalReport, PairDiagnostic};
use crate::model::{load_checkpoint, save_checkpoint, HmnModel};
use crate::numerics::TrainReal;
use crate::trainer::{emit_loss_log, train, TrainConfig, TrainError};

/// Failures split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, parameters or config contents: exit 2.
    Usage(String),
    /// Anything that failed at run time: exit 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(err: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(err.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "hmn",
    version,
    about = "Memory-augmented encoder-decoder for knowledge-grounded dialogue"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic lookup-task dataset.
    GenData(GenDataArgs),
    /// Train a model from a config file (flags override config keys).
    Train(TrainArgs),
    /// Evaluate a checkpoint and write the evaluation report.
    Evaluate(EvaluateArgs),
    /// Generate responses for every sample of a data file.
    Generate(GenerateArgs),
    /// Interactive dialogue with a trained checkpoint.
    Chat(ChatArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Task family; only "lookup" is defined.
    #[arg(long, default_value = "lookup")]
    pub task: String,
    #[arg(long)]
    pub entities: usize,
    #[arg(long)]
    pub dialogs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub oov_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML config file mirroring the trainer configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Data directory holding train.jsonl / dev.jsonl (overrides config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoint, loss log and diagnostics.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train the context-free-history ablation.
    #[arg(long)]
    pub cfo: bool,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Set both hop counts at once.
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub hops_history: Option<usize>,
    #[arg(long)]
    pub hops_kb: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub teacher_forcing: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Data directory or a single data file.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate when --data is a directory.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Entity list for entity F1 (defaults to entities.txt next to the data).
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Where to write the evaluation report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    /// Narrow each sample's knowledge base to the N triples most connected
    /// to its history before decoding.
    #[arg(long)]
    pub kb_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    /// Narrow each sample's knowledge base to the N triples most connected
    /// to its history before decoding.
    #[arg(long)]
    pub kb_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ChatArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Knowledge-base file: one "subject relation object" triple per line.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args).map(|_| ()),
        Command::Generate(args) => cmd_generate(&args),
        Command::Chat(args) => cmd_chat(&args, std::io::stdin().lock(), std::io::stdout()),
    }
}

/// Resolve a split file: `--data` may name the file itself or a directory
/// containing `<split>.jsonl`. bAbI-format `.txt` files load directly.
fn load_split(data: &Path, split: &str) -> Result<Vec<DialogueSample>, CliError> {
    let path = if data.is_dir() {
        data.join(format!("{split}.jsonl"))
    } else {
        data.to_path_buf()
    };
    let dialogues = load_dialogues(&path)?;
    samples_from_dialogues(&dialogues).map_err(runtime)
}

fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>, CliError> {
    let loaded = if path.extension().is_some_and(|e| e == "txt") {
        load_babi_dialogs(path)
    } else {
        load_normalized_dialogs(path)
    };
    loaded.map_err(|e| match e {
        CorpusError::Parse { .. } | CorpusError::BadRecord { .. } => usage(e.to_string()),
        other => runtime(other),
    })
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    if args.task != "lookup" {
        return Err(usage(format!(
            "unknown task {:?}; available tasks: lookup",
            args.task
        )));
    }
    let task = generate_synthetic_task(&SyntheticConfig {
        n_entities: args.entities,
        n_dialogs: args.dialogs,
        oov_fraction: args.oov_frac,
        seed: args.seed,
    })
    .map_err(|e| match e {
        CorpusError::InvalidParameter(_) => usage(e.to_string()),
        other => runtime(other),
    })?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", args.out.display())))?;
    for (name, split) in [
        ("train", &task.train),
        ("dev", &task.dev),
        ("test", &task.test),
        ("test-oov", &task.test_oov),
    ] {
        let path = args.out.join(format!("{name}.jsonl"));
        write_normalized_dialogs(&path, split).map_err(runtime)?;
        println!("{name}: {} dialogues -> {}", split.len(), path.display());
    }
    let entities_path = args.out.join("entities.txt");
    write_entity_list(&entities_path, &task.entities).map_err(runtime)?;
    println!(
        "entities: {} tokens -> {}",
        task.entities.len(),
        entities_path.display()
    );
    Ok(())
}

fn load_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| usage(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut config: TrainConfig =
        toml::from_str(&text).map_err(|e| usage(format!("bad config: {e}")))?;
    if let Some(v) = args.embed_dim {
        config.embed_dim = v;
    }
    if let Some(v) = args.hops {
        config.hops_history = v;
        config.hops_kb = v;
    }
    if let Some(v) = args.hops_history {
        config.hops_history = v;
    }
    if let Some(v) = args.hops_kb {
        config.hops_kb = v;
    }
    if let Some(v) = args.dropout {
        config.dropout = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.teacher_forcing {
        config.teacher_forcing = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.clip_norm {
        config.clip_norm = v;
    }
    if let Some(v) = args.patience {
        config.early_stop_patience = v;
    }
    if args.cfo {
        config.cfo = true;
    }
    if let Some(data) = &args.data {
        config.data_dir = Some(data.clone());
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    config
        .validate()
        .map_err(|e| usage(format!("invalid configuration: {e}")))?;
    Ok(config)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = load_train_config(args)?;
    let data_dir = config
        .data_dir
        .clone()
        .ok_or_else(|| usage("no data directory: pass --data or set data_dir in the config"))?;
    let out_dir = config
        .out_dir
        .clone()
        .ok_or_else(|| usage("no output directory: pass --out or set out_dir in the config"))?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", out_dir.display())))?;

    let train_samples = load_split(&data_dir, "train")?;
    let dev_samples = load_split(&data_dir, "dev")?;
    let entities = load_entities_if_present(&data_dir, &None)?;

    log::info!(
        "training on {} samples ({} dev), d={}, hops=({},{}), cfo={}",
        train_samples.len(),
        dev_samples.len(),
        config.embed_dim,
        config.hops_history,
        config.hops_kb,
        config.cfo
    );

    let outcome = train(&config, &train_samples, &dev_samples, entities.as_ref());
    let (model, report) = match outcome {
        Ok(ok) => ok,
        Err(TrainError::NonFiniteLoss(diag)) => {
            let path = out_dir.join("diagnostics.json");
            let body = serde_json::to_string_pretty(&*diag).expect("serializable diagnostics");
            let _ = std::fs::write(&path, body);
            return Err(runtime(anyhow::anyhow!(
                "aborted on non-finite loss; diagnostics written to {}",
                path.display()
            )));
        }
        Err(TrainError::InvalidConfig(m)) => return Err(usage(m)),
        Err(e) => return Err(runtime(e)),
    };

    let ckpt_path = out_dir.join("model.hmn");
    let extra = serde_json::to_value(&config).expect("serializable config");
    save_checkpoint(&ckpt_path, &model, &extra).map_err(runtime)?;
    let log_path = out_dir.join("loss.csv");
    emit_loss_log(&report, &log_path).map_err(runtime)?;

    println!("checkpoint: {}", ckpt_path.display());
    println!("loss log:   {}", log_path.display());
    println!(
        "best epoch: {} ({} epochs run{})",
        report.best_epoch,
        report.epochs.len(),
        if report.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    if let Some(last) = report.epochs.iter().find(|e| e.epoch == report.best_epoch) {
        for (k, v) in &last.dev {
            println!("dev {k}: {v:.4}");
        }
    }
    Ok(())
}

fn load_entities_if_present(
    data: &Path,
    explicit: &Option<PathBuf>,
) -> Result<Option<BTreeSet<String>>, CliError> {
    let path = match explicit {
        Some(p) => Some(p.clone()),
        None => {
            let candidate = if data.is_dir() {
                data.join("entities.txt")
            } else {
                data.with_file_name("entities.txt")
            };
            candidate.exists().then_some(candidate)
        }
    };
    match path {
        Some(p) => {
            let list = load_entity_list(&p).map_err(runtime)?;
            Ok(Some(list.into_iter().collect()))
        }
        None => Ok(None),
    }
}

/// Evaluate a checkpoint over one split; returns the report for callers that
/// need the numbers (tests, the acceptance suite).
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport, CliError> {
    let (model, _extra) = load_checkpoint(&args.ckpt).map_err(runtime)?;
    let samples = apply_kb_limit(load_split(&args.data, &args.split)?, args.kb_limit)?;
    if samples.is_empty() {
        return Err(usage(format!(
            "split {:?} of {} holds no samples",
            args.split,
            args.data.display()
        )));
    }
    let entities = load_entities_if_present(&args.data, &args.entities)?;
    let report = build_eval_report(&model, &samples, entities.as_ref(), args.max_len)?;

    println!("pairs: {}", report.pairs_scored);
    println!("bleu: {:.4}", report.bleu);
    if let Some(f1) = report.entity_f1 {
        println!("entity_f1: {f1:.4}");
        for (scenario, v) in &report.entity_f1_by_scenario {
            println!("entity_f1[{scenario}]: {v:.4}");
        }
    }
    println!("per_response: {:.4}", report.per_response_accuracy);
    println!("per_dialog: {:.4}", report.per_dialog_accuracy);
    if let Some(path) = &args.report {
        report.write(path).map_err(runtime)?;
        println!("report: {}", path.display());
    }
    Ok(report)
}

pub fn build_eval_report(
    model: &HmnModel<TrainReal>,
    samples: &[DialogueSample],
    entities: Option<&BTreeSet<String>>,
    max_len: usize,
) -> Result<EvalReport, CliError> {
    let empty = BTreeSet::new();
    let entity_set = entities.unwrap_or(&empty);
    let mut pairs = Vec::with_capacity(samples.len());
    let mut diagnostics = Vec::with_capacity(samples.len());
    for s in samples {
        let generated = model.generate(s, max_len).map_err(runtime)?;
        let gold: Vec<String> = s.response[..s.response.len() - 1].to_vec();
        let pair = EvalPair::new(
            s.dialogue_id.clone(),
            s.turn_id,
            s.scenario.clone(),
            generated.words.clone(),
            gold.clone(),
            entity_set,
        );
        diagnostics.push(PairDiagnostic {
            dialogue_id: s.dialogue_id.clone(),
            turn_id: s.turn_id,
            scenario: s.scenario.clone(),
            gold,
            generated: generated.words,
            sources: generated.sources,
            exact_match: pair.generated == pair.gold,
        });
        pairs.push(pair);
    }
    let (per_response, per_dialog) = response_accuracy(&pairs);
    let scorable: Vec<EvalPair> = pairs.iter().filter(|p| !p.gold.is_empty()).cloned().collect();
    let bleu = if scorable.is_empty() {
        0.0
    } else {
        corpus_bleu(&scorable, 4).map_err(runtime)?
    };
    let f1 = entities.map(|_| entity_f1(&pairs));
    Ok(EvalReport {
        pairs_scored: pairs.len(),
        bleu,
        entity_f1: f1.as_ref().map(|f| f.global),
        entity_f1_by_scenario: f1.map(|f| f.by_scenario).unwrap_or_default(),
        per_response_accuracy: per_response,
        per_dialog_accuracy: per_dialog,
        diagnostics,
    })
}

fn apply_kb_limit(
    samples: Vec<DialogueSample>,
    limit: Option<usize>,
) -> Result<Vec<DialogueSample>, CliError> {
    match limit {
        None => Ok(samples),
        Some(0) => Err(usage("--kb-limit must be at least 1")),
        Some(n) => Ok(samples
            .iter()
            .map(|s| crate::corpus::kb_match_filter(s, n))
            .collect()),
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&args.ckpt).map_err(runtime)?;
    let samples = apply_kb_limit(load_split(&args.data, &args.split)?, args.kb_limit)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p)
                .map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout()),
    };
    for s in &samples {
        let generated = model.generate(s, args.max_len).map_err(runtime)?;
        let line = serde_json::json!({
            "dialogue_id": s.dialogue_id,
            "turn_id": s.turn_id,
            "generated": generated.words,
            "sources": generated.sources.iter().map(|w| w.tag()).collect::<Vec<_>>(),
            "truncated": generated.truncated,
        });
        writeln!(out, "{line}").map_err(|e| runtime(anyhow::anyhow!("write failed: {e}")))?;
    }
    out.flush()
        .map_err(|e| runtime(anyhow::anyhow!("write failed: {e}")))?;
    Ok(())
}

fn parse_kb_file(path: &Path) -> Result<Vec<KbTriple>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut kb = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(format!(
                "{}:{}: expected \"subject relation object\", got {line:?}",
                path.display(),
                i + 1
            ));
        }
        kb.push(KbTriple::new(
            &fields[0].to_lowercase(),
            &fields[1].to_lowercase(),
            &fields[2].to_lowercase(),
        ));
    }
    Ok(kb)
}

fn inference_sample(turns: &[Turn], kb: &[KbTriple]) -> Result<DialogueSample, CorpusError> {
    let history = tag_history(turns)?;
    Ok(DialogueSample {
        dialogue_id: "chat".to_string(),
        turn_id: turns.iter().filter(|t| t.speaker == Speaker::User).count(),
        scenario: None,
        history,
        kb: kb.to_vec(),
        response: vec![EOS.to_string()],
        his_copy_labels: vec![],
        kb_copy_labels: vec![],
    })
}

/// The REPL. Reads user lines, keeps the growing tagged history (system
/// replies included), and prints every reply with per-word source tags.
/// Meta-commands: `:reset` clears the history, `:kb <file>` swaps the
/// knowledge base, `:quit` leaves.
pub fn cmd_chat(
    args: &ChatArgs,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&args.ckpt).map_err(runtime)?;
    let mut kb: Vec<KbTriple> = match &args.kb {
        Some(path) => parse_kb_file(path).map_err(usage)?,
        None => Vec::new(),
    };
    let mut turns: Vec<Turn> = Vec::new();
    let out = &mut output;
    let prompt = |out: &mut dyn Write| -> std::io::Result<()> {
        write!(out, "> ")?;
        out.flush()
    };
    prompt(out).map_err(|e| runtime(anyhow::anyhow!(e)))?;
    for line in input.lines() {
        let line = line.map_err(|e| runtime(anyhow::anyhow!(e)))?;
        let line = line.trim().to_string();
        let io = |e: std::io::Error| runtime(anyhow::anyhow!(e));
        if line.is_empty() {
            prompt(out).map_err(io)?;
            continue;
        }
        if line == ":quit" {
            break;
        }
        if line == ":reset" {
            turns.clear();
            writeln!(out, "history cleared").map_err(io)?;
            prompt(out).map_err(io)?;
            continue;
        }
        if let Some(path) = line.strip_prefix(":kb ") {
            match parse_kb_file(Path::new(path.trim())) {
                Ok(triples) => {
                    writeln!(out, "loaded {} triples", triples.len()).map_err(io)?;
                    kb = triples;
                }
                Err(msg) => writeln!(out, "kb not loaded: {msg}").map_err(io)?,
            }
            prompt(out).map_err(io)?;
            continue;
        }

        turns.push(Turn {
            speaker: Speaker::User,
            utterance: line,
        });
        let sample = inference_sample(&turns, &kb).map_err(runtime)?;
        let generated = model.generate(&sample, args.max_len).map_err(runtime)?;
        let tagged: Vec<String> = generated
            .words
            .iter()
            .zip(&generated.sources)
            .map(|(w, s)| format!("{w}[{}]", s.tag()))
            .collect();
        writeln!(out, "sys> {}", tagged.join(" ")).map_err(io)?;
        turns.push(Turn {
            speaker: Speaker::Sys,
            utterance: generated.words.join(" "),
        });
        prompt(out).map_err(io)?;
    }
    Ok(())
}
