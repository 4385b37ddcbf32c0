//! Command-line driver. Every command reads its inputs from files, writes
//! its artifacts under `--out`, and leaves a run log in `<out>/logs/`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use msnt_core::augment::{self, EmbeddingNeighbors, Resources, Strategy};
use msnt_core::data::{generate_synthetic, pretraining_documents, split_dataset, DatasetSplit};
use msnt_core::distill::{distill, init_student, student_config};
use msnt_core::ensemble::{agreement_analysis, EnsembleSpec};
use msnt_core::finetune::{encode_examples, finetune};
use msnt_core::label::NUM_CLASSES;
use msnt_core::metrics::compute_metrics;
use msnt_core::pretrain::pretrain;
use msnt_core::{LabeledExample, Sentiment, SentimentModel, Variant, Vocab};

use crate::config::{Settings, SEED_ENV};
use crate::error::{AppError, AppResult};
use crate::io::{self, PredictionRecord};
use crate::report::{self, CompressionRecord, ReportKind, ReportRecord};

#[derive(Debug, Parser)]
#[command(name = "msnt", version, about = "Mini transformer sentiment pipeline", arg_required_else_help = true)]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for every random choice; wins over MSNT_SEED and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Bertlike,
    Albertlike,
    Robertalike,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Bertlike => Variant::BertLike,
            VariantArg::Albertlike => Variant::AlbertLike,
            VariantArg::Robertalike => Variant::RobertaLike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Thesaurus,
    Embedding,
    Backtranslate,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Thesaurus => Strategy::Thesaurus,
            StrategyArg::Embedding => Strategy::Embedding,
            StrategyArg::Backtranslate => Strategy::BackTranslate,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic train/validation/test split and a pretraining corpus.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
    /// Splits a labeled dataset into stratified train/validation/test files.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Builds a subword vocabulary from dataset or text files.
    BuildVocab {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrains a fresh encoder of the given variant.
    Pretrain {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tunes a checkpoint for sentiment with early stopping.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        /// Evaluated after training when given.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Artifact name; defaults to the variant name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates a checkpoint on a dataset, or a predictions file against
    /// a dataset.
    Evaluate {
        #[arg(long, requires = "vocab", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Labeled dataset holding the true labels.
        #[arg(long)]
        data: PathBuf,
        /// JSON-lines predictions `{text_id, label}`.
        #[arg(long, required_unless_present = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Soft-voting ensemble of fine-tuned checkpoints.
    Ensemble {
        #[arg(long = "checkpoint", required = true, num_args = 1)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ensemble")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise agreement and correlation of model predictions.
    Agreement {
        /// Predictions files; names default to the file stems.
        #[arg(long = "predictions", num_args = 1)]
        predictions: Vec<PathBuf>,
        #[arg(long = "checkpoint", num_args = 1, requires_all = ["vocab", "data"])]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distills a half-depth student from a fine-tuned teacher.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "student")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes an augmented copy of a labeled dataset.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        thesaurus: Option<PathBuf>,
        /// Model whose token embeddings define neighbours.
        #[arg(long, requires = "vocab")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Stub translator dictionaries.
        #[arg(long)]
        translator: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders every `*.report.json` (and `compression.json`) in the input
    /// directories as aligned tables.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// `env_seed` is the value of `MSNT_SEED`, if set.
pub fn run<I, T>(args: I, env_seed: Option<String>) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(&cli, env_seed.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msnt: {e}");
            e.exit_code()
        }
    }
}

pub fn settings(cli: &Cli, env_seed: Option<&str>) -> AppResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
        s.apply_text(&text)?;
    }
    for o in &cli.overrides {
        s.apply_override(o)?;
    }
    s.apply_seed_env(env_seed)?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    Ok(s)
}

pub fn execute(cli: &Cli, env_seed: Option<&str>) -> AppResult<()> {
    let s = settings(cli, env_seed)?;
    match &cli.command {
        Command::GenerateSynthetic { out } => generate_cmd(&s, out),
        Command::Split { data, out } => split_cmd(&s, data, out),
        Command::BuildVocab { inputs, out } => build_vocab_cmd(&s, inputs, out),
        Command::Pretrain {
            variant,
            vocab,
            corpus,
            out,
        } => pretrain_cmd(&s, (*variant).into(), vocab, corpus, out),
        Command::Finetune {
            checkpoint,
            vocab,
            train,
            validation,
            test,
            name,
            out,
        } => finetune_cmd(&s, checkpoint, vocab, train, validation, test.as_deref(), name.as_deref(), out),
        Command::Evaluate {
            checkpoint,
            vocab,
            data,
            predictions,
            name,
            out,
        } => evaluate_cmd(&s, checkpoint.as_deref(), vocab.as_deref(), data, predictions.as_deref(), name.as_deref(), out),
        Command::Ensemble {
            checkpoints,
            vocab,
            data,
            name,
            out,
        } => ensemble_cmd(&s, checkpoints, vocab, data, name, out),
        Command::Agreement {
            predictions,
            checkpoints,
            vocab,
            data,
            out,
        } => agreement_cmd(&s, predictions, checkpoints, vocab.as_deref(), data.as_deref(), out),
        Command::Distill {
            teacher,
            vocab,
            train,
            validation,
            test,
            name,
            out,
        } => distill_cmd(&s, teacher, vocab, train, validation, test, name, out),
        Command::Augment {
            data,
            strategy,
            thesaurus,
            checkpoint,
            vocab,
            translator,
            out,
        } => augment_cmd(
            &s,
            data,
            (*strategy).into(),
            thesaurus.as_deref(),
            checkpoint.as_deref(),
            vocab.as_deref(),
            translator.as_deref(),
            out,
        ),
        Command::Report { inputs, out } => report_cmd(inputs, out),
    }
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

fn write_log(out: &Path, name: &str, settings: &Settings, inputs: &[(&str, String)]) -> AppResult<()> {
    io::write_file(&out.join("logs").join(format!("{name}.log")), report::run_log(name, settings, inputs))
}

fn stem(path: &Path) -> String {
    let s = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    s.strip_suffix(".predictions").unwrap_or(s).to_string()
}

fn write_split(s: &Settings, split: &DatasetSplit, out: &Path) -> AppResult<()> {
    for (name, part) in ["train", "validation", "test"].iter().zip(split.parts()) {
        io::write_dataset(&out.join(format!("{name}.jsonl")), part)?;
    }
    let texts: Vec<String> = split.train.iter().map(|e| e.text.clone()).collect();
    let docs = pretraining_documents(&texts, s.sentences_per_document, s.seed)?;
    io::write_file(&out.join("corpus.txt"), io::corpus_text(&docs))
}

fn generate_cmd(s: &Settings, out: &Path) -> AppResult<()> {
    let split = generate_synthetic(&s.synthetic())?;
    write_split(s, &split, out)?;
    write_log(out, "generate-synthetic", s, &[])?;
    let [a, b, c] = split.sizes();
    println!("wrote {a} train, {b} validation, {c} test examples to {}", out.display());
    Ok(())
}

fn split_cmd(s: &Settings, data: &Path, out: &Path) -> AppResult<()> {
    let examples = io::load_dataset(data)?;
    let split = split_dataset(&examples, s.split_ratios, s.seed, &stem(data))?;
    write_split(s, &split, out)?;
    write_log(out, "split", s, &[("data", shown(data))])?;
    let [a, b, c] = split.sizes();
    println!("split {} examples into {a}/{b}/{c}", examples.len());
    Ok(())
}

fn build_vocab_cmd(s: &Settings, inputs: &[PathBuf], out: &Path) -> AppResult<()> {
    let mut texts = Vec::new();
    for p in inputs {
        texts.extend(io::read_texts(p)?);
    }
    if texts.is_empty() {
        return Err(AppError::Data("no text to build a vocabulary from".into()));
    }
    let vocab = Vocab::build(&texts, s.vocab_size, s.min_frequency)?;
    io::write_vocab(&out.join("vocab.txt"), &vocab)?;
    let listed: Vec<(&str, String)> = inputs.iter().map(|p| ("input", shown(p))).collect();
    write_log(out, "build-vocab", s, &listed)?;
    println!("vocabulary of {} tokens", vocab.len());
    Ok(())
}

fn pretrain_cmd(s: &Settings, variant: Variant, vocab_path: &Path, corpus: &Path, out: &Path) -> AppResult<()> {
    let vocab = io::read_vocab(vocab_path)?;
    let docs = io::read_corpus(corpus)?;
    let mut model = SentimentModel::new(s.encoder(vocab.len(), variant), variant, s.seed)?;
    let trace = pretrain(&mut model, &vocab, &docs, &s.pretrain(variant))?;
    let name = variant.name();
    io::write_model(&out.join(format!("{name}.pretrained.ckpt")), &model, &vocab)?;
    io::write_file(&out.join(format!("{name}.pretrain.jsonl")), report::pretrain_trace_jsonl(&trace))?;
    write_log(
        out,
        &format!("pretrain-{name}"),
        s,
        &[("vocab", shown(vocab_path)), ("corpus", shown(corpus))],
    )?;
    if let (Some(first), Some(last)) = (trace.loss.first(), trace.loss.last()) {
        println!("{name}: {} steps, loss {first:.4} -> {last:.4}", trace.loss.len());
    }
    Ok(())
}

/// Probabilities in canonical class order.
fn canonical(model: &SentimentModel, p: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (k, l) in model.label_order.iter().enumerate() {
        out[l.index()] = p[k];
    }
    out
}

/// Writes predictions, JSON and text reports for `model` on `data`.
fn evaluate_model(
    model: &SentimentModel,
    vocab: &Vocab,
    data: &[LabeledExample],
    dataset: &str,
    name: &str,
    kind: ReportKind,
    out: &Path,
) -> AppResult<ReportRecord> {
    let encoded = encode_examples(model, vocab, data, model.config().max_seq_len)?;
    let mut records = Vec::with_capacity(data.len());
    let mut predicted = Vec::with_capacity(data.len());
    for (ex, enc) in data.iter().zip(&encoded) {
        let probs = canonical(model, model.predict_proba(enc)?);
        let label = Sentiment::ALL[msnt_core::label::argmax(&probs)];
        predicted.push(label);
        records.push(PredictionRecord {
            text_id: ex.id,
            label: label.name().into(),
            probs: Some(probs),
        });
    }
    let truth: Vec<Sentiment> = data.iter().map(|e| e.label).collect();
    let rec = ReportRecord::new(&compute_metrics(name, &truth, &predicted)?, kind, dataset);
    io::write_file(&out.join(format!("{name}.predictions.jsonl")), io::predictions_jsonl(&records))?;
    write_report(&rec, out)?;
    Ok(rec)
}

fn write_report(rec: &ReportRecord, out: &Path) -> AppResult<()> {
    io::write_file(&out.join(format!("{}.report.json", rec.name)), rec.to_json())?;
    let table = report::render_table(&rec.name, &[rec]);
    io::write_file(&out.join(format!("{}.report.txt", rec.name)), &table)?;
    print!("{table}");
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    s: &Settings,
    checkpoint: &Path,
    vocab_path: &Path,
    train: &Path,
    validation: &Path,
    test: Option<&Path>,
    name: Option<&str>,
    out: &Path,
) -> AppResult<()> {
    let vocab = io::read_vocab(vocab_path)?;
    let mut model = io::read_model(checkpoint, &vocab)?;
    let name = name.unwrap_or(model.variant().name()).to_string();
    let (train_set, valid_set) = (io::load_dataset(train)?, io::load_dataset(validation)?);
    let cfg = s.finetune(model.config().max_seq_len);
    let outcome = finetune(&mut model, &vocab, &train_set, &valid_set, &cfg)?;
    io::write_model(&out.join(format!("{name}.ckpt")), &model, &vocab)?;
    io::write_file(&out.join(format!("{name}.history.jsonl")), report::history_jsonl(&outcome.history))?;
    let mut inputs = vec![
        ("checkpoint", shown(checkpoint)),
        ("vocab", shown(vocab_path)),
        ("train", shown(train)),
        ("validation", shown(validation)),
    ];
    if let Some(t) = test {
        inputs.push(("test", shown(t)));
    }
    write_log(out, &format!("finetune-{name}"), s, &inputs)?;
    println!(
        "{name}: best epoch {} of {}, validation macro-F1 {:.4}{}",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_score,
        if outcome.history.len() < cfg.epochs { " (stopped early)" } else { "" }
    );
    if let Some(t) = test {
        evaluate_model(&model, &vocab, &io::load_dataset(t)?, &stem(t), &name, ReportKind::Model, out)?;
    }
    Ok(())
}

fn evaluate_cmd(
    s: &Settings,
    checkpoint: Option<&Path>,
    vocab: Option<&Path>,
    data: &Path,
    predictions: Option<&Path>,
    name: Option<&str>,
    out: &Path,
) -> AppResult<()> {
    let examples = io::load_dataset(data)?;
    let dataset = stem(data);
    let mut inputs = vec![("data", shown(data))];
    if let (Some(ckpt), Some(vocab_path)) = (checkpoint, vocab) {
        let vocab = io::read_vocab(vocab_path)?;
        let model = io::read_model(ckpt, &vocab)?;
        let name = name.map_or_else(|| stem(ckpt), String::from);
        evaluate_model(&model, &vocab, &examples, &dataset, &name, ReportKind::Model, out)?;
        inputs.push(("checkpoint", shown(ckpt)));
        inputs.push(("vocab", shown(vocab_path)));
        return write_log(out, &format!("evaluate-{name}"), s, &inputs);
    }
    let pred_path = predictions.ok_or_else(|| AppError::Usage("evaluate needs --checkpoint or --predictions".into()))?;
    let preds = io::read_predictions(pred_path)?;
    let by_id: std::collections::BTreeMap<usize, Sentiment> = preds.into_iter().collect();
    let mut truth = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    let mut missing = Vec::new();
    for e in &examples {
        match by_id.get(&e.id) {
            Some(&p) => {
                truth.push(e.label);
                predicted.push(p);
            }
            None => missing.push(e.id),
        }
    }
    if !missing.is_empty() {
        return Err(AppError::Data(format!(
            "{}: no prediction for {} example(s), first id {}",
            pred_path.display(),
            missing.len(),
            missing[0]
        )));
    }
    let name = name.map_or_else(|| stem(pred_path), String::from);
    let rec = ReportRecord::new(&compute_metrics(&name, &truth, &predicted)?, ReportKind::Model, &dataset);
    write_report(&rec, out)?;
    inputs.push(("predictions", shown(pred_path)));
    write_log(out, &format!("evaluate-{name}"), s, &inputs)
}

fn load_models(paths: &[PathBuf], vocab: &Vocab) -> AppResult<Vec<SentimentModel>> {
    paths.iter().map(|p| io::read_model(p, vocab)).collect()
}

fn ensemble_cmd(s: &Settings, checkpoints: &[PathBuf], vocab_path: &Path, data: &Path, name: &str, out: &Path) -> AppResult<()> {
    if checkpoints.len() < 2 {
        return Err(AppError::Usage("an ensemble needs at least two --checkpoint files".into()));
    }
    let vocab = io::read_vocab(vocab_path)?;
    let models = load_models(checkpoints, &vocab)?;
    let weights = (!s.weights.is_empty()).then(|| s.weights.clone());
    let spec = EnsembleSpec::new(models.iter().collect(), weights)?;
    let examples = io::load_dataset(data)?;
    let max_len = models.iter().map(|m| m.config().max_seq_len).min().unwrap_or(1);
    let encoded = encode_examples(&models[0], &vocab, &examples, max_len)?;
    let mut records = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    for (ex, enc) in examples.iter().zip(&encoded) {
        let (label, probs) = spec.predict(enc)?;
        predicted.push(label);
        records.push(PredictionRecord {
            text_id: ex.id,
            label: label.name().into(),
            probs: Some(probs),
        });
    }
    let truth: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    let rec = ReportRecord::new(&compute_metrics(name, &truth, &predicted)?, ReportKind::Ensemble, &stem(data));
    io::write_file(&out.join(format!("{name}.predictions.jsonl")), io::predictions_jsonl(&records))?;
    write_report(&rec, out)?;
    let mut inputs: Vec<(&str, String)> = checkpoints.iter().map(|p| ("checkpoint", shown(p))).collect();
    inputs.push(("vocab", shown(vocab_path)));
    inputs.push(("data", shown(data)));
    let w: Vec<String> = spec.weights().iter().map(f64::to_string).collect();
    inputs.push(("normalized_weights", w.join(",")));
    write_log(out, &format!("ensemble-{name}"), s, &inputs)
}

fn agreement_cmd(
    s: &Settings,
    predictions: &[PathBuf],
    checkpoints: &[PathBuf],
    vocab: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
) -> AppResult<()> {
    let mut names = Vec::new();
    let mut labels: Vec<Vec<Sentiment>> = Vec::new();
    let mut inputs = Vec::new();
    let mut order: Option<Vec<usize>> = None;
    for p in predictions {
        let preds = io::read_predictions(p)?;
        let ids: Vec<usize> = preds.iter().map(|x| x.0).collect();
        match &order {
            None => order = Some(ids),
            Some(first) => {
                let by_id: std::collections::BTreeMap<usize, Sentiment> = preds.iter().copied().collect();
                if by_id.len() != first.len() || first.iter().any(|id| !by_id.contains_key(id)) {
                    return Err(AppError::Data(format!(
                        "{}: predictions cover different examples than {}",
                        p.display(),
                        predictions[0].display()
                    )));
                }
                labels.push(first.iter().map(|id| by_id[id]).collect());
                names.push(stem(p));
                inputs.push(("predictions", shown(p)));
                continue;
            }
        }
        labels.push(preds.iter().map(|x| x.1).collect());
        names.push(stem(p));
        inputs.push(("predictions", shown(p)));
    }
    if !checkpoints.is_empty() {
        let (Some(vocab_path), Some(data_path)) = (vocab, data) else {
            return Err(AppError::Usage("--checkpoint needs --vocab and --data".into()));
        };
        if !predictions.is_empty() {
            return Err(AppError::Usage("use either --predictions or --checkpoint, not both".into()));
        }
        let vocab = io::read_vocab(vocab_path)?;
        let examples = io::load_dataset(data_path)?;
        for (p, m) in checkpoints.iter().zip(load_models(checkpoints, &vocab)?) {
            let encoded = encode_examples(&m, &vocab, &examples, m.config().max_seq_len)?;
            labels.push(msnt_core::finetune::predict(&m, &encoded)?);
            names.push(stem(p));
            inputs.push(("checkpoint", shown(p)));
        }
        inputs.push(("vocab", shown(vocab_path)));
        inputs.push(("data", shown(data_path)));
    }
    if labels.len() < 2 {
        return Err(AppError::Usage("agreement needs at least two models".into()));
    }
    let matrix = agreement_analysis(&names, &labels)?;
    io::write_file(&out.join("agreement.csv"), report::agreement_csv(&matrix))?;
    io::write_file(&out.join("correlation.csv"), report::correlation_csv(&matrix))?;
    write_log(out, "agreement", s, &inputs)?;
    print!("{}", report::agreement_csv(&matrix));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn distill_cmd(
    s: &Settings,
    teacher_path: &Path,
    vocab_path: &Path,
    train: &Path,
    validation: &Path,
    test: &Path,
    name: &str,
    out: &Path,
) -> AppResult<()> {
    let vocab = io::read_vocab(vocab_path)?;
    let teacher = io::read_model(teacher_path, &vocab)?;
    let (train_set, valid_set, test_set) = (io::load_dataset(train)?, io::load_dataset(validation)?, io::load_dataset(test)?);
    let mut student = init_student(&teacher, student_config(teacher.config()), s.seed)?;
    let outcome = distill(
        &teacher,
        &mut student,
        &vocab,
        &train_set,
        &valid_set,
        &test_set,
        &s.distill(teacher.config().max_seq_len),
    )?;
    io::write_model(&out.join(format!("{name}.ckpt")), &student, &vocab)?;
    io::write_file(&out.join(format!("{name}.history.jsonl")), report::history_jsonl(&outcome.training.history))?;
    let compression = CompressionRecord::from(&outcome.report);
    io::write_file(&out.join("compression.json"), compression.to_json())?;
    evaluate_model(&student, &vocab, &test_set, &stem(test), name, ReportKind::Student, out)?;
    print!("{}", report::render_compression(&compression));
    write_log(
        out,
        &format!("distill-{name}"),
        s,
        &[
            ("teacher", shown(teacher_path)),
            ("vocab", shown(vocab_path)),
            ("train", shown(train)),
            ("validation", shown(validation)),
            ("test", shown(test)),
        ],
    )
}

#[allow(clippy::too_many_arguments)]
fn augment_cmd(
    s: &Settings,
    data: &Path,
    strategy: Strategy,
    thesaurus: Option<&Path>,
    checkpoint: Option<&Path>,
    vocab: Option<&Path>,
    translator: Option<&Path>,
    out: &Path,
) -> AppResult<()> {
    let examples = io::load_dataset(data)?;
    let policy = s.augment(strategy);
    let mut inputs = vec![("data", shown(data)), ("strategy", strategy.name().to_string())];
    let th = thesaurus.map(io::read_thesaurus).transpose()?;
    let tr = translator.map(io::read_translator).transpose()?;
    let emb = match (checkpoint, vocab) {
        (Some(c), Some(v)) => {
            let vocab = io::read_vocab(v)?;
            let model = io::read_model(c, &vocab)?;
            let nn = EmbeddingNeighbors::new(&model, &vocab)?;
            inputs.push(("checkpoint", shown(c)));
            inputs.push(("vocab", shown(v)));
            Some((vocab, nn))
        }
        _ => None,
    };
    if let Some(p) = thesaurus {
        inputs.push(("thesaurus", shown(p)));
    }
    if let Some(p) = translator {
        inputs.push(("translator", shown(p)));
    }
    let resources = Resources {
        thesaurus: th.as_ref(),
        embeddings: emb.as_ref().map(|(v, n)| (v, n)),
        translator: tr
            .as_ref()
            .map(|t| (t as &dyn augment::Translator, s.pivot_language.as_str(), s.source_language.as_str())),
    };
    let result = augment::augment_dataset(&examples, &policy, &resources, s.augment_copies)?;
    for f in &result.failures {
        eprintln!("warning: augmentation skipped: {f}");
    }
    io::write_dataset(&out.join("augmented.jsonl"), &result.examples)?;
    let summary = serde_json::json!({
        "input": examples.len(),
        "output": result.examples.len(),
        "added": result.added,
        "no_ops": result.no_ops,
        "skipped": result.skipped,
    });
    io::write_file(&out.join("augment.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    write_log(out, "augment", s, &inputs)?;
    println!(
        "{} examples in, {} out ({} added, {} unchanged, {} failed)",
        examples.len(),
        result.examples.len(),
        result.added,
        result.no_ops,
        result.skipped
    );
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out: &Path) -> AppResult<()> {
    let mut records = Vec::new();
    let mut compression = None;
    for dir in inputs {
        let entries = std::fs::read_dir(dir).map_err(|e| AppError::reading(dir, e))?;
        let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        for f in files {
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".report.json") {
                let rec: ReportRecord =
                    serde_json::from_str(&io::read_text(&f)?).map_err(|e| AppError::reading(&f, e))?;
                records.push(rec);
            } else if name == "compression.json" {
                let c: CompressionRecord =
                    serde_json::from_str(&io::read_text(&f)?).map_err(|e| AppError::reading(&f, e))?;
                compression = Some(c);
            }
        }
    }
    if records.is_empty() && compression.is_none() {
        return Err(AppError::Data("no *.report.json or compression.json files found".into()));
    }
    records.sort_by(|a, b| (a.kind, &a.name, &a.dataset).cmp(&(b.kind, &b.name, &b.dataset)));
    let text = report::render_report(&records, compression.as_ref());
    io::write_file(&out.join("report.txt"), &text)?;
    let json = serde_json::json!({ "reports": records, "compression": compression });
    io::write_file(&out.join("report.json"), serde_json::to_string_pretty(&json).expect("json") + "\n")?;
    print!("{text}");
    Ok(())
}

/// Reads `MSNT_SEED` from the process environment.
pub fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}
