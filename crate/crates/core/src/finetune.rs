//! Supervised fine-tuning with validation macro-F1 early stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::label::{LabeledExample, Sentiment, NUM_CLASSES};
use crate::metrics::{compute_metrics, EvalReport};
use crate::model::SentimentModel;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tokenizer::{TokenizedExample, Vocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub min_delta: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 16,
            adam: AdamConfig::default(),
            patience: 3,
            min_delta: 1e-4,
            max_len: 64,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(config_err("patience must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(config_err("min_delta must be non-negative"));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best score; stops after `patience` consecutive evaluations
/// that fail to beat it by at least `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<(usize, f64)>,
    stale: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: None,
            stale: 0,
            seen: 0,
        }
    }

    /// Records the next evaluation (epochs are numbered from 1).
    pub fn observe(&mut self, score: f64) -> StopDecision {
        self.seen += 1;
        let improved = match self.best {
            None => true,
            Some((_, best)) => score >= best + self.min_delta,
        };
        if improved {
            self.best = Some((self.seen, score));
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    /// `(epoch, score)` of the best evaluation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_early: bool,
}

/// Epoch loop shared by fine-tuning and distillation. `loss` builds the
/// loss of training example `i` on a fresh tape; `score` evaluates the
/// model after each epoch. On return `model` holds the best-scoring
/// parameters.
pub(crate) fn train_with_early_stopping<L, S>(
    model: &mut SentimentModel,
    n_train: usize,
    cfg: &FinetuneConfig,
    mut loss: L,
    mut score: S,
) -> Result<TrainOutcome>
where
    L: for<'p> FnMut(&'p SentimentModel, &mut Tape<'p>, usize, &mut Rng) -> Result<Var>,
    S: FnMut(usize, &SentimentModel) -> Result<f64>,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    let mut adam = Adam::new(model.params(), cfg.adam)?;
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        rng::shuffle(&mut rng::derive(cfg.seed, &[0xf1, epoch as u64]), &mut order);
        let mut dropout = rng::derive(cfg.seed, &[0xd0, epoch as u64]);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let grads = {
                    let mut tape = Tape::new();
                    let l = loss(model, &mut tape, i, &mut dropout)?;
                    total += tape.value(l)[0];
                    tape.backward(l)?
                };
                model.params_mut().accumulate(&grads);
            }
            adam.step(model.params_mut(), 1.0 / batch.len() as f64)?;
        }
        let f1 = score(epoch, model)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / n_train as f64,
            valid_macro_f1: f1,
        });
        match stopper.observe(f1) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    *model = best;
    let (best_epoch, best_score) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_score,
        stopped_early,
    })
}

/// Tokenizes labeled examples, checking the model and vocabulary agree.
pub fn encode_examples(
    model: &SentimentModel,
    vocab: &Vocab,
    examples: &[LabeledExample],
    max_len: usize,
) -> Result<Vec<TokenizedExample>> {
    if vocab.len() != model.config().vocab_size {
        return Err(config_err(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let max_len = max_len.min(model.config().max_seq_len);
    examples.iter().map(|ex| vocab.encode_single(&ex.text, max_len)).collect()
}

/// Position of `label` in the model's output order.
pub fn target_index(model: &SentimentModel, label: Sentiment) -> usize {
    model
        .label_order
        .iter()
        .position(|&l| l == label)
        .expect("label order is a permutation of the classes")
}

/// Cross-entropy of the classification head on one example.
pub fn classification_loss_on<'p>(
    model: &'p SentimentModel,
    tape: &mut Tape<'p>,
    ex: &TokenizedExample,
    label: Sentiment,
    dropout: Option<&mut Rng>,
) -> Result<Var> {
    let vars = model.bind(tape);
    let logits = model.classify_on(tape, &vars, ex, dropout)?;
    let logits = tape.reshape(logits, &[1, NUM_CLASSES])?;
    tape.cross_entropy(logits, &[target_index(model, label)])
}

/// Inference loss of one example.
pub fn example_loss(model: &SentimentModel, ex: &TokenizedExample, label: Sentiment) -> Result<f64> {
    let mut tape = Tape::new();
    let l = classification_loss_on(model, &mut tape, ex, label, None)?;
    Ok(tape.value(l)[0])
}

/// Softmax probabilities per example, in the model's label order.
pub fn predict_proba(model: &SentimentModel, encoded: &[TokenizedExample]) -> Result<Vec<[f64; NUM_CLASSES]>> {
    encoded.iter().map(|ex| model.predict_proba(ex)).collect()
}

pub fn predict(model: &SentimentModel, encoded: &[TokenizedExample]) -> Result<Vec<Sentiment>> {
    encoded.iter().map(|ex| model.predict(ex)).collect()
}

/// Evaluates `model` on already-encoded examples.
pub fn evaluate_encoded(
    name: &str,
    model: &SentimentModel,
    encoded: &[TokenizedExample],
    truth: &[Sentiment],
) -> Result<EvalReport> {
    let predicted = predict(model, encoded)?;
    compute_metrics(name, truth, &predicted)
}

pub fn evaluate(
    name: &str,
    model: &SentimentModel,
    vocab: &Vocab,
    examples: &[LabeledExample],
    max_len: usize,
) -> Result<EvalReport> {
    let encoded = encode_examples(model, vocab, examples, max_len)?;
    let truth: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    evaluate_encoded(name, model, &encoded, &truth)
}

fn require_nonempty(train: &[LabeledExample], valid: &[LabeledExample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    Ok(())
}

/// Fine-tunes with validation macro-F1 as the stopping metric.
pub fn finetune(
    model: &mut SentimentModel,
    vocab: &Vocab,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &FinetuneConfig,
) -> Result<TrainOutcome> {
    require_nonempty(train, valid)?;
    let valid_x = encode_examples(model, vocab, valid, cfg.max_len)?;
    let valid_y: Vec<Sentiment> = valid.iter().map(|e| e.label).collect();
    finetune_with_scorer(model, vocab, train, cfg, |_, m| {
        Ok(evaluate_encoded("validation", m, &valid_x, &valid_y)?.macro_f1())
    })
}

/// Fine-tunes with a caller-supplied per-epoch validation score.
pub fn finetune_with_scorer<S>(
    model: &mut SentimentModel,
    vocab: &Vocab,
    train: &[LabeledExample],
    cfg: &FinetuneConfig,
    scorer: S,
) -> Result<TrainOutcome>
where
    S: FnMut(usize, &SentimentModel) -> Result<f64>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let train_x = encode_examples(model, vocab, train, cfg.max_len)?;
    let labels: Vec<Sentiment> = train.iter().map(|e| e.label).collect();
    train_with_early_stopping(
        model,
        train_x.len(),
        cfg,
        |m, tape, i, r| classification_loss_on(m, tape, &train_x[i], labels[i], Some(r)),
        scorer,
    )
}

/// One JSON object per line: `{"epoch":..,"train_loss":..,"valid_macro_f1":..}`.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!(
            "{{\"epoch\":{},\"train_loss\":{:?},\"valid_macro_f1\":{:?}}}\n",
            r.epoch, r.train_loss, r.valid_macro_f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, Variant};
    use alloc::vec;

    #[test]
    fn stopping_rule_trace() {
        let mut s = EarlyStopping::new(3, 1e-4);
        let decisions: Vec<StopDecision> = [0.5, 0.9, 0.9, 0.9, 0.9].iter().map(|&f| s.observe(f)).collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best(), Some((2, 0.9)));
    }

    #[test]
    fn improvement_below_min_delta_is_stale() {
        let mut s = EarlyStopping::new(2, 0.01);
        assert_eq!(s.observe(0.5), StopDecision::Improved);
        assert_eq!(s.observe(0.505), StopDecision::Continue);
        assert_eq!(s.observe(0.51), StopDecision::Improved);
    }

    const WORDS: [&str; 3] = ["awful", "meh", "superb"];
    const FILLER: [&str; 6] = ["the", "api", "build", "docs", "cli", "parser"];

    fn toy_data(n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let c = i % 3;
                let mut words: Vec<&str> = (0..3).map(|_| FILLER[rng::below(&mut r, FILLER.len())]).collect();
                words.insert(rng::below(&mut r, 4), WORDS[c]);
                LabeledExample::new(i, words.join(" "), Sentiment::ALL[c])
            })
            .collect()
    }

    fn toy_setup() -> (Vocab, SentimentModel) {
        let mut corpus: Vec<&str> = WORDS.to_vec();
        corpus.extend(FILLER);
        let vocab = Vocab::build(&[corpus.join(" ")], 100, 1).unwrap();
        let cfg = EncoderConfig::new(vocab.len(), 16).with_hidden(16, 2);
        (vocab.clone(), SentimentModel::new(cfg, Variant::BertLike, 2).unwrap())
    }

    fn small_cfg(epochs: usize) -> FinetuneConfig {
        FinetuneConfig {
            epochs,
            batch_size: 4,
            adam: AdamConfig::with_lr(2e-3),
            max_len: 16,
            seed: 5,
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (vocab, mut model) = toy_setup();
        let train = toy_data(300, 1);
        let valid = toy_data(30, 2);
        let out = finetune(&mut model, &vocab, &train, &valid, &small_cfg(2)).unwrap();
        assert_eq!(out.history.len(), 2);
        let report = evaluate("train", &model, &vocab, &train, 16).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for r in &out.history {
            assert!(out.best_score >= r.valid_macro_f1);
        }
    }

    #[test]
    fn scripted_scores_select_epoch_two() {
        let (vocab, mut model) = toy_setup();
        let train = toy_data(12, 3);
        let script = [0.5, 0.9, 0.9, 0.9, 0.9, 0.95];
        let mut snapshots = Vec::new();
        let out = finetune_with_scorer(&mut model, &vocab, &train, &small_cfg(6), |epoch, m| {
            snapshots.push(m.clone());
            Ok(script[epoch - 1])
        })
        .unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 2);
        assert_eq!(model, snapshots[1]);
        assert_ne!(model, snapshots[4]);
    }

    #[test]
    fn invalid_configs() {
        let (vocab, mut model) = toy_setup();
        let train = toy_data(6, 1);
        for cfg in [
            FinetuneConfig { epochs: 0, ..small_cfg(1) },
            FinetuneConfig { patience: 0, ..small_cfg(1) },
            FinetuneConfig { batch_size: 0, ..small_cfg(1) },
        ] {
            assert!(matches!(finetune(&mut model, &vocab, &train, &train, &cfg), Err(Error::Config(_))));
        }
        assert!(matches!(finetune(&mut model, &vocab, &[], &train, &small_cfg(1)), Err(Error::Data(_))));
        assert!(matches!(finetune(&mut model, &vocab, &train, &[], &small_cfg(1)), Err(Error::Data(_))));
    }

    #[test]
    fn single_step_reduces_example_loss() {
        let (vocab, _) = toy_setup();
        let data = toy_data(20, 9);
        for (k, ex) in data.iter().enumerate() {
            let cfg = EncoderConfig::new(vocab.len(), 16).with_hidden(16, 2).with_dropout(0.0).for_variant(Variant::ALL[k % 3]);
            let mut model = SentimentModel::new(cfg, Variant::ALL[k % 3], 100 + k as u64).unwrap();
            let encoded = vocab.encode_single(&ex.text, 16).unwrap();
            let before = example_loss(&model, &encoded, ex.label).unwrap();
            let run_cfg = FinetuneConfig {
                epochs: 1,
                batch_size: 1,
                adam: AdamConfig::with_lr(1e-3),
                max_len: 16,
                ..FinetuneConfig::default()
            };
            finetune_with_scorer(&mut model, &vocab, core::slice::from_ref(ex), &run_cfg, |_, _| Ok(0.0)).unwrap();
            let after = example_loss(&model, &encoded, ex.label).unwrap();
            assert!(after < before, "case {k}: {before} -> {after}");
        }
    }

    #[test]
    fn finetuning_is_reproducible() {
        let (vocab, model) = toy_setup();
        let train = toy_data(30, 4);
        let valid = toy_data(9, 5);
        let run = || {
            let mut m = model.clone();
            let out = finetune(&mut m, &vocab, &train, &valid, &small_cfg(2)).unwrap();
            (m, out)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn probabilities_are_normalized_and_deterministic() {
        let (vocab, model) = toy_setup();
        let data = toy_data(10, 6);
        let encoded = encode_examples(&model, &vocab, &data, 16).unwrap();
        let a = predict_proba(&model, &encoded).unwrap();
        assert_eq!(a, predict_proba(&model, &encoded).unwrap());
        for p in a {
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn history_lines() {
        let h = [EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            valid_macro_f1: 0.25,
        }];
        assert_eq!(history_jsonl(&h), "{\"epoch\":1,\"train_loss\":0.5,\"valid_macro_f1\":0.25}\n");
    }
}
