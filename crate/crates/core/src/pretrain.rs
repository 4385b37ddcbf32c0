//! Masked-language-model and sentence-pair instance generation, and the
//! pretraining loop shared by the three variants.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::model::{MaskingMode, PairObjective, SentimentModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Rng};
use crate::tape::Tape;
use crate::tokenizer::{TokenizedExample, Vocab, MASK, NUM_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
    pub keep_prob: f64,
    pub mode: MaskingMode,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            keep_prob: 0.1,
            mode: MaskingMode::Static,
            seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(config_err(format!("mask_rate must lie in (0, 1), got {}", self.mask_rate)));
        }
        let split = [self.mask_token_prob, self.random_token_prob, self.keep_prob];
        if split.iter().any(|p| !(0.0..=1.0).contains(p)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_err(format!("masking action split must be probabilities summing to 1, got {split:?}")));
        }
        Ok(())
    }

    /// Number of positions to mask among `maskable`: the rounded rate, but
    /// never fewer than one.
    pub fn mask_count(&self, maskable: usize) -> usize {
        let n = libm::round(self.mask_rate * maskable as f64 + 1e-9) as usize;
        n.clamp(1, maskable)
    }

    /// Masking stream for example `index` in `epoch`: dynamic mode keys on
    /// `seed ^ epoch`, static mode ignores the epoch.
    pub fn rng_for(&self, epoch: u64, index: usize) -> Rng {
        let base = match self.mode {
            MaskingMode::Static => self.seed,
            MaskingMode::Dynamic => self.seed ^ epoch,
        };
        rng::derive(base, &[0x3a5c, index as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmInstance {
    /// The example with corrupted token ids.
    pub example: TokenizedExample,
    /// Sorted masked positions.
    pub positions: Vec<usize>,
    /// Original ids at `positions`.
    pub targets: Vec<u32>,
    pub actions: Vec<MaskAction>,
}

/// Corrupts a sample of maskable positions. `None` signals that the
/// example has nothing to mask and should be skipped.
pub fn make_mlm_instance(
    example: &TokenizedExample,
    cfg: &MaskingConfig,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<Option<MlmInstance>> {
    cfg.validate()?;
    if vocab_size <= NUM_SPECIAL {
        return Err(config_err("vocabulary has no non-special tokens to sample"));
    }
    let mut candidates = example.maskable_positions();
    if candidates.is_empty() {
        return Ok(None);
    }
    let count = cfg.mask_count(candidates.len());
    // Partial Fisher-Yates: the first `count` entries are a uniform sample.
    for i in 0..count {
        let j = i + rng::below(rng, candidates.len() - i);
        candidates.swap(i, j);
    }
    let mut positions = candidates[..count].to_vec();
    positions.sort_unstable();

    let mut corrupted = example.clone();
    let mut targets = Vec::with_capacity(count);
    let mut actions = Vec::with_capacity(count);
    for &p in &positions {
        targets.push(example.token_ids[p]);
        let u = rng::unit(rng);
        let action = if u < cfg.mask_token_prob {
            MaskAction::Mask
        } else if u < cfg.mask_token_prob + cfg.random_token_prob {
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        match action {
            MaskAction::Mask => corrupted.token_ids[p] = MASK,
            MaskAction::Random => {
                corrupted.token_ids[p] = (NUM_SPECIAL + rng::below(rng, vocab_size - NUM_SPECIAL)) as u32;
            }
            MaskAction::Keep => {}
        }
        actions.push(action);
    }
    Ok(Some(MlmInstance {
        example: corrupted,
        positions,
        targets,
        actions,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairInstance {
    pub text_a: String,
    pub text_b: String,
    /// Source document of each sentence.
    pub documents: (usize, usize),
    /// True for a genuine consecutive pair in the original order.
    pub is_positive: bool,
    pub objective: PairObjective,
}

impl PairInstance {
    /// Pair-head target: 1 for positive pairs.
    pub fn target(&self) -> usize {
        usize::from(self.is_positive)
    }
}

fn check_documents(docs: &[Vec<String>]) -> Result<()> {
    if docs.len() < 2 || docs.iter().any(|d| d.len() < 2) {
        return Err(Error::Data(
            "pair generation needs at least two documents of at least two sentences".into(),
        ));
    }
    Ok(())
}

/// Draws `count` sentence pairs, half positive in expectation. NSP
/// negatives take the second sentence from another document; SOP
/// negatives swap the consecutive pair.
pub fn make_pair_batch(
    docs: &[Vec<String>],
    objective: PairObjective,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<PairInstance>> {
    check_documents(docs)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng::below(rng, docs.len());
        let i = rng::below(rng, docs[d].len() - 1);
        let (a, b) = (&docs[d][i], &docs[d][i + 1]);
        let positive = rng::below(rng, 2) == 0;
        let inst = if positive {
            PairInstance {
                text_a: a.clone(),
                text_b: b.clone(),
                documents: (d, d),
                is_positive: true,
                objective,
            }
        } else {
            match objective {
                PairObjective::Sop => PairInstance {
                    text_a: b.clone(),
                    text_b: a.clone(),
                    documents: (d, d),
                    is_positive: false,
                    objective,
                },
                PairObjective::Nsp => {
                    let other = (d + 1 + rng::below(rng, docs.len() - 1)) % docs.len();
                    let j = rng::below(rng, docs[other].len());
                    PairInstance {
                        text_a: a.clone(),
                        text_b: docs[other][j].clone(),
                        documents: (d, other),
                        is_positive: false,
                        objective,
                    }
                }
            }
        };
        out.push(inst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub adam: AdamConfig,
    pub masking: MaskingConfig,
    /// Pair objective the instances are generated for; `None` uses the
    /// variant's own.
    pub objective: Option<PairObjective>,
    /// Pair instances drawn per corpus sentence.
    pub pairs_per_sentence: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            max_len: 64,
            adam: AdamConfig::with_lr(1e-3),
            masking: MaskingConfig::default(),
            objective: None,
            pairs_per_sentence: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainTrace {
    /// Mean joint loss per step.
    pub loss: Vec<f64>,
    /// Mean MLM loss per step.
    pub mlm_loss: Vec<f64>,
    /// Mean pair loss per step; empty for MLM-only training.
    pub pair_loss: Vec<f64>,
}

/// A training example before masking.
#[derive(Debug, Clone)]
struct Source {
    example: TokenizedExample,
    pair_target: Option<usize>,
}

fn build_sources(model: &SentimentModel, vocab: &Vocab, docs: &[Vec<String>], cfg: &PretrainConfig) -> Result<Vec<Source>> {
    let variant = model.variant();
    let objective = match (cfg.objective, variant.pair_objective()) {
        (None, o) => o,
        (Some(o), Some(v)) if o == v => Some(o),
        (Some(o), _) => {
            return Err(config_err(format!(
                "variant {} cannot pretrain with the {o:?} objective",
                variant.name()
            )))
        }
    };
    let max_len = cfg.max_len.min(model.config().max_seq_len);
    match objective {
        None => docs
            .iter()
            .flatten()
            .map(|s| {
                Ok(Source {
                    example: vocab.encode_single(s, max_len)?,
                    pair_target: None,
                })
            })
            .collect(),
        Some(objective) => {
            let sentences: usize = docs.iter().map(Vec::len).sum();
            let mut r = rng::derive(cfg.seed, &[0x9a17]);
            make_pair_batch(docs, objective, sentences * cfg.pairs_per_sentence.max(1), &mut r)?
                .into_iter()
                .map(|p| {
                    Ok(Source {
                        example: vocab.encode_pair(&p.text_a, &p.text_b, max_len)?,
                        pair_target: Some(p.target()),
                    })
                })
                .collect()
        }
    }
}

/// Per-example loss terms on a tape: `(mlm, pair)`.
fn example_losses<'p>(
    model: &'p SentimentModel,
    tape: &mut Tape<'p>,
    inst: &MlmInstance,
    pair_target: Option<usize>,
    dropout: Option<&mut Rng>,
) -> Result<(crate::tape::Var, Option<crate::tape::Var>)> {
    let vars = model.bind(tape);
    let enc = model.encode_on(tape, &vars, &inst.example, dropout, true)?;
    let logits = model.mlm_head_on(tape, &vars, &enc, &inst.positions)?;
    let targets: Vec<usize> = inst.targets.iter().map(|&t| t as usize).collect();
    let mlm = tape.cross_entropy(logits, &targets)?;
    let pair = match pair_target {
        Some(t) => {
            let pooled = model.pool_on(tape, &vars, &enc)?;
            let logits = model.pair_head_on(tape, &vars, pooled)?;
            let logits = tape.reshape(logits, &[1, 2])?;
            Some(tape.cross_entropy(logits, &[t])?)
        }
        None => None,
    };
    Ok((mlm, pair))
}

/// Mean MLM loss of `model` over masked versions of `texts` without
/// updating anything.
pub fn mlm_loss(model: &SentimentModel, vocab: &Vocab, texts: &[String], masking: &MaskingConfig, max_len: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for (i, text) in texts.iter().enumerate() {
        let ex = vocab.encode_single(text, max_len)?;
        let Some(inst) = make_mlm_instance(&ex, masking, model.config().vocab_size, &mut masking.rng_for(0, i))? else {
            continue;
        };
        let mut tape = Tape::new();
        let (mlm, _) = example_losses(model, &mut tape, &inst, None, None)?;
        total += tape.value(mlm)[0];
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("no maskable text".into()));
    }
    Ok(total / n as f64)
}

/// Runs `cfg.steps` optimizer steps. Robertalike trains on single
/// sentences with MLM only; the other variants on sentence pairs with MLM
/// plus their pair objective, each term weighted 1. An epoch is one pass
/// over the shuffled instance pool.
pub fn pretrain(model: &mut SentimentModel, vocab: &Vocab, docs: &[Vec<String>], cfg: &PretrainConfig) -> Result<PretrainTrace> {
    cfg.masking.validate()?;
    if cfg.batch_size == 0 {
        return Err(config_err("batch_size must be at least 1"));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(config_err("model and vocabulary sizes differ"));
    }
    let sources = build_sources(model, vocab, docs, cfg)?;
    if sources.is_empty() {
        return Err(Error::Data("empty pretraining corpus".into()));
    }
    let mut masking = cfg.masking;
    masking.mode = model.variant().masking_mode();
    let mut adam = Adam::new(model.params(), cfg.adam)?;
    let mut trace = PretrainTrace::default();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        let mut dropout = rng::derive(cfg.seed, &[0xd50, step as u64]);
        let (mut loss_sum, mut mlm_sum, mut pair_sum, mut used) = (0.0, 0.0, 0.0, 0usize);
        while used < cfg.batch_size {
            if cursor == order.len() {
                if !order.is_empty() {
                    epoch += 1;
                }
                order = (0..sources.len()).collect();
                rng::shuffle(&mut rng::derive(cfg.seed, &[0x0e, epoch]), &mut order);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let src = &sources[idx];
            let Some(inst) =
                make_mlm_instance(&src.example, &masking, model.config().vocab_size, &mut masking.rng_for(epoch, idx))?
            else {
                if sources.len() == 1 {
                    return Err(Error::Data("corpus has no maskable tokens".into()));
                }
                continue;
            };
            let grads = {
                let mut tape = Tape::new();
                let (mlm, pair) = example_losses(model, &mut tape, &inst, src.pair_target, Some(&mut dropout))?;
                mlm_sum += tape.value(mlm)[0];
                let loss = match pair {
                    Some(p) => {
                        pair_sum += tape.value(p)[0];
                        tape.add(mlm, p)?
                    }
                    None => mlm,
                };
                loss_sum += tape.value(loss)[0];
                tape.backward(loss)?
            };
            model.params_mut().accumulate(&grads);
            used += 1;
        }
        adam.step(model.params_mut(), 1.0 / used as f64)?;
        let b = used as f64;
        trace.loss.push(loss_sum / b);
        trace.mlm_loss.push(mlm_sum / b);
        if sources[0].pair_target.is_some() {
            trace.pair_loss.push(pair_sum / b);
        }
    }
    Ok(trace)
}
