//! Line-oriented `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! overrides, the `MSNT_SEED` environment variable, the `--seed` flag.

use std::collections::BTreeMap;
use std::str::FromStr;

use msnt_core::augment::{AugmentPolicy, Strategy};
use msnt_core::data::SyntheticConfig;
use msnt_core::distill::DistillConfig;
use msnt_core::finetune::FinetuneConfig;
use msnt_core::optim::AdamConfig;
use msnt_core::pretrain::{MaskingConfig, PretrainConfig};
use msnt_core::{EncoderConfig, Variant};

use crate::error::{AppError, AppResult};

pub const SEED_ENV: &str = "MSNT_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,

    pub num_train: usize,
    pub num_test: usize,
    pub noise: f64,
    pub sentences_per_document: usize,
    pub split_ratios: [f64; 3],

    pub vocab_size: usize,
    pub min_frequency: usize,

    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Zero means 4 × hidden.
    pub ff_size: usize,
    /// Zero means equal to hidden.
    pub embedding_size: usize,
    pub max_len: usize,
    pub dropout: f64,

    pub pretrain_steps: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub mask_rate: f64,
    pub pairs_per_sentence: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_delta: f64,

    pub temperature: f64,
    pub alpha: f64,

    /// Ensemble weights; empty means equal.
    pub weights: Vec<f64>,

    pub augment_probability: f64,
    pub augment_max_substitutions: usize,
    pub augment_copies: usize,
    pub pivot_language: String,
    pub source_language: String,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SyntheticConfig::default();
        let ft = FinetuneConfig::default();
        let pt = PretrainConfig::default();
        let dc = DistillConfig::default();
        let aug = AugmentPolicy::new(Strategy::Thesaurus);
        let enc = EncoderConfig::new(0, 64);
        Self {
            seed: synth.seed,
            num_train: synth.num_train,
            num_test: synth.num_test,
            noise: synth.noise,
            sentences_per_document: 5,
            split_ratios: msnt_core::data::DEFAULT_RATIOS,
            vocab_size: 2000,
            min_frequency: 1,
            layers: enc.num_layers,
            hidden: enc.hidden_size,
            heads: enc.num_heads,
            ff_size: 0,
            embedding_size: 0,
            max_len: enc.max_seq_len,
            dropout: enc.dropout_rate,
            pretrain_steps: pt.steps,
            pretrain_batch_size: pt.batch_size,
            pretrain_lr: pt.adam.learning_rate,
            mask_rate: pt.masking.mask_rate,
            pairs_per_sentence: pt.pairs_per_sentence,
            epochs: ft.epochs,
            batch_size: ft.batch_size,
            lr: ft.adam.learning_rate,
            patience: ft.patience,
            min_delta: ft.min_delta,
            temperature: dc.temperature,
            alpha: dc.alpha,
            weights: Vec::new(),
            augment_probability: aug.probability,
            augment_max_substitutions: aug.max_substitutions,
            augment_copies: 1,
            pivot_language: "es".into(),
            source_language: "en".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> AppResult<T> {
    value
        .parse()
        .map_err(|_| AppError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> AppResult<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl Settings {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "num_train" => self.num_train = parse(key, v)?,
            "num_test" => self.num_test = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "sentences_per_document" => self.sentences_per_document = parse(key, v)?,
            "split_ratios" => {
                let r = parse_list(key, v)?;
                self.split_ratios = r
                    .try_into()
                    .map_err(|_| AppError::Usage("split_ratios needs three comma-separated values".into()))?;
            }
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "min_frequency" => self.min_frequency = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "ff_size" => self.ff_size = parse(key, v)?,
            "embedding_size" => self.embedding_size = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, v)?,
            "pretrain_batch_size" => self.pretrain_batch_size = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "mask_rate" => self.mask_rate = parse(key, v)?,
            "pairs_per_sentence" => self.pairs_per_sentence = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "min_delta" => self.min_delta = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "weights" => self.weights = parse_list(key, v)?,
            "augment_probability" => self.augment_probability = parse(key, v)?,
            "augment_max_substitutions" => self.augment_max_substitutions = parse(key, v)?,
            "augment_copies" => self.augment_copies = parse(key, v)?,
            "pivot_language" => self.pivot_language = v.to_string(),
            "source_language" => self.source_language = v.to_string(),
            other => return Err(AppError::Usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> AppResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(key, value)
                .map_err(|e| AppError::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> AppResult<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("override {assignment:?} is not key=value")))?;
        self.set(key, value)
    }

    /// Reads the seed override from `value`, normally `MSNT_SEED`.
    pub fn apply_seed_env(&mut self, value: Option<&str>) -> AppResult<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| AppError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Every setting as `key = value` lines in key order.
    pub fn render(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let entries: BTreeMap<&str, String> = [
            ("seed", self.seed.to_string()),
            ("num_train", self.num_train.to_string()),
            ("num_test", self.num_test.to_string()),
            ("noise", self.noise.to_string()),
            ("sentences_per_document", self.sentences_per_document.to_string()),
            ("split_ratios", list(&self.split_ratios)),
            ("vocab_size", self.vocab_size.to_string()),
            ("min_frequency", self.min_frequency.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_size", self.ff_size.to_string()),
            ("embedding_size", self.embedding_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("pretrain_batch_size", self.pretrain_batch_size.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("mask_rate", self.mask_rate.to_string()),
            ("pairs_per_sentence", self.pairs_per_sentence.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("patience", self.patience.to_string()),
            ("min_delta", self.min_delta.to_string()),
            ("temperature", self.temperature.to_string()),
            ("alpha", self.alpha.to_string()),
            ("weights", list(&self.weights)),
            ("augment_probability", self.augment_probability.to_string()),
            ("augment_max_substitutions", self.augment_max_substitutions.to_string()),
            ("augment_copies", self.augment_copies.to_string()),
            ("pivot_language", self.pivot_language.clone()),
            ("source_language", self.source_language.clone()),
        ]
        .into_iter()
        .collect();
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_train: self.num_train,
            num_test: self.num_test,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn encoder(&self, vocab_size: usize, variant: Variant) -> EncoderConfig {
        let mut cfg = EncoderConfig::new(vocab_size, self.max_len)
            .with_hidden(self.hidden, self.heads)
            .with_layers(self.layers)
            .with_dropout(self.dropout)
            .for_variant(variant);
        if self.ff_size > 0 {
            cfg.ff_size = self.ff_size;
        }
        if self.embedding_size > 0 {
            cfg.embedding_size = self.embedding_size;
        }
        cfg
    }

    pub fn pretrain(&self, variant: Variant) -> PretrainConfig {
        let defaults = PretrainConfig::default();
        PretrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            max_len: self.max_len,
            adam: AdamConfig {
                learning_rate: self.pretrain_lr,
                ..defaults.adam
            },
            masking: MaskingConfig {
                mask_rate: self.mask_rate,
                mode: variant.masking_mode(),
                seed: self.seed,
                ..MaskingConfig::default()
            },
            objective: None,
            pairs_per_sentence: self.pairs_per_sentence,
            seed: self.seed,
        }
    }

    pub fn finetune(&self, max_len: usize) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.lr,
                ..AdamConfig::default()
            },
            patience: self.patience,
            min_delta: self.min_delta,
            max_len,
            seed: self.seed,
        }
    }

    pub fn distill(&self, max_len: usize) -> DistillConfig {
        DistillConfig {
            temperature: self.temperature,
            alpha: self.alpha,
            train: self.finetune(max_len),
        }
    }

    pub fn augment(&self, strategy: Strategy) -> AugmentPolicy {
        AugmentPolicy {
            strategy,
            probability: self.augment_probability,
            max_substitutions: self.augment_max_substitutions,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_and_env() {
        let mut s = Settings::default();
        s.apply_text("# desk run\nepochs = 2\nweights = 1, 2,3\n\nlr=0.001 # inline\n").unwrap();
        assert_eq!((s.epochs, s.weights.clone(), s.lr), (2, vec![1.0, 2.0, 3.0], 0.001));
        s.apply_override("epochs=3").unwrap();
        assert_eq!(s.epochs, 3);
        s.apply_seed_env(Some("77")).unwrap();
        assert_eq!(s.seed, 77);
        assert!(s.apply_seed_env(Some("x")).is_err());
        assert!(matches!(s.apply_text("bogus = 1"), Err(AppError::Usage(_))));
        assert!(s.apply_text("epochs").is_err());
        assert!(s.apply_override("epochs=two").is_err());
    }

    #[test]
    fn rendering_round_trips() {
        let mut s = Settings::default();
        s.apply_text("seed = 5\nweights = 0.5,0.25\npivot_language = de\n").unwrap();
        let mut t = Settings::default();
        t.apply_text(&s.render()).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn variant_configs() {
        let s = Settings::default();
        let enc = s.encoder(100, Variant::AlbertLike);
        assert!(enc.share_parameters);
        assert_eq!((enc.hidden_size, enc.ff_size, enc.max_seq_len), (64, 256, 64));
        assert_eq!(s.pretrain(Variant::RobertaLike).masking.mode, Variant::RobertaLike.masking_mode());
    }
}
