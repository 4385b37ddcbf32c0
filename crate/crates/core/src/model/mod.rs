//! Mini transformer encoder with pooler, sentiment head and the two
//! pretraining heads, in three variant recipes.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, decode_checkpoint_for, encode_checkpoint, FORMAT_VERSION, MAGIC};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{config_err, contract_err, Error, Result};
use crate::label::{Sentiment, NUM_CLASSES};
use crate::params::{ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tape::{softmax_slice, Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::TokenizedExample;

/// Logit added at padded keys before the attention softmax.
pub const ATTENTION_MASK_VALUE: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairObjective {
    /// Next sentence prediction: negatives pair a sentence with one from
    /// another document.
    Nsp,
    /// Sentence order prediction: negatives swap two consecutive sentences.
    Sop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskingMode {
    Static,
    Dynamic,
}

/// The three encoder recipes. Each fixes its pair objective, masking mode
/// and whether encoder blocks share weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    BertLike,
    AlbertLike,
    RobertaLike,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::BertLike, Variant::AlbertLike, Variant::RobertaLike];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BertLike => "bertlike",
            Variant::AlbertLike => "albertlike",
            Variant::RobertaLike => "robertalike",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn pair_objective(self) -> Option<PairObjective> {
        match self {
            Variant::BertLike => Some(PairObjective::Nsp),
            Variant::AlbertLike => Some(PairObjective::Sop),
            Variant::RobertaLike => None,
        }
    }

    pub fn masking_mode(self) -> MaskingMode {
        match self {
            Variant::RobertaLike => MaskingMode::Dynamic,
            _ => MaskingMode::Static,
        }
    }

    pub fn shares_parameters(self) -> bool {
        self == Variant::AlbertLike
    }

    fn tag(self) -> u8 {
        match self {
            Variant::BertLike => 0,
            Variant::AlbertLike => 1,
            Variant::RobertaLike => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub share_parameters: bool,
    /// Token embedding width; a projection to `hidden_size` is added when
    /// it differs.
    pub embedding_size: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, hidden 64, 4 heads, feed-forward 4H.
    pub fn new(vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 4,
            ff_size: 256,
            vocab_size,
            max_seq_len,
            dropout_rate: 0.1,
            share_parameters: false,
            embedding_size: 64,
        }
    }

    /// Sets hidden, embedding and feed-forward (4H) sizes together.
    pub fn with_hidden(mut self, hidden: usize, heads: usize) -> Self {
        self.hidden_size = hidden;
        self.embedding_size = hidden;
        self.num_heads = heads;
        self.ff_size = 4 * hidden;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.num_layers = layers;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    /// Applies the variant's parameter-sharing rule.
    pub fn for_variant(mut self, variant: Variant) -> Self {
        self.share_parameters = variant.shares_parameters();
        self
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.num_layers,
            self.hidden_size,
            self.num_heads,
            self.ff_size,
            self.vocab_size,
            self.max_seq_len,
            self.embedding_size,
        ];
        if extents.contains(&0) {
            return Err(config_err("all encoder extents must be positive"));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(config_err(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config_err("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    attn_norm: Norm,
    ff_in: Linear,
    ff_out: Linear,
    ff_norm: Norm,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    token: ParamId,
    position: ParamId,
    segment: ParamId,
    emb_norm: Norm,
    emb_proj: Option<Linear>,
    blocks: Vec<Block>,
    layer_block: Vec<usize>,
    pooler: Linear,
    classifier: Linear,
    mlm_dense: Linear,
    mlm_norm: Norm,
    mlm_bias: ParamId,
    pair: Linear,
}

enum Init<'r> {
    Random(&'r mut Rng),
    Zeros,
}

struct Builder<'r> {
    store: ParamStore,
    init: Init<'r>,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, shape: &[usize]) -> ParamId {
        let mut t = Tensor::zeros(shape);
        if let Init::Random(rng) = &mut self.init {
            t.data_mut().iter_mut().for_each(|v| *v = rng::truncated_normal(rng, INIT_STD));
        }
        self.store.register(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.register(name, Tensor::zeros(shape))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: self.weight(format!("{name}.weight"), &[fan_in, fan_out]),
            bias: self.zeros(format!("{name}.bias"), &[fan_out]),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gamma: self.store.register(format!("{name}.gamma"), Tensor::full(&[width], 1.0)),
            beta: self.zeros(format!("{name}.beta"), &[width]),
        }
    }
}

fn build_layout(config: &EncoderConfig, init: Init<'_>) -> (ParamStore, Layout) {
    let (h, e, v) = (config.hidden_size, config.embedding_size, config.vocab_size);
    let mut b = Builder {
        store: ParamStore::new(),
        init,
    };
    let token = b.weight("embeddings.token".into(), &[v, e]);
    let position = b.weight("embeddings.position".into(), &[config.max_seq_len, e]);
    let segment = b.weight("embeddings.segment".into(), &[2, e]);
    let emb_norm = b.norm("embeddings.norm", e);
    let emb_proj = (e != h).then(|| b.linear("embeddings.projection", e, h));
    let unique = if config.share_parameters { 1 } else { config.num_layers };
    let blocks = (0..unique)
        .map(|i| {
            let p = format!("encoder.block{i}");
            Block {
                query: b.linear(&format!("{p}.attention.query"), h, h),
                key: b.linear(&format!("{p}.attention.key"), h, h),
                value: b.linear(&format!("{p}.attention.value"), h, h),
                output: b.linear(&format!("{p}.attention.output"), h, h),
                attn_norm: b.norm(&format!("{p}.attention.norm"), h),
                ff_in: b.linear(&format!("{p}.ff.input"), h, config.ff_size),
                ff_out: b.linear(&format!("{p}.ff.output"), config.ff_size, h),
                ff_norm: b.norm(&format!("{p}.ff.norm"), h),
            }
        })
        .collect();
    let layer_block = (0..config.num_layers)
        .map(|l| if config.share_parameters { 0 } else { l })
        .collect();
    let pooler = b.linear("pooler", h, h);
    let classifier = b.linear("classifier", h, NUM_CLASSES);
    let mlm_dense = b.linear("mlm.dense", h, e);
    let mlm_norm = b.norm("mlm.norm", e);
    let mlm_bias = b.zeros("mlm.output_bias".into(), &[v]);
    let pair = b.linear("pair", h, 2);
    let layout = Layout {
        token,
        position,
        segment,
        emb_norm,
        emb_proj,
        blocks,
        layer_block,
        pooler,
        classifier,
        mlm_dense,
        mlm_norm,
        mlm_bias,
        pair,
    };
    (b.store, layout)
}

/// Encoder activations for one example.
pub struct Encoded {
    /// `[len×H]` final hidden states.
    pub hidden: Var,
    /// Attention probabilities per layer, per head, each `[len×len]`.
    pub attention: Vec<Vec<Var>>,
    /// Sequence length actually run.
    pub len: usize,
}

/// An encoder plus its heads. The sentiment head's output order is
/// `label_order`, which [`SentimentModel::new`] sets to the canonical
/// `[negative, neutral, positive]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentModel {
    config: EncoderConfig,
    variant: Variant,
    pub label_order: [Sentiment; NUM_CLASSES],
    params: ParamStore,
    layout: Layout,
}

impl SentimentModel {
    /// Random initialization: truncated-normal weights (std 0.02), zero
    /// biases, unit layer-norm gains. Deterministic per seed.
    pub fn new(config: EncoderConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.share_parameters != variant.shares_parameters() {
            return Err(config_err(format!(
                "variant {variant} requires share_parameters = {}",
                variant.shares_parameters()
            )));
        }
        let mut rng = rng::seeded(seed);
        let (params, layout) = build_layout(&config, Init::Random(&mut rng));
        Ok(Self {
            config,
            variant,
            label_order: Sentiment::ALL,
            params,
            layout,
        })
    }

    fn zeroed(config: EncoderConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build_layout(&config, Init::Zeros);
        Ok(Self {
            config,
            variant,
            label_order: Sentiment::ALL,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// The `[vocab×E]` token embedding table.
    pub fn token_embeddings(&self) -> &Tensor {
        self.params.get(self.layout.token)
    }

    pub fn token_embeddings_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.layout.token)
    }

    /// Unique trainable scalars, including pretraining heads.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Unique scalars inside encoder blocks.
    pub fn encoder_block_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(_, _, t)| t.numel())
            .sum()
    }

    /// Scalars used for sentiment inference: everything except the MLM
    /// and sentence-pair heads.
    pub fn inference_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, n, _)| !n.starts_with("mlm.") && !n.starts_with("pair."))
            .map(|(_, _, t)| t.numel())
            .sum()
    }

    /// Freezes every parameter (no gradients will be tracked).
    pub fn freeze(&mut self) {
        self.params.set_requires_grad(false);
    }

    /// Copies every parameter whose name and shape exist in `other`;
    /// returns how many were copied.
    pub fn copy_matching_from(&mut self, other: &SentimentModel) -> usize {
        let mut copied = 0;
        let ids: Vec<ParamId> = self.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let name = String::from(self.params.name(id));
            if let Some(src) = other.params.find(&name) {
                let src = other.params.get(src);
                let dst = self.params.get_mut(id);
                if src.shape() == dst.shape() {
                    dst.data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Copies block `from_block` of `other` into block `to_block` of self.
    pub fn copy_block_from(&mut self, other: &SentimentModel, from_block: usize, to_block: usize) -> Result<()> {
        let src = format!("encoder.block{from_block}.");
        let dst = format!("encoder.block{to_block}.");
        let mut copied = 0;
        let names: Vec<(ParamId, String)> = self
            .params
            .iter()
            .filter(|(_, n, _)| n.starts_with(&dst))
            .map(|(id, n, _)| (id, String::from(n)))
            .collect();
        for (id, name) in names {
            let other_name = format!("{src}{}", &name[dst.len()..]);
            let sid = other
                .params
                .find(&other_name)
                .ok_or_else(|| contract_err(format!("source model lacks {other_name}")))?;
            let s = other.params.get(sid);
            let d = self.params.get_mut(id);
            if s.shape() != d.shape() {
                return Err(Error::Shape {
                    op: "copy_block",
                    left: d.shape().to_vec(),
                    right: s.shape().to_vec(),
                });
            }
            d.data_mut().copy_from_slice(s.data());
            copied += 1;
        }
        if copied == 0 {
            return Err(contract_err(format!("no block {to_block} in target model")));
        }
        Ok(())
    }

    /// Binds all parameters to a tape; pass the result to the `*_on`
    /// methods.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> Vec<Var> {
        self.params.bind(tape)
    }

    fn check_example(&self, ex: &TokenizedExample) -> Result<()> {
        if ex.len() > self.config.max_seq_len {
            return Err(contract_err(format!(
                "sequence of length {} exceeds max_seq_len {}",
                ex.len(),
                self.config.max_seq_len
            )));
        }
        if ex.is_empty() {
            return Err(contract_err("empty sequence"));
        }
        if let Some(&bad) = ex.token_ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad as usize,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn linear_on<'p>(&self, tape: &mut Tape<'p>, vars: &[Var], x: Var, l: Linear) -> Result<Var> {
        let y = tape.matmul(x, vars[l.weight.0])?;
        tape.add_row(y, vars[l.bias.0])
    }

    fn norm_on<'p>(&self, tape: &mut Tape<'p>, vars: &[Var], x: Var, n: Norm) -> Result<Var> {
        tape.layernorm(x, vars[n.gamma.0], vars[n.beta.0], LAYER_NORM_EPS)
    }

    /// Runs the encoder. With `trim` set, trailing padding is dropped
    /// before the forward pass; masked keys are inert, so real positions
    /// come out identical either way.
    pub fn encode_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &[Var],
        ex: &TokenizedExample,
        mut rng: Option<&mut Rng>,
        trim: bool,
    ) -> Result<Encoded> {
        self.check_example(ex)?;
        let len = if trim { ex.real_len().max(1) } else { ex.len() };
        let cfg = &self.config;
        let ids: Vec<usize> = ex.token_ids[..len].iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..len).collect();
        let segments: Vec<usize> = ex.segment_ids[..len].iter().map(|&s| usize::from(s.min(1))).collect();

        let tok = tape.embedding(vars[self.layout.token.0], &ids)?;
        let pos = tape.embedding(vars[self.layout.position.0], &positions)?;
        let seg = tape.embedding(vars[self.layout.segment.0], &segments)?;
        let sum = tape.add(tok, pos)?;
        let sum = tape.add(sum, seg)?;
        let mut h = self.norm_on(tape, vars, sum, self.layout.emb_norm)?;
        if let Some(proj) = self.layout.emb_proj {
            h = self.linear_on(tape, vars, h, proj)?;
        }
        h = tape.dropout(h, cfg.dropout_rate, rng.as_deref_mut())?;

        let mask: Vec<f64> = ex.attention_mask[..len]
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { ATTENTION_MASK_VALUE })
            .collect();
        let mask = tape.constant(&[len], mask)?;
        let dh = cfg.head_size();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut attention = Vec::with_capacity(cfg.num_layers);
        for layer in 0..cfg.num_layers {
            let block = &self.layout.blocks[self.layout.layer_block[layer]];
            let q = self.linear_on(tape, vars, h, block.query)?;
            let k = self.linear_on(tape, vars, h, block.key)?;
            let v = self.linear_on(tape, vars, h, block.value)?;
            let mut heads = Vec::with_capacity(cfg.num_heads);
            let mut probs = Vec::with_capacity(cfg.num_heads);
            for head in 0..cfg.num_heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.add_row(scores, mask)?;
                let p = tape.softmax(scores, 1)?;
                probs.push(p);
                let p = tape.dropout(p, cfg.dropout_rate, rng.as_deref_mut())?;
                heads.push(tape.matmul(p, vh)?);
            }
            attention.push(probs);
            let ctx = tape.concat_cols(&heads)?;
            let attn = self.linear_on(tape, vars, ctx, block.output)?;
            let attn = tape.dropout(attn, cfg.dropout_rate, rng.as_deref_mut())?;
            let res = tape.add(h, attn)?;
            h = self.norm_on(tape, vars, res, block.attn_norm)?;

            let ff = self.linear_on(tape, vars, h, block.ff_in)?;
            let ff = tape.gelu(ff);
            let ff = self.linear_on(tape, vars, ff, block.ff_out)?;
            let ff = tape.dropout(ff, cfg.dropout_rate, rng.as_deref_mut())?;
            let res = tape.add(h, ff)?;
            h = self.norm_on(tape, vars, res, block.ff_norm)?;
        }
        Ok(Encoded {
            hidden: h,
            attention,
            len,
        })
    }

    /// `tanh(dense(h[CLS]))`, `[1×H]`.
    pub fn pool_on<'p>(&self, tape: &mut Tape<'p>, vars: &[Var], enc: &Encoded) -> Result<Var> {
        let cls = tape.select_rows(enc.hidden, &[0])?;
        let pooled = self.linear_on(tape, vars, cls, self.layout.pooler)?;
        Ok(tape.tanh(pooled))
    }

    /// Sentiment logits `[3]` from a pooled representation.
    pub fn classifier_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &[Var],
        pooled: Var,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let x = tape.dropout(pooled, self.config.dropout_rate, rng)?;
        let logits = self.linear_on(tape, vars, x, self.layout.classifier)?;
        tape.reshape(logits, &[NUM_CLASSES])
    }

    /// Full sentiment path on a tape.
    pub fn classify_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        vars: &[Var],
        ex: &TokenizedExample,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let enc = self.encode_on(tape, vars, ex, rng.as_deref_mut(), true)?;
        let pooled = self.pool_on(tape, vars, &enc)?;
        self.classifier_on(tape, vars, pooled, rng)
    }

    /// Sentence-pair logits `[2]` (index 1 = genuine pair / correct order).
    pub fn pair_head_on<'p>(&self, tape: &mut Tape<'p>, vars: &[Var], pooled: Var) -> Result<Var> {
        let logits = self.linear_on(tape, vars, pooled, self.layout.pair)?;
        tape.reshape(logits, &[2])
    }

    /// Masked-token logits `[positions×vocab]`: dense + GELU + layer norm,
    /// then a projection tied to the token embeddings.
    pub fn mlm_head_on<'p>(&self, tape: &mut Tape<'p>, vars: &[Var], enc: &Encoded, positions: &[usize]) -> Result<Var> {
        if let Some(&p) = positions.iter().find(|&&p| p >= enc.len) {
            return Err(Error::Index {
                what: "masked position",
                index: p,
                bound: enc.len,
            });
        }
        let rows = tape.select_rows(enc.hidden, positions)?;
        let x = self.linear_on(tape, vars, rows, self.layout.mlm_dense)?;
        let x = tape.gelu(x);
        let x = self.norm_on(tape, vars, x, self.layout.mlm_norm)?;
        let logits = tape.matmul_nt(x, vars[self.layout.token.0])?;
        tape.add_row(logits, vars[self.layout.mlm_bias.0])
    }

    /// Inference encoder output over the full (padded) sequence, `[seq×H]`.
    pub fn encode(&self, ex: &TokenizedExample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = self.encode_on(&mut tape, &vars, ex, None, false)?;
        Ok(tape.to_tensor(enc.hidden))
    }

    /// Inference attention maps: `[layer][head]` of row-major `[seq×seq]`.
    pub fn attention_maps(&self, ex: &TokenizedExample) -> Result<Vec<Vec<Tensor>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = self.encode_on(&mut tape, &vars, ex, None, false)?;
        Ok(enc
            .attention
            .iter()
            .map(|layer| layer.iter().map(|&p| tape.to_tensor(p)).collect())
            .collect())
    }

    /// Raw sentiment logits in `label_order`.
    pub fn classify(&self, ex: &TokenizedExample) -> Result<[f64; NUM_CLASSES]> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let logits = self.classify_on(&mut tape, &vars, ex, None)?;
        let v = tape.value(logits);
        Ok([v[0], v[1], v[2]])
    }

    /// Softmax of [`classify`](Self::classify).
    pub fn predict_proba(&self, ex: &TokenizedExample) -> Result<[f64; NUM_CLASSES]> {
        let p = softmax_slice(&self.classify(ex)?);
        Ok([p[0], p[1], p[2]])
    }

    pub fn predict(&self, ex: &TokenizedExample) -> Result<Sentiment> {
        let p = self.predict_proba(ex)?;
        Ok(self.label_order[crate::label::argmax(&p)])
    }

    /// Inference MLM logits for the given positions.
    pub fn mlm_logits(&self, ex: &TokenizedExample, positions: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = self.encode_on(&mut tape, &vars, ex, None, true)?;
        let logits = self.mlm_head_on(&mut tape, &vars, &enc, positions)?;
        Ok(tape.to_tensor(logits))
    }

    /// Inference sentence-pair logits; requires a pair-encoded example.
    pub fn pair_logits(&self, ex: &TokenizedExample) -> Result<[f64; 2]> {
        if !ex.is_pair() {
            return Err(contract_err("pair_logits needs a pair-encoded example"));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = self.encode_on(&mut tape, &vars, ex, None, true)?;
        let pooled = self.pool_on(&mut tape, &vars, &enc)?;
        let logits = self.pair_head_on(&mut tape, &vars, pooled)?;
        let v = tape.value(logits);
        Ok([v[0], v[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;

    fn tiny(variant: Variant) -> EncoderConfig {
        EncoderConfig::new(30, 12).with_hidden(8, 2).for_variant(variant)
    }

    fn vocab() -> Vocab {
        Vocab::build(&["the build is broken again", "great fix thanks", "updated the docs"], 30, 1).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Variant::BertLike);
        c.num_heads = 3;
        assert!(matches!(SentimentModel::new(c, Variant::BertLike, 0), Err(Error::Config(_))));
        let mut c = tiny(Variant::BertLike);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let c = tiny(Variant::BertLike);
        assert!(SentimentModel::new(c, Variant::AlbertLike, 0).is_err());
    }

    #[test]
    fn sharing_halves_block_parameters() {
        let shared = SentimentModel::new(tiny(Variant::AlbertLike), Variant::AlbertLike, 1).unwrap();
        let unshared = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 1).unwrap();
        assert_eq!(shared.encoder_block_parameter_count() * 2, unshared.encoder_block_parameter_count());
        assert!(shared.parameter_count() < unshared.parameter_count());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 9).unwrap();
        let b = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 9).unwrap();
        assert_eq!(a, b);
        let c = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn initialization_scheme() {
        let m = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 2).unwrap();
        for (_, name, t) in m.params().iter() {
            if name.ends_with(".bias") || name.ends_with(".beta") || name == "mlm.output_bias" {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else if name.ends_with(".gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v.abs() <= 2.0 * INIT_STD), "{name}");
            }
        }
    }

    #[test]
    fn overlong_input_is_contract_error() {
        let m = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 2).unwrap();
        let ex = vocab().encode_single("great fix", 13).unwrap();
        assert!(matches!(m.classify(&ex), Err(Error::Contract(_))));
    }

    #[test]
    fn heads_have_expected_widths() {
        let m = SentimentModel::new(tiny(Variant::BertLike), Variant::BertLike, 2).unwrap();
        let v = vocab();
        let single = v.encode_single("great fix thanks", 12).unwrap();
        let logits = m.mlm_logits(&single, &[1, 2]).unwrap();
        assert_eq!(logits.shape(), &[2, 30]);
        assert!(matches!(m.mlm_logits(&single, &[12]), Err(Error::Index { .. })));
        assert!(m.pair_logits(&single).is_err());
        let pair = v.encode_pair("great fix", "updated the docs", 12).unwrap();
        assert_eq!(m.pair_logits(&pair).unwrap().len(), 2);
        let p = m.predict_proba(&single).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn factorized_embeddings_run() {
        let mut c = tiny(Variant::AlbertLike);
        c.embedding_size = 4;
        let m = SentimentModel::new(c, Variant::AlbertLike, 3).unwrap();
        let ex = vocab().encode_single("the build is broken", 12).unwrap();
        assert_eq!(m.encode(&ex).unwrap().shape(), &[12, 8]);
        assert_eq!(m.mlm_logits(&ex, &[1]).unwrap().shape(), &[1, 30]);
    }
}
