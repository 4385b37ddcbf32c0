//! Binary checkpoint format.
//!
//! ```text
//! "MSNT" | version u16 | config | variant u8 | label order 3×u8 |
//! vocab hash u64 | block count u32 |
//! blocks: name_len u16, name, ndim u8, dims u32…, data f64…
//! ```
//!
//! All integers and floats are little-endian. Shared encoder blocks are
//! stored once.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{EncoderConfig, SentimentModel, Variant};
use crate::error::{CheckpointError, Error, Result};
use crate::label::Sentiment;
use crate::tokenizer::Vocab;

pub const MAGIC: [u8; 4] = *b"MSNT";
pub const FORMAT_VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.at < n {
            return Err(CheckpointError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Checkpoint(CheckpointError::Malformed(msg.into()))
}

/// Serializes `model` together with the fingerprint of its vocabulary.
pub fn encode_checkpoint(model: &SentimentModel, vocab_hash: u64) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u16(FORMAT_VERSION);
    let c = &model.config;
    w.u32(c.num_layers);
    w.u32(c.hidden_size);
    w.u32(c.num_heads);
    w.u32(c.ff_size);
    w.u32(c.vocab_size);
    w.u32(c.max_seq_len);
    w.u32(c.embedding_size);
    w.f64(c.dropout_rate);
    w.u8(u8::from(c.share_parameters));
    w.u8(model.variant.tag());
    for l in model.label_order {
        w.u8(l.index() as u8);
    }
    w.u64(vocab_hash);
    w.u32(model.params.len());
    for (_, name, t) in model.params.iter() {
        w.u16(name.len() as u16);
        w.0.extend_from_slice(name.as_bytes());
        w.u8(t.shape().len() as u8);
        for &d in t.shape() {
            w.u32(d);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    w.0
}

/// Parses a checkpoint, returning the model and the stored vocabulary hash.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SentimentModel, u64)> {
    let mut r = Reader { bytes, at: 0 };
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated(bytes.len()).into());
    }
    if r.take(4)? != MAGIC || r.u16()? != FORMAT_VERSION {
        return Err(CheckpointError::Version.into());
    }
    let config = EncoderConfig {
        num_layers: r.u32()?,
        hidden_size: r.u32()?,
        num_heads: r.u32()?,
        ff_size: r.u32()?,
        vocab_size: r.u32()?,
        max_seq_len: r.u32()?,
        embedding_size: r.u32()?,
        dropout_rate: r.f64()?,
        share_parameters: r.u8()? != 0,
    };
    let variant = Variant::from_tag(r.u8()?).ok_or_else(|| malformed("unknown variant tag"))?;
    let mut label_order = Sentiment::ALL;
    for slot in &mut label_order {
        *slot = Sentiment::from_index(r.u8()? as usize).ok_or_else(|| malformed("unknown label index"))?;
    }
    let vocab_hash = r.u64()?;
    let mut model = SentimentModel::zeroed(config, variant).map_err(|e| malformed(format!("{e}")))?;
    if config.share_parameters != variant.shares_parameters() {
        return Err(malformed("variant and parameter sharing disagree"));
    }
    model.label_order = label_order;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(malformed(format!(
            "expected {} parameter blocks, found {count}",
            model.params.len()
        )));
    }
    let mut filled = alloc::vec![false; count];
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?).map_err(|_| malformed("parameter name is not UTF-8"))?;
        let id = model
            .params
            .find(name)
            .ok_or_else(|| malformed(format!("unexpected parameter {name}")))?;
        if core::mem::replace(&mut filled[id.0], true) {
            return Err(malformed(format!("duplicate parameter {name}")));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let tensor = model.params.get_mut(id);
        if shape != tensor.shape() {
            return Err(malformed(format!("parameter {name} has shape {shape:?}")));
        }
        for v in tensor.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.at != bytes.len() {
        return Err(malformed("trailing bytes after last parameter block"));
    }
    Ok((model, vocab_hash))
}

/// Parses a checkpoint and checks it was saved against `vocab`.
pub fn decode_checkpoint_for(bytes: &[u8], vocab: &Vocab) -> Result<SentimentModel> {
    let (model, stored) = decode_checkpoint(bytes)?;
    let actual = vocab.fingerprint();
    if stored != actual {
        return Err(CheckpointError::VocabHash { stored, actual }.into());
    }
    if model.config.vocab_size != vocab.len() {
        return Err(malformed("checkpoint vocabulary size differs from vocabulary file"));
    }
    Ok(model)
}
