//! Soft-voting ensembles and pairwise agreement between models.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::label::{argmax, Sentiment, NUM_CLASSES};
use crate::model::SentimentModel;
use crate::tokenizer::TokenizedExample;

/// Members with weights normalized to sum to 1.
#[derive(Debug, Clone)]
pub struct EnsembleSpec<'m> {
    members: Vec<&'m SentimentModel>,
    weights: Vec<f64>,
    label_order: [Sentiment; NUM_CLASSES],
}

/// Checks and normalizes raw voting weights.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() < 2 {
        return Err(config_err("an ensemble needs at least two members"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(config_err(format!("ensemble weights must be finite and non-negative, got {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(config_err("at least one ensemble weight must be positive"));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Weighted arithmetic mean of probability triples and its argmax
/// (lowest index on ties). `weights` must already be normalized.
pub fn soft_vote(probs: &[[f64; NUM_CLASSES]], weights: &[f64]) -> (usize, [f64; NUM_CLASSES]) {
    let mut agg = [0.0; NUM_CLASSES];
    for (p, &w) in probs.iter().zip(weights) {
        for k in 0..NUM_CLASSES {
            agg[k] += w * p[k];
        }
    }
    (argmax(&agg), agg)
}

impl<'m> EnsembleSpec<'m> {
    /// `weights` of `None` means equal weights.
    pub fn new(members: Vec<&'m SentimentModel>, weights: Option<Vec<f64>>) -> Result<Self> {
        let raw = weights.unwrap_or_else(|| vec![1.0; members.len()]);
        if raw.len() != members.len() {
            return Err(config_err(format!("{} weights for {} members", raw.len(), members.len())));
        }
        let weights = normalize_weights(&raw)?;
        let label_order = members[0].label_order;
        if let Some(m) = members.iter().find(|m| m.label_order != label_order) {
            return Err(config_err(format!(
                "member label order {:?} differs from {:?}",
                m.label_order, label_order
            )));
        }
        Ok(Self {
            members,
            weights,
            label_order,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[&'m SentimentModel] {
        &self.members
    }

    /// Aggregated distribution, indexed by [`Sentiment::index`], and its
    /// label.
    pub fn predict(&self, ex: &TokenizedExample) -> Result<(Sentiment, [f64; NUM_CLASSES])> {
        let probs = self
            .members
            .iter()
            .map(|m| m.predict_proba(ex))
            .collect::<Result<Vec<_>>>()?;
        let (_, agg) = soft_vote(&probs, &self.weights);
        let mut canonical = [0.0; NUM_CLASSES];
        for (k, label) in self.label_order.iter().enumerate() {
            canonical[label.index()] = agg[k];
        }
        Ok((Sentiment::ALL[argmax(&canonical)], canonical))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementMatrix {
    pub names: Vec<String>,
    /// Share of examples on which two models predict the same label.
    pub agreement: Vec<Vec<f64>>,
    /// Pearson correlation of flattened one-hot predictions; `None` when a
    /// vector has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
}

fn one_hot(labels: &[Sentiment]) -> Vec<f64> {
    let mut v = vec![0.0; labels.len() * NUM_CLASSES];
    for (i, l) in labels.iter().enumerate() {
        v[i * NUM_CLASSES + l.index()] = 1.0;
    }
    v
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

/// Pairwise statistics over per-model predicted labels. The matrix is
/// filled from the upper triangle, so it is exactly symmetric, and the
/// diagonal is 1.
pub fn agreement_analysis(names: &[String], predictions: &[Vec<Sentiment>]) -> Result<AgreementMatrix> {
    let m = predictions.len();
    if m < 2 || names.len() != m {
        return Err(contract_err("agreement needs at least two named models"));
    }
    let n = predictions[0].len();
    if n < 2 || predictions.iter().any(|p| p.len() != n) {
        return Err(contract_err("agreement needs at least two examples, equally many per model"));
    }
    let hot: Vec<Vec<f64>> = predictions.iter().map(|p| one_hot(p)).collect();
    let mut agreement = vec![vec![1.0; m]; m];
    let mut correlation = vec![vec![Some(1.0); m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let same = predictions[i].iter().zip(&predictions[j]).filter(|(a, b)| a == b).count();
            let a = same as f64 / n as f64;
            let r = pearson(&hot[i], &hot[j]);
            agreement[i][j] = a;
            agreement[j][i] = a;
            correlation[i][j] = r;
            correlation[j][i] = r;
        }
    }
    Ok(AgreementMatrix {
        names: names.to_vec(),
        agreement,
        correlation,
    })
}
