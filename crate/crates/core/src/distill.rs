//! Temperature-scaled knowledge distillation into a shallower student.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::finetune::{
    classification_loss_on, encode_examples, evaluate_encoded, target_index, train_with_early_stopping,
    FinetuneConfig, TrainOutcome,
};
use crate::label::{LabeledExample, Sentiment, NUM_CLASSES};
use crate::model::{EncoderConfig, SentimentModel};
use crate::rng::Rng;
use crate::tape::{softmax_slice, Tape, Var};
use crate::tokenizer::{TokenizedExample, Vocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the soft-target term; `1 - alpha` weights the hard labels.
    pub alpha: f64,
    pub train: FinetuneConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            alpha: 0.5,
            train: FinetuneConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(config_err(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.train.validate()
    }
}

/// `softmax(logits / T)`.
pub fn soft_targets(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(config_err(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    Ok(softmax_slice(&scaled))
}

/// Default student: half the teacher's layers (at least one), otherwise the
/// same shape.
pub fn student_config(teacher: &EncoderConfig) -> EncoderConfig {
    EncoderConfig {
        num_layers: (teacher.num_layers / 2).max(1),
        ..*teacher
    }
}

/// Builds a student from `teacher`: matching embeddings and heads are
/// copied, and student layer `i` takes teacher block `i * stride`.
pub fn init_student(teacher: &SentimentModel, config: EncoderConfig, seed: u64) -> Result<SentimentModel> {
    let mut student = SentimentModel::new(config, teacher.variant(), seed)?;
    student.label_order = teacher.label_order;
    student.copy_matching_from(teacher);
    let t = teacher.config();
    if !config.share_parameters {
        let stride = (t.num_layers / config.num_layers).max(1);
        for i in 0..config.num_layers {
            let from = if t.share_parameters { 0 } else { (i * stride).min(t.num_layers - 1) };
            student.copy_block_from(teacher, from, i)?;
        }
    }
    Ok(student)
}

/// `T^2 * KL(p || softmax(logits / T))` for constant target distribution
/// `p`, built on `tape` over student logits of shape `[3]` or `[1x3]`.
pub fn kd_term_on(tape: &mut Tape<'_>, logits: Var, targets: &[f64], temperature: f64) -> Result<Var> {
    let logits = tape.reshape(logits, &[1, NUM_CLASSES])?;
    let scaled = tape.scale(logits, 1.0 / temperature);
    let log_q = tape.log_softmax(scaled);
    let p = tape.constant(&[1, NUM_CLASSES], targets.to_vec())?;
    let cross = tape.mul(p, log_q)?;
    let cross = tape.sum(cross);
    let entropy_part: f64 = targets.iter().filter(|&&v| v > 0.0).map(|&v| v * libm::log(v)).sum();
    let neg_entropy = tape.constant(&[1], alloc::vec![entropy_part])?;
    let kl = tape.sub(neg_entropy, cross)?;
    Ok(tape.scale(kl, temperature * temperature))
}

/// Full distillation loss of one example on a tape.
#[allow(clippy::too_many_arguments)]
pub fn distillation_loss_on<'p>(
    student: &'p SentimentModel,
    tape: &mut Tape<'p>,
    ex: &TokenizedExample,
    teacher_logits: &[f64; NUM_CLASSES],
    label: Sentiment,
    temperature: f64,
    alpha: f64,
    dropout: Option<&mut Rng>,
) -> Result<Var> {
    if alpha == 0.0 {
        return classification_loss_on(student, tape, ex, label, dropout);
    }
    let vars = student.bind(tape);
    let logits = student.classify_on(tape, &vars, ex, dropout)?;
    let p = soft_targets(teacher_logits, temperature)?;
    let kd = kd_term_on(tape, logits, &p, temperature)?;
    let kd = tape.scale(kd, alpha);
    if alpha == 1.0 {
        return Ok(kd);
    }
    let row = tape.reshape(logits, &[1, NUM_CLASSES])?;
    let ce = tape.cross_entropy(row, &[target_index(student, label)])?;
    let ce = tape.scale(ce, 1.0 - alpha);
    let total = tape.add(kd, ce)?;
    tape.reshape(total, &[1])
}

/// Inference value of the distillation loss for one example.
pub fn distillation_loss(
    student: &SentimentModel,
    teacher: &SentimentModel,
    ex: &TokenizedExample,
    label: Sentiment,
    temperature: f64,
    alpha: f64,
) -> Result<f64> {
    let t = teacher.classify(ex)?;
    let mut tape = Tape::new();
    let l = distillation_loss_on(student, &mut tape, ex, &t, label, temperature, alpha, None)?;
    Ok(tape.value(l)[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionReport {
    pub teacher_parameters: usize,
    pub student_parameters: usize,
    /// `1 - student / teacher`.
    pub size_reduction: f64,
    pub teacher_macro_f1: f64,
    pub student_macro_f1: f64,
    /// `student_macro_f1 / teacher_macro_f1`.
    pub retention: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub training: TrainOutcome,
    pub report: CompressionReport,
}

/// Trains `student` against the frozen `teacher`, stopping early on
/// validation macro-F1, and reports both models on `test`. Parameter
/// counts exclude the pretraining heads, which play no part in inference.
pub fn distill(
    teacher: &SentimentModel,
    student: &mut SentimentModel,
    vocab: &Vocab,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    test: &[LabeledExample],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    let (tp, sp) = (teacher.inference_parameter_count(), student.inference_parameter_count());
    if sp >= tp {
        return Err(config_err(format!(
            "student has {sp} parameters, not fewer than the teacher's {tp}"
        )));
    }
    if student.label_order != teacher.label_order {
        return Err(config_err("student and teacher label orders differ"));
    }
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(Error::Data("distillation needs non-empty train, validation and test sets".into()));
    }
    let max_len = cfg.train.max_len;
    let train_x = encode_examples(student, vocab, train, max_len)?;
    let train_y: Vec<Sentiment> = train.iter().map(|e| e.label).collect();
    let teacher_logits = train_x.iter().map(|ex| teacher.classify(ex)).collect::<Result<Vec<_>>>()?;
    let valid_x = encode_examples(student, vocab, valid, max_len)?;
    let valid_y: Vec<Sentiment> = valid.iter().map(|e| e.label).collect();
    let (t, a) = (cfg.temperature, cfg.alpha);
    let training = train_with_early_stopping(
        student,
        train_x.len(),
        &cfg.train,
        |m, tape, i, r| distillation_loss_on(m, tape, &train_x[i], &teacher_logits[i], train_y[i], t, a, Some(r)),
        |_, m| Ok(evaluate_encoded("validation", m, &valid_x, &valid_y)?.macro_f1()),
    )?;
    let test_x = encode_examples(student, vocab, test, max_len)?;
    let test_y: Vec<Sentiment> = test.iter().map(|e| e.label).collect();
    let teacher_f1 = evaluate_encoded("teacher", teacher, &test_x, &test_y)?.macro_f1();
    let student_f1 = evaluate_encoded("student", student, &test_x, &test_y)?.macro_f1();
    Ok(DistillOutcome {
        training,
        report: compression_report(tp, sp, teacher_f1, student_f1),
    })
}

pub fn compression_report(teacher: usize, student: usize, teacher_f1: f64, student_f1: f64) -> CompressionReport {
    CompressionReport {
        teacher_parameters: teacher,
        student_parameters: student,
        size_reduction: 1.0 - student as f64 / teacher as f64,
        teacher_macro_f1: teacher_f1,
        student_macro_f1: student_f1,
        retention: if teacher_f1 > 0.0 { student_f1 / teacher_f1 } else { 0.0 },
    }
}
