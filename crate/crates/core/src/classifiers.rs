//! CNN and GRU text classifiers, their early-stopped training loop, and
//! accuracy/F1 evaluation.
//!
//! Both architectures accept either token ids (embedded internally) or an
//! externally weighted embedding sequence, which is how the explainer and
//! the corrector feed `X ⊙ S` into a classifier.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, EncodedExample, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Direction, GruLayer, ParamSet};
use crate::seed;
use crate::tensor::{softmax_rows, Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Rnn,
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "rnn" | "gru" => Ok(Architecture::Rnn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Cnn => "cnn",
            Architecture::Rnn => "rnn",
        })
    }
}

/// Which binary attribute a model predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// The task label `y`.
    Label,
    /// The demographic attribute `z`.
    Group,
}

impl Task {
    pub fn targets(self, batch: &Batch) -> &[usize] {
        match self {
            Task::Label => &batch.y,
            Task::Group => &batch.z,
        }
    }

    pub fn target(self, ex: &EncodedExample) -> u8 {
        match self {
            Task::Label => ex.y,
            Task::Group => ex.z,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub cnn_filters: usize,
    pub cnn_kernel_sizes: Vec<usize>,
    pub cnn_dropout: f64,
    pub rnn_hidden: usize,
    pub rnn_dropout: f64,
    pub learning_rate: f64,
    pub grad_clip_value: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Hard cap on epochs in case validation accuracy keeps creeping up.
    pub max_epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cnn,
            embedding_dim: 300,
            cnn_filters: 100,
            cnn_kernel_sizes: vec![3, 4, 5],
            cnn_dropout: 0.3,
            rnn_hidden: 300,
            rnn_dropout: 0.2,
            learning_rate: 0.001,
            grad_clip_value: 0.25,
            batch_size: 64,
            early_stop_patience: 5,
            max_epochs: 100,
        }
    }
}

impl ClassifierConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Default::default()
        }
    }

    /// Narrower layers for single-core runs on small corpora; optimiser,
    /// dropout, clipping and stopping rules are unchanged.
    pub fn compact(architecture: Architecture) -> Self {
        Self {
            architecture,
            embedding_dim: 48,
            cnn_filters: 24,
            rnn_hidden: 48,
            max_epochs: 40,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.embedding_dim, self.batch_size, self.max_epochs];
        if dims.contains(&0) {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        match self.architecture {
            Architecture::Cnn => {
                if self.cnn_filters == 0 || self.cnn_kernel_sizes.is_empty() || self.cnn_kernel_sizes.contains(&0) {
                    return Err(Error::Config("CNN filters and kernel sizes must be positive".into()));
                }
            }
            Architecture::Rnn => {
                if self.rnn_hidden == 0 {
                    return Err(Error::Config("rnn_hidden must be positive".into()));
                }
            }
        }
        for p in [self.cnn_dropout, self.rnn_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config("dropout must lie in [0, 1)".into()));
            }
        }
        if [self.grad_clip_value, self.learning_rate].iter().any(|v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Config("clip value and learning rate must be positive".into()));
        }
        Ok(())
    }

    fn dropout(&self) -> f64 {
        match self.architecture {
            Architecture::Cnn => self.cnn_dropout,
            Architecture::Rnn => self.rnn_dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Encoder {
    Cnn { kernels: Vec<(usize, usize, usize)> },
    Rnn(GruLayer),
}

/// Text classifier: embedding table, encoder, linear head over {0, 1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    task: Task,
    vocab_size: usize,
    vocab_fingerprint: String,
    params: ParamSet,
    encoder: Encoder,
    head_weight: usize,
    head_bias: usize,
    #[serde(default)]
    frozen: bool,
}

/// Index of the embedding table inside [`ClassifierModel::params`].
pub const EMBEDDING: usize = 0;

impl ClassifierModel {
    pub fn new(config: &ClassifierConfig, task: Task, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "classifier-init");
        let mut params = ParamSet::default();
        let dim = config.embedding_dim;
        params.push("embedding", nn::embedding_table(vocab.len(), dim, PAD, &mut rng));
        let (encoder, features) = match config.architecture {
            Architecture::Cnn => {
                let mut kernels = Vec::new();
                for &k in &config.cnn_kernel_sizes {
                    let fan_in = k * dim;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w = params.push(
                        format!("conv{k}.weight"),
                        nn::uniform_matrix(fan_in, config.cnn_filters, bound, &mut rng),
                    );
                    let b = params.push(
                        format!("conv{k}.bias"),
                        nn::uniform_matrix(1, config.cnn_filters, bound, &mut rng),
                    );
                    kernels.push((k, w, b));
                }
                let features = config.cnn_filters * kernels.len();
                (Encoder::Cnn { kernels }, features)
            }
            Architecture::Rnn => {
                let layer = GruLayer::new(&mut params, "gru", dim, config.rnn_hidden, &mut rng);
                (Encoder::Rnn(layer), config.rnn_hidden)
            }
        };
        let bound = 1.0 / (features as f64).sqrt();
        let head_weight = params.push("head.weight", nn::uniform_matrix(features, 2, bound, &mut rng));
        let head_bias = params.push("head.bias", nn::uniform_matrix(1, 2, bound, &mut rng));
        Ok(Self {
            config: config.clone(),
            task,
            vocab_size: vocab.len(),
            vocab_fingerprint: vocab.fingerprint(),
            params,
            encoder,
            head_weight,
            head_bias,
            frozen: false,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Marks the model read-only for downstream trainers.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    /// Embedding lookup for a batch: `(batch * seq_len) x embedding_dim`.
    pub fn embed(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Var {
        tape.gather(vars[EMBEDDING], &batch.ids, Some(PAD))
    }

    /// Logits from an embedded (possibly saliency-weighted) sequence.
    /// Dropout is active iff `rng` is supplied.
    pub fn logits_from_embedded(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        lengths: &[usize],
        seq_len: usize,
        rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let features = match &self.encoder {
            Encoder::Cnn { kernels } => {
                let mut pooled = Vec::with_capacity(kernels.len());
                for &(k, w, b) in kernels {
                    let windows = tape.unfold(x, seq_len, k);
                    let conv = tape.matmul(windows, vars[w]);
                    let conv = tape.add_row(conv, vars[b]);
                    let act = tape.relu(conv);
                    pooled.push(tape.masked_max_pool(act, seq_len, lengths));
                }
                if pooled.len() == 1 {
                    pooled[0]
                } else {
                    tape.concat_cols(&pooled)
                }
            }
            Encoder::Rnn(layer) => {
                let states = layer.run(tape, vars, x, lengths, seq_len, Direction::Forward);
                states[seq_len - 1]
            }
        };
        let features = nn::dropout(tape, features, self.config.dropout(), rng);
        let logits = tape.matmul(features, vars[self.head_weight]);
        tape.add_row(logits, vars[self.head_bias])
    }

    pub fn logits(&self, tape: &mut Tape, vars: &[Var], batch: &Batch, rng: Option<&mut dyn RngCore>) -> Var {
        let x = self.embed(tape, vars, batch);
        self.logits_from_embedded(tape, vars, x, &batch.lengths, batch.seq_len, rng)
    }

    /// Class probabilities for a token-id batch (inference mode).
    pub fn forward(&self, batch: &Batch) -> Matrix {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let logits = self.logits(&mut tape, &vars, batch, None);
        softmax_rows(tape.value(logits))
    }

    /// Class probabilities for a `(batch * seq_len) x embedding_dim` input
    /// whose padding rows are expected to be zero.
    pub fn forward_weighted(&self, embedded: &Matrix, lengths: &[usize], seq_len: usize) -> Result<Matrix> {
        if embedded.cols() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "weighted input has width {}, model expects {}",
                embedded.cols(),
                self.config.embedding_dim
            )));
        }
        if seq_len == 0 || embedded.rows() != lengths.len() * seq_len {
            return Err(Error::Shape(format!(
                "weighted input has {} rows, expected {} x {seq_len}",
                embedded.rows(),
                lengths.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(embedded.clone());
        let logits = self.logits_from_embedded(&mut tape, &vars, x, lengths, seq_len, None);
        Ok(softmax_rows(tape.value(logits)))
    }
}

/// Anything that maps encoded examples to `[P(0), P(1)]`.
pub trait Predictor {
    fn predict_proba(&self, data: &[EncodedExample]) -> Vec<[f64; 2]>;
}

pub(crate) const EVAL_BATCH: usize = 256;

impl Predictor for ClassifierModel {
    fn predict_proba(&self, data: &[EncodedExample]) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(EVAL_BATCH) {
            let probs = self.forward(&Batch::from_slice(chunk));
            out.extend((0..probs.rows()).map(|r| [probs.get(r, 0), probs.get(r, 1)]));
        }
        out
    }
}

/// Positive iff `P(1) > 0.5`; an exact tie is negative.
pub fn decide(p: [f64; 2]) -> u8 {
    u8::from(p[1] > 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub f1: f64,
    pub predictions: Vec<u8>,
}

/// Accuracy and positive-class F1 of thresholded predictions.
pub fn score(predictions: &[u8], targets: &[u8]) -> (f64, f64) {
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(targets) {
        correct += usize::from(p == t);
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    let n = predictions.len().max(1) as f64;
    let denom = 2 * tp + fp + fneg;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    (correct as f64 / n, f1)
}

pub fn evaluate(model: &dyn Predictor, data: &[EncodedExample], task: Task) -> Evaluation {
    let predictions: Vec<u8> = model.predict_proba(data).into_iter().map(decide).collect();
    let targets: Vec<u8> = data.iter().map(|e| task.target(e)).collect();
    let (accuracy, f1) = score(&predictions, &targets);
    Evaluation {
        accuracy,
        f1,
        predictions,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Shuffled mini-batch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Cross-entropy training with per-component gradient clipping, early
/// stopping on validation accuracy and best-checkpoint selection.
pub fn train_classifier(
    train: &[EncodedExample],
    val: &[EncodedExample],
    vocab: &Vocabulary,
    config: &ClassifierConfig,
    task: Task,
    seed: u64,
) -> Result<(ClassifierModel, TrainingLog)> {
    fit(train, None, val, vocab, config, task, seed)
}

pub(crate) fn fit(
    train: &[EncodedExample],
    weights: Option<&[f64]>,
    val: &[EncodedExample],
    vocab: &Vocabulary,
    config: &ClassifierConfig,
    task: Task,
    seed: u64,
) -> Result<(ClassifierModel, TrainingLog)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let mut model = ClassifierModel::new(config, task, vocab, seed)?;
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut rng = seed::rng(seed, "classifier-train");
    let mut log = TrainingLog::default();
    let mut best = model.params().clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let mut total_loss = 0.0;
        let batches = epoch_batches(train.len(), config.batch_size, &mut rng);
        for (step, idx) in batches.iter().enumerate() {
            let examples: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&examples);
            let batch_weights: Option<Vec<f64>> = weights.map(|w| idx.iter().map(|&i| w[i]).collect());

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let logits = model.logits(&mut tape, &vars, &batch, Some(&mut rng));
            let loss = tape.cross_entropy(logits, task.targets(&batch), batch_weights.as_deref());
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    stage: "classifier",
                    epoch,
                    step,
                });
            }
            tape.backward(loss);
            let mut grads = ParamSet::grads(&tape, &vars);
            if !nn::grads_finite(&grads) {
                return Err(Error::Divergence {
                    stage: "classifier",
                    epoch,
                    step,
                });
            }
            nn::clip_by_value(&mut grads, config.grad_clip_value);
            adam.step(model.params_mut(), &grads);
            total_loss += loss_value * idx.len() as f64;
        }
        let val_accuracy = evaluate(&model, val, task).accuracy;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: total_loss / train.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = model.params().clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    *model.params_mut() = best;
    log.best_val_accuracy = best_acc;
    Ok((model, log))
}
