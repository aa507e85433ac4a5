//! Learning-based saliency explainer.
//!
//! A bidirectional GRU over its own embedding table scores every position;
//! a softmax restricted to real tokens turns the scores into a saliency
//! distribution `S`. The explainer is fitted against a frozen classifier by
//! minimising the classifier's cross-entropy on `X ⊙ S`, where `X` is the
//! classifier's own embedding of the text.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{epoch_batches, ClassifierModel, EVAL_BATCH};
use crate::corpus::{Batch, EncodedExample, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Direction, GruLayer, ParamSet};
use crate::seed;
use crate::tensor::{softmax_rows, Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub embedding_dim: usize,
    /// Hidden size of each GRU direction.
    pub hidden: usize,
    pub learning_rate: f64,
    pub grad_clip_value: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 300,
            hidden: 150,
            learning_rate: 0.001,
            grad_clip_value: 0.25,
            batch_size: 64,
            early_stop_patience: 5,
            max_epochs: 100,
        }
    }
}

impl ExplainerConfig {
    pub fn compact() -> Self {
        Self {
            embedding_dim: 32,
            hidden: 24,
            max_epochs: 40,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.embedding_dim, self.hidden, self.batch_size, self.max_epochs].contains(&0) {
            return Err(Error::Config("explainer dimensions must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip_value > 0.0) {
            return Err(Error::Config("explainer learning rate and clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-token weights of one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyDistribution {
    /// One score per encoded position; zero past `length`.
    pub scores: Vec<f64>,
    pub length: usize,
}

impl SaliencyDistribution {
    pub fn real(&self) -> &[f64] {
        &self.scores[..self.length]
    }

    pub fn uniform(length: usize, max_len: usize) -> Self {
        let mut scores = vec![0.0; max_len];
        if length > 0 {
            scores[..length].fill(1.0 / length as f64);
        }
        Self { scores, length }
    }

    /// Index of the highest-scoring real token.
    pub fn argmax(&self) -> Option<usize> {
        self.real()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }
}

/// Bidirectional GRU scorer. Also serves as the corrector of the debiaser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerModel {
    config: ExplainerConfig,
    vocab_size: usize,
    vocab_fingerprint: String,
    params: ParamSet,
    forward: GruLayer,
    backward: GruLayer,
    score_weight: usize,
    score_bias: usize,
}

impl ExplainerModel {
    /// The score head starts at zero, so a fresh model emits uniform saliency.
    pub fn new(config: &ExplainerConfig, vocab_size: usize, vocab_fingerprint: &str, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "explainer-init");
        let mut params = ParamSet::default();
        params.push(
            "embedding",
            nn::embedding_table(vocab_size, config.embedding_dim, PAD, &mut rng),
        );
        let forward = GruLayer::new(&mut params, "gru_fwd", config.embedding_dim, config.hidden, &mut rng);
        let backward = GruLayer::new(&mut params, "gru_bwd", config.embedding_dim, config.hidden, &mut rng);
        let score_weight = params.push("score.weight", Matrix::zeros(2 * config.hidden, 1));
        let score_bias = params.push("score.bias", Matrix::zeros(1, 1));
        Ok(Self {
            config: config.clone(),
            vocab_size,
            vocab_fingerprint: vocab_fingerprint.to_owned(),
            params,
            forward,
            backward,
            score_weight,
            score_bias,
        })
    }

    pub fn for_vocab(config: &ExplainerConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        Self::new(config, vocab.len(), &vocab.fingerprint(), seed)
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Direct parameter access for perturbation checks and optimisers.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    /// `batch x seq_len` saliency; each row sums to one over its real
    /// positions and is exactly zero elsewhere.
    pub fn saliency(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Var {
        let x = tape.gather(vars[0], &batch.ids, Some(PAD));
        let fwd = self
            .forward
            .run(tape, vars, x, &batch.lengths, batch.seq_len, Direction::Forward);
        let bwd = self
            .backward
            .run(tape, vars, x, &batch.lengths, batch.seq_len, Direction::Backward);
        let mut columns = Vec::with_capacity(batch.seq_len);
        for t in 0..batch.seq_len {
            let h = tape.concat_cols(&[fwd[t], bwd[t]]);
            let s = tape.matmul(h, vars[self.score_weight]);
            columns.push(tape.add_row(s, vars[self.score_bias]));
        }
        let scores = if columns.len() == 1 {
            columns[0]
        } else {
            tape.concat_cols(&columns)
        };
        tape.masked_softmax(scores, &batch.lengths)
    }

    pub fn explain(&self, data: &[EncodedExample]) -> Vec<SaliencyDistribution> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(EVAL_BATCH) {
            let batch = Batch::from_slice(chunk);
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let s = self.saliency(&mut tape, &vars, &batch);
            let s = tape.value(s);
            for (r, ex) in chunk.iter().enumerate() {
                let mut scores = vec![0.0; ex.ids.len().max(batch.seq_len)];
                scores[..batch.seq_len].copy_from_slice(s.row(r));
                scores.truncate(ex.ids.len().max(ex.length));
                out.push(SaliencyDistribution {
                    scores,
                    length: ex.length,
                });
            }
        }
        out
    }
}

/// `X_S[b, t, :] = S[b, t] * X[b, t, :]` on the tape.
pub fn weight_embeddings(tape: &mut Tape, embedded: Var, saliency: Var) -> Var {
    let (rows, cols) = tape.value(saliency).shape();
    let column = tape.reshape(saliency, rows * cols, 1);
    tape.scale_rows(embedded, column)
}

/// Value-level `X ⊙ S` for a `(batch * seq_len) x dim` embedding matrix and
/// a `batch x seq_len` saliency matrix.
pub fn apply_saliency(embedded: &Matrix, saliency: &Matrix) -> Result<Matrix> {
    let (batch, seq_len) = saliency.shape();
    if embedded.rows() != batch * seq_len {
        return Err(Error::Shape(format!(
            "{} embedding rows for a {batch} x {seq_len} saliency matrix",
            embedded.rows()
        )));
    }
    let mut out = embedded.clone();
    for r in 0..out.rows() {
        let s = saliency.data()[r];
        out.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy of `model` when fed `X ⊙ S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub cross_entropy: f64,
    pub accuracy: f64,
}

fn saliency_fidelity(
    model: &ClassifierModel,
    data: &[EncodedExample],
    mut saliency: impl FnMut(&mut Tape, &Batch) -> Var,
) -> Fidelity {
    let (mut ce, mut correct) = (0.0, 0usize);
    for chunk in data.chunks(EVAL_BATCH) {
        let batch = Batch::from_slice(chunk);
        let mut tape = Tape::new();
        let s = saliency(&mut tape, &batch);
        let mvars = model.bind(&mut tape, false);
        let x = model.embed(&mut tape, &mvars, &batch);
        let xs = weight_embeddings(&mut tape, x, s);
        let logits = model.logits_from_embedded(&mut tape, &mvars, xs, &batch.lengths, batch.seq_len, None);
        let targets = model.task().targets(&batch).to_vec();
        let loss = tape.cross_entropy(logits, &targets, None);
        ce += tape.value(loss).get(0, 0) * chunk.len() as f64;
        let probs = softmax_rows(tape.value(logits));
        for (r, &t) in targets.iter().enumerate() {
            let pred = usize::from(probs.get(r, 1) > 0.5);
            correct += usize::from(pred == t);
        }
    }
    let n = data.len().max(1) as f64;
    Fidelity {
        cross_entropy: ce / n,
        accuracy: correct as f64 / n,
    }
}

pub fn explained_fidelity(explainer: &ExplainerModel, model: &ClassifierModel, data: &[EncodedExample]) -> Fidelity {
    saliency_fidelity(model, data, |tape, batch| {
        let vars = explainer.bind(tape, false);
        explainer.saliency(tape, &vars, batch)
    })
}

/// The same measurement with every real token weighted `1 / length`.
pub fn uniform_fidelity(model: &ClassifierModel, data: &[EncodedExample]) -> Fidelity {
    saliency_fidelity(model, data, |tape, batch| {
        let mut s = Matrix::zeros(batch.size(), batch.seq_len);
        for (r, &len) in batch.lengths.iter().enumerate() {
            for t in 0..len {
                s.set(r, t, 1.0 / len as f64);
            }
        }
        tape.constant(s)
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainerLog {
    /// Validation cross-entropy after each epoch; entry 0 is the untrained
    /// (uniform) explainer.
    pub val_cross_entropy: Vec<f64>,
    pub best_epoch: usize,
}

/// Fits an explainer against `model`, which must be frozen and is never
/// modified. Targets are the frozen model's own task labels.
pub fn train_explainer(
    model: &ClassifierModel,
    train: &[EncodedExample],
    val: &[EncodedExample],
    config: &ExplainerConfig,
    seed: u64,
) -> Result<(ExplainerModel, ExplainerLog)> {
    if !model.is_frozen() {
        return Err(Error::Contract("explainers must be trained against a frozen classifier".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let mut explainer = ExplainerModel::new(config, model.vocab_size(), model.vocab_fingerprint(), seed)?;
    let mut adam = Adam::new(explainer.params(), config.learning_rate);
    let mut rng = seed::rng(seed, "explainer-train");
    let task = model.task();

    let mut log = ExplainerLog::default();
    let initial = explained_fidelity(&explainer, model, val).cross_entropy;
    log.val_cross_entropy.push(initial);
    let mut best = explainer.params().clone();
    let mut best_ce = initial;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        for (step, idx) in epoch_batches(train.len(), config.batch_size, &mut rng).iter().enumerate() {
            let examples: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&examples);
            let mut tape = Tape::new();
            let evars = explainer.bind(&mut tape, true);
            let s = explainer.saliency(&mut tape, &evars, &batch);
            let mvars = model.bind(&mut tape, false);
            let x = model.embed(&mut tape, &mvars, &batch);
            let xs = weight_embeddings(&mut tape, x, s);
            let logits = model.logits_from_embedded(&mut tape, &mvars, xs, &batch.lengths, batch.seq_len, None);
            let loss = tape.cross_entropy(logits, task.targets(&batch), None);
            if !tape.value(loss).get(0, 0).is_finite() {
                return Err(Error::Divergence {
                    stage: "explainer",
                    epoch,
                    step,
                });
            }
            tape.backward(loss);
            let mut grads = ParamSet::grads(&tape, &evars);
            nn::clip_by_value(&mut grads, config.grad_clip_value);
            adam.step(explainer.params_mut(), &grads);
        }
        let ce = explained_fidelity(&explainer, model, val).cross_entropy;
        log.val_cross_entropy.push(ce);
        if ce < best_ce {
            best_ce = ce;
            best = explainer.params().clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    *explainer.params_mut() = best;
    Ok((explainer, log))
}

/// One line of a saliency dump.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyRecord {
    pub id: u64,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
}

/// Renders `id<TAB>token:score token:score ...` lines with six-decimal
/// scores, preceded by a `# ` header line.
pub fn format_saliency_dump(header: &str, records: &[SaliencyRecord]) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for rec in records {
        let _ = write!(out, "{}\t", rec.id);
        let pairs: Vec<String> = rec
            .tokens
            .iter()
            .zip(&rec.scores)
            .map(|(t, s)| format!("{t}:{s:.6}"))
            .collect();
        let _ = writeln!(out, "{}", pairs.join(" "));
    }
    out
}

pub fn parse_saliency_dump(contents: &str) -> Result<Vec<SaliencyRecord>> {
    let mut out = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Load {
            line: idx + 1,
            message: message.to_owned(),
        };
        let (id, rest) = line.split_once('\t').ok_or_else(|| bad("missing id column"))?;
        let id = id.parse().map_err(|_| bad("id is not an integer"))?;
        let mut tokens = Vec::new();
        let mut scores = Vec::new();
        for pair in rest.split(' ').filter(|p| !p.is_empty()) {
            let (tok, score) = pair.rsplit_once(':').ok_or_else(|| bad("pair without ':'"))?;
            tokens.push(tok.to_owned());
            scores.push(score.parse().map_err(|_| bad("score is not a number"))?);
        }
        out.push(SaliencyRecord { id, tokens, scores });
    }
    Ok(out)
}

pub fn saliency_records(
    data: &[EncodedExample],
    saliency: &[SaliencyDistribution],
    vocab: &Vocabulary,
) -> Vec<SaliencyRecord> {
    data.iter()
        .zip(saliency)
        .map(|(ex, s)| SaliencyRecord {
            id: ex.id,
            tokens: crate::corpus::decode(ex, vocab),
            scores: s.real().to_vec(),
        })
        .collect()
}

pub fn write_saliency_dump(path: impl AsRef<Path>, header: &str, records: &[SaliencyRecord]) -> Result<()> {
    std::fs::write(path, format_saliency_dump(header, records))?;
    Ok(())
}
