//! Corrector + adversary debiasing with a first-order bi-level optimiser.
//!
//! The corrector emits a saliency distribution over tokens, the main
//! classifier reads the saliency-weighted embeddings, and an adversarial
//! group classifier reads the same input through a gradient-reversal layer.
//! Each loop iteration takes one corrector step on a batch from the
//! augmented validation set (validation plus training) and then one
//! classifier step on a training batch.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{epoch_batches, ClassifierConfig, ClassifierModel, Predictor, Task, EVAL_BATCH};
use crate::corpus::{Batch, EncodedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::explainer::{weight_embeddings, ExplainerConfig, ExplainerModel};
use crate::nn::{self, Adam, ParamSet};
use crate::seed;
use crate::tensor::{softmax_rows, Matrix, Tape, Var};

/// Identity forward, `-lambda` times the upstream gradient backward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReversal {
    pub lambda: f64,
}

impl Default for GradientReversal {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl GradientReversal {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.reverse_gradient(x, self.lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub corrector_learning_rate: f64,
    pub main_learning_rate: f64,
    pub adversary_learning_rate: f64,
    pub lambda: f64,
    /// Inner virtual-step size; only the first-order case `0` is supported.
    pub xi: f64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            corrector_learning_rate: 0.001,
            main_learning_rate: 0.001,
            adversary_learning_rate: 0.001,
            lambda: 1.0,
            xi: 0.0,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("debias epochs and batch_size must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.xi < 0.0 {
            return Err(Error::Config(format!("xi must be non-negative, got {}", self.xi)));
        }
        if self.xi > 0.0 {
            return Err(Error::Config("second-order updates (xi > 0) are not supported".into()));
        }
        let lrs = [
            self.corrector_learning_rate,
            self.main_learning_rate,
            self.adversary_learning_rate,
        ];
        if lrs.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Which parameter group a graph is built to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Corrector,
    Classifiers,
    Inference,
}

struct Graph {
    saliency: Var,
    logits_y: Var,
    logits_z: Var,
    corrector: Vec<Var>,
    main: Vec<Var>,
    adversary: Vec<Var>,
}

/// Values returned by [`DebiasState::forward_debiased`].
#[derive(Clone, Debug, PartialEq)]
pub struct DebiasedOutputs {
    pub y_probs: Matrix,
    pub z_probs: Matrix,
    pub saliency: Matrix,
}

/// Losses observed during one [`DebiasState::darts_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub val_label: f64,
    pub val_group: f64,
    pub train_label: f64,
    pub train_group: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasState {
    pub corrector: ExplainerModel,
    pub main: ClassifierModel,
    pub adversary: ClassifierModel,
    pub reversal: GradientReversal,
    pub xi: f64,
    clip: f64,
    corrector_opt: Adam,
    main_opt: Adam,
    adversary_opt: Adam,
    steps: usize,
}

impl DebiasState {
    pub fn new(
        vocab: &Vocabulary,
        classifier: &ClassifierConfig,
        corrector: &ExplainerConfig,
        config: &DebiasConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let main = ClassifierModel::new(classifier, Task::Label, vocab, seed::derive(seed, "main"))?;
        let adversary = ClassifierModel::new(classifier, Task::Group, vocab, seed::derive(seed, "adversary"))?;
        let corrector = ExplainerModel::for_vocab(corrector, vocab, seed::derive(seed, "corrector"))?;
        Ok(Self {
            corrector_opt: Adam::new(corrector.params(), config.corrector_learning_rate),
            main_opt: Adam::new(main.params(), config.main_learning_rate),
            adversary_opt: Adam::new(adversary.params(), config.adversary_learning_rate),
            corrector,
            main,
            adversary,
            reversal: GradientReversal { lambda: config.lambda },
            xi: config.xi,
            clip: classifier.grad_clip_value,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Both classifiers read `X_S` built from the main model's embeddings;
    /// the adversary's own embedding table is never consulted.
    fn build(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        phase: Phase,
        reverse: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Graph {
        let corrector = self.corrector.bind(tape, phase == Phase::Corrector);
        let main = self.main.bind(tape, phase == Phase::Classifiers);
        let adversary = self.adversary.bind(tape, phase == Phase::Classifiers);
        let saliency = self.corrector.saliency(tape, &corrector, batch);
        let embedded = self.main.embed(tape, &main, batch);
        let weighted = weight_embeddings(tape, embedded, saliency);
        let logits_y = self.main.logits_from_embedded(
            tape,
            &main,
            weighted,
            &batch.lengths,
            batch.seq_len,
            rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
        );
        // While the classifiers train, the adversary sees X_S as data so its
        // loss cannot leak into the main model's embedding table.
        let adversary_input = match phase {
            Phase::Classifiers => tape.constant(tape.value(weighted).clone()),
            _ if reverse => self.reversal.apply(tape, weighted),
            _ => weighted,
        };
        let logits_z = self.adversary.logits_from_embedded(
            tape,
            &adversary,
            adversary_input,
            &batch.lengths,
            batch.seq_len,
            rng.map(|r| r as &mut dyn RngCore),
        );
        Graph {
            saliency,
            logits_y,
            logits_z,
            corrector,
            main,
            adversary,
        }
    }

    /// `(P(y), P(z), S)` for one batch, in inference mode.
    pub fn forward_debiased(&self, batch: &Batch) -> Result<DebiasedOutputs> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let g = self.build(&mut tape, batch, Phase::Inference, true, None);
        Ok(DebiasedOutputs {
            y_probs: softmax_rows(tape.value(g.logits_y)),
            z_probs: softmax_rows(tape.value(g.logits_z)),
            saliency: tape.value(g.saliency).clone(),
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let vocab = self.main.vocab_size();
        if let Some(bad) = batch.ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Stage {
                stage: "corrector".into(),
                source: Box::new(Error::Shape(format!("token id {bad} outside vocabulary of {vocab}"))),
            });
        }
        if batch.ids.len() != batch.lengths.len() * batch.seq_len {
            return Err(Error::Stage {
                stage: "corrector".into(),
                source: Box::new(Error::Shape(format!(
                    "{} ids for {} rows of length {}",
                    batch.ids.len(),
                    batch.lengths.len(),
                    batch.seq_len
                ))),
            });
        }
        Ok(())
    }

    /// Corrector gradients of the adversarial loss alone, with or without
    /// the reversal layer; dropout off.
    pub fn adversarial_corrector_gradients(&self, batch: &Batch, reverse: bool) -> Vec<Option<Matrix>> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, batch, Phase::Corrector, reverse, None);
        let loss = tape.cross_entropy(g.logits_z, &batch.z, None);
        tape.backward(loss);
        ParamSet::grads(&tape, &g.corrector)
    }

    /// Mean `L^Y + L^Z` on a batch in inference mode, as used for the
    /// corrector objective.
    pub fn combined_loss(&self, batch: &Batch) -> (f64, f64) {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, batch, Phase::Inference, true, None);
        let ly = tape.cross_entropy(g.logits_y, &batch.y, None);
        let lz = tape.cross_entropy(g.logits_z, &batch.z, None);
        (tape.value(ly).get(0, 0), tape.value(lz).get(0, 0))
    }

    /// Step (a) descends `Θ` on `L^Y + L^Z` over `val_batch`; step (b)
    /// descends the two classifiers on their own losses over `train_batch`.
    pub fn darts_step(&mut self, train_batch: &Batch, val_batch: &Batch, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        self.check_batch(val_batch)?;
        self.check_batch(train_batch)?;
        let (val_label, val_group) = self.corrector_step(val_batch, rng)?;
        let (train_label, train_group) = self.classifier_step(train_batch, rng)?;
        self.steps += 1;
        Ok(StepLosses {
            val_label,
            val_group,
            train_label,
            train_group,
        })
    }

    fn diverged(&self, stage: &'static str) -> Error {
        Error::Divergence {
            stage,
            epoch: 0,
            step: self.steps,
        }
    }

    pub(crate) fn corrector_step(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, batch, Phase::Corrector, true, Some(rng));
        let ly = tape.cross_entropy(g.logits_y, &batch.y, None);
        let lz = tape.cross_entropy(g.logits_z, &batch.z, None);
        let loss = tape.add(ly, lz);
        if !tape.value(loss).get(0, 0).is_finite() {
            return Err(self.diverged("corrector"));
        }
        tape.backward(loss);
        let mut grads = ParamSet::grads(&tape, &g.corrector);
        if !nn::grads_finite(&grads) {
            return Err(self.diverged("corrector"));
        }
        nn::clip_by_value(&mut grads, self.clip);
        self.corrector_opt.step(self.corrector.params_mut(), &grads);
        Ok((tape.value(ly).get(0, 0), tape.value(lz).get(0, 0)))
    }

    pub(crate) fn classifier_step(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, batch, Phase::Classifiers, true, Some(rng));
        let ly = tape.cross_entropy(g.logits_y, &batch.y, None);
        let lz = tape.cross_entropy(g.logits_z, &batch.z, None);
        let loss = tape.add(ly, lz);
        if !tape.value(loss).get(0, 0).is_finite() {
            return Err(self.diverged("classifiers"));
        }
        tape.backward(loss);
        let mut main_grads = ParamSet::grads(&tape, &g.main);
        let mut adv_grads = ParamSet::grads(&tape, &g.adversary);
        if !nn::grads_finite(&main_grads) || !nn::grads_finite(&adv_grads) {
            return Err(self.diverged("classifiers"));
        }
        nn::clip_by_value(&mut main_grads, self.clip);
        nn::clip_by_value(&mut adv_grads, self.clip);
        self.main_opt.step(self.main.params_mut(), &main_grads);
        self.adversary_opt.step(self.adversary.params_mut(), &adv_grads);
        Ok((tape.value(ly).get(0, 0), tape.value(lz).get(0, 0)))
    }

    pub fn into_model(self) -> DebiasedModel {
        DebiasedModel {
            corrector: self.corrector,
            main: self.main,
        }
    }
}

/// Inference path `corrector -> X_S -> M^Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasedModel {
    pub corrector: ExplainerModel,
    pub main: ClassifierModel,
}

impl DebiasedModel {
    fn probs(&self, batch: &Batch) -> Matrix {
        let mut tape = Tape::new();
        let cv = self.corrector.bind(&mut tape, false);
        let mv = self.main.bind(&mut tape, false);
        let s = self.corrector.saliency(&mut tape, &cv, batch);
        let x = self.main.embed(&mut tape, &mv, batch);
        let xs = weight_embeddings(&mut tape, x, s);
        let logits = self
            .main
            .logits_from_embedded(&mut tape, &mv, xs, &batch.lengths, batch.seq_len, None);
        softmax_rows(tape.value(logits))
    }
}

impl Predictor for DebiasedModel {
    fn predict_proba(&self, data: &[EncodedExample]) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(EVAL_BATCH) {
            let p = self.probs(&Batch::from_slice(chunk));
            out.extend((0..p.rows()).map(|r| [p.get(r, 0), p.get(r, 1)]));
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DebiasEpoch {
    pub epoch: usize,
    pub mean: StepLosses,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DebiasLog {
    pub epochs: Vec<DebiasEpoch>,
}

/// Runs exactly `config.epochs` passes over `train`, one corrector step on
/// a batch of `val ∪ train` per classifier step. No validation-based model
/// selection is done because validation data takes part in training.
pub fn train_debiased(
    train: &[EncodedExample],
    val: &[EncodedExample],
    vocab: &Vocabulary,
    classifier: &ClassifierConfig,
    corrector: &ExplainerConfig,
    config: &DebiasConfig,
    seed: u64,
) -> Result<(DebiasedModel, DebiasState, DebiasLog)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let mut state = DebiasState::new(vocab, classifier, corrector, config, seed)?;
    let mut rng = seed::rng(seed, "debias-train");
    let augmented: Vec<&EncodedExample> = val.iter().chain(train).collect();
    let mut val_order: Vec<Vec<usize>> = Vec::new();
    let mut log = DebiasLog::default();

    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train.len(), config.batch_size, &mut rng);
        let mut sum = StepLosses::default();
        for (step, idx) in batches.iter().enumerate() {
            if val_order.is_empty() {
                val_order = epoch_batches(augmented.len(), config.batch_size, &mut rng);
                val_order.reverse();
            }
            let vidx = val_order.pop().expect("refilled above");
            let val_examples: Vec<&EncodedExample> = vidx.iter().map(|&i| augmented[i]).collect();
            let train_examples: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let losses = state
                .darts_step(&Batch::new(&train_examples), &Batch::new(&val_examples), &mut rng)
                .map_err(|e| match e {
                    Error::Divergence { stage, .. } => Error::Divergence { stage, epoch, step },
                    other => other,
                })?;
            sum.val_label += losses.val_label;
            sum.val_group += losses.val_group;
            sum.train_label += losses.train_label;
            sum.train_group += losses.train_group;
        }
        let n = batches.len() as f64;
        log.epochs.push(DebiasEpoch {
            epoch,
            mean: StepLosses {
                val_label: sum.val_label / n,
                val_group: sum.val_group / n,
                train_label: sum.train_label / n,
                train_group: sum.train_group / n,
            },
        });
    }
    Ok((state.clone().into_model(), state, log))
}
