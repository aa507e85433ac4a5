//! Parameter storage, initialisers, Adam, gradient clipping and the GRU cell
//! shared by the classifiers, the explainer and the corrector.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Tape, Var};

/// Named, ordered list of parameter tensors owned by one model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Places every parameter on the tape. `trainable = false` binds them as
    /// constants so no gradient is accumulated for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect()
    }

    /// Gradients for previously bound vars, `None` where nothing flowed.
    pub fn grads(tape: &Tape, vars: &[Var]) -> Vec<Option<Matrix>> {
        vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

pub fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(0.0, 1.0).expect("valid normal");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Embedding table with N(0, 1) rows and an all-zero padding row.
pub fn embedding_table(vocab: usize, dim: usize, pad: usize, rng: &mut impl Rng) -> Matrix {
    let mut table = normal_matrix(vocab, dim, rng);
    table.row_mut(pad).fill(0.0);
    table
}

/// Per-component value clipping.
pub fn clip_by_value(grads: &mut [Option<Matrix>], clip: f64) {
    for g in grads.iter_mut().flatten() {
        g.data_mut().iter_mut().for_each(|v| *v = v.clamp(-clip, clip));
    }
}

pub fn grads_finite(grads: &[Option<Matrix>]) -> bool {
    grads
        .iter()
        .flatten()
        .all(|g| g.data().iter().all(|v| v.is_finite()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .values()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; parameters whose gradient is `None` are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Matrix>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut params.values_mut()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Inverted dropout applied when an rng is supplied; identity otherwise.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut dyn rand::RngCore>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let (rows, cols) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Matrix::from_vec(rows, cols, mask));
    tape.mul(x, mask)
}

/// Indices of a GRU layer's four tensors inside a [`ParamSet`].
///
/// Gate order inside the packed matrices is (reset, update, new), as in
/// the usual cuDNN/PyTorch layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruLayer {
    pub input_dim: usize,
    pub hidden: usize,
    w_input: usize,
    w_hidden: usize,
    b_input: usize,
    b_hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl GruLayer {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = params.push(
            format!("{prefix}.w_input"),
            uniform_matrix(input_dim, 3 * hidden, bound, rng),
        );
        let w_hidden = params.push(
            format!("{prefix}.w_hidden"),
            uniform_matrix(hidden, 3 * hidden, bound, rng),
        );
        let b_input = params.push(format!("{prefix}.b_input"), uniform_matrix(1, 3 * hidden, bound, rng));
        let b_hidden = params.push(format!("{prefix}.b_hidden"), uniform_matrix(1, 3 * hidden, bound, rng));
        Self {
            input_dim,
            hidden,
            w_input,
            w_hidden,
            b_input,
            b_hidden,
        }
    }

    /// Runs the layer over a `(batch * seq_len) x input_dim` sequence and
    /// returns the hidden state at every position.
    ///
    /// The state only advances on real positions (`t < lengths[b]`); in the
    /// forward direction the final entry is therefore the hidden state at the
    /// last real token, and in the backward direction each real position only
    /// sees real tokens at or after it.
    pub fn run(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        lengths: &[usize],
        seq_len: usize,
        direction: Direction,
    ) -> Vec<Var> {
        let batch = lengths.len();
        let h = self.hidden;
        let projected = tape.matmul(x, vars[self.w_input]);
        let projected = tape.add_row(projected, vars[self.b_input]);
        let mut state = tape.constant(Matrix::zeros(batch, h));
        let mut states = vec![state; seq_len];
        let order: Vec<usize> = match direction {
            Direction::Forward => (0..seq_len).collect(),
            Direction::Backward => (0..seq_len).rev().collect(),
        };
        for t in order {
            let rows: Vec<usize> = (0..batch).map(|b| b * seq_len + t).collect();
            let gi = tape.select_rows(projected, &rows);
            let gh = tape.matmul(state, vars[self.w_hidden]);
            let gh = tape.add_row(gh, vars[self.b_hidden]);

            let gi_r = tape.slice_cols(gi, 0, h);
            let gi_z = tape.slice_cols(gi, h, 2 * h);
            let gi_n = tape.slice_cols(gi, 2 * h, 3 * h);
            let gh_r = tape.slice_cols(gh, 0, h);
            let gh_z = tape.slice_cols(gh, h, 2 * h);
            let gh_n = tape.slice_cols(gh, 2 * h, 3 * h);

            let r = tape.add(gi_r, gh_r);
            let r = tape.sigmoid(r);
            let z = tape.add(gi_z, gh_z);
            let z = tape.sigmoid(z);
            let rn = tape.mul(r, gh_n);
            let n = tape.add(gi_n, rn);
            let n = tape.tanh(n);
            // h' = n + z * (h - n)
            let diff = tape.sub(state, n);
            let keep = tape.mul(z, diff);
            let candidate = tape.add(n, keep);

            let mask: Vec<f64> = lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
            if mask.iter().all(|&m| m == 1.0) {
                state = candidate;
            } else if mask.contains(&1.0) {
                let mask = tape.constant(Matrix::column(mask));
                let delta = tape.sub(candidate, state);
                let delta = tape.scale_rows(delta, mask);
                state = tape.add(state, delta);
            }
            states[t] = state;
        }
        states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clipping_bounds_every_component() {
        let mut grads = vec![
            Some(Matrix::from_vec(1, 4, vec![-3.0, 0.1, 0.25, 9.0])),
            None,
        ];
        clip_by_value(&mut grads, 0.25);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[-0.25, 0.1, 0.25, 0.25]);
    }

    #[test]
    fn adam_skips_params_without_gradient() {
        let mut params = ParamSet::default();
        params.push("a", Matrix::filled(1, 2, 1.0));
        params.push("b", Matrix::filled(1, 2, 1.0));
        let mut adam = Adam::new(&params, 0.1);
        adam.step(&mut params, &[Some(Matrix::filled(1, 2, 0.5)), None]);
        assert!((params.get(0).get(0, 0) - 0.9).abs() < 1e-6);
        assert_eq!(params.get(1), &Matrix::filled(1, 2, 1.0));
    }

    #[test]
    fn gru_state_freezes_after_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::default();
        let layer = GruLayer::new(&mut params, "gru", 2, 3, &mut rng);
        let x = normal_matrix(2 * 4, 2, &mut rng);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(x);
        let states = layer.run(&mut tape, &vars, xv, &[2, 4], 4, Direction::Forward);
        let last = tape.value(states[3]).row(0).to_vec();
        let at_len = tape.value(states[1]).row(0).to_vec();
        assert_eq!(last, at_len);
    }
}
