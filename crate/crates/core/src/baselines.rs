//! Comparison debiasing methods: rebalancing each group's labels with
//! reserve examples, and loss reweighting by `P(y) / P(y | z)`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, ClassifierConfig, ClassifierModel, Task, TrainingLog};
use crate::corpus::{CellCounts, EncodedExample, Example, Labeled, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

/// Adds reserve examples of each group's minority label until both groups
/// hold equally many positives and negatives. Original examples come first.
pub fn data_augmentation(train: &[Example], reserve: &[Example], seed: u64) -> Result<Vec<Example>> {
    let counts = CellCounts::of(train);
    let mut rng = seed::rng(seed, "augment");
    let mut out = train.to_vec();
    for z in 0..2u8 {
        let (pos, neg) = (counts.get(1, z), counts.get(0, z));
        if pos == neg {
            continue;
        }
        let (y, needed) = if pos > neg { (0, pos - neg) } else { (1, neg - pos) };
        let mut candidates: Vec<&Example> = reserve.iter().filter(|e| e.y == y && e.z == z).collect();
        if candidates.len() < needed {
            return Err(Error::Capacity {
                y,
                z,
                needed,
                available: candidates.len(),
            });
        }
        candidates.shuffle(&mut rng);
        out.extend(candidates[..needed].iter().map(|&e| e.clone()));
    }
    Ok(out)
}

/// `weights[z][y] = P(y) / P(y | z)` estimated by counting.
pub fn cell_weights<T: Labeled>(train: &[T]) -> Result<[[f64; 2]; 2]> {
    let mut counts = [[0usize; 2]; 2];
    for ex in train {
        counts[ex.z() as usize][ex.y() as usize] += 1;
    }
    let mut weights = [[0.0; 2]; 2];
    let total = train.len() as f64;
    for z in 0..2 {
        let group: usize = counts[z].iter().sum();
        for y in 0..2 {
            if counts[z][y] == 0 {
                return Err(Error::Estimation { y: y as u8, z: z as u8 });
            }
            let p_y = (counts[0][y] + counts[1][y]) as f64 / total;
            let p_y_given_z = counts[z][y] as f64 / group as f64;
            weights[z][y] = p_y / p_y_given_z;
        }
    }
    Ok(weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub example: Example,
    pub weight: f64,
}

pub fn instance_weights(train: &[Example]) -> Result<Vec<WeightedExample>> {
    let w = cell_weights(train)?;
    Ok(train
        .iter()
        .map(|e| WeightedExample {
            example: e.clone(),
            weight: w[e.z as usize][e.y as usize],
        })
        .collect())
}

/// Classifier training with each example's cross-entropy scaled by its
/// weight; everything else matches unweighted training.
pub fn train_weighted(
    train: &[EncodedExample],
    weights: &[f64],
    val: &[EncodedExample],
    vocab: &Vocabulary,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifierModel, TrainingLog)> {
    if weights.len() != train.len() {
        return Err(Error::Validation(format!(
            "{} weights for {} training examples",
            weights.len(),
            train.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Validation(format!("instance weight {w} is not positive and finite")));
    }
    fit(train, Some(weights), val, vocab, config, Task::Label, seed)
}

/// `text<TAB>y<TAB>z<TAB>weight` rows.
pub fn write_weighted_tsv(path: impl AsRef<Path>, examples: &[WeightedExample]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for w in examples {
        let e = &w.example;
        writeln!(file, "{}\t{}\t{}\t{}", e.text(), e.y, e.z, w.weight)?;
    }
    file.flush()?;
    Ok(())
}
