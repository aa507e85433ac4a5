//! Per-group confusion counts and the FPED / FNED / DPD fairness summary.
//!
//! All rates are percentages. The overall false positive (negative) rate is
//! computed from pooled counts across both groups.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{evaluate, train_classifier, ClassifierConfig, Task};
use crate::corpus::{build_balanced_split, CorpusSpec, EncodedSplit, EncodingConfig, Example, Labeled};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn actual_negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn actual_positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn predicted_positives(&self) -> usize {
        self.tp + self.fp
    }

    fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Confusion counts indexed by group (`groups[0]` is Group I).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub groups: [Confusion; 2],
}

pub fn confusion_by_group<T: Labeled>(predictions: &[u8], dataset: &[T]) -> Result<GroupConfusion> {
    if predictions.len() != dataset.len() {
        return Err(Error::Alignment {
            predictions: predictions.len(),
            examples: dataset.len(),
        });
    }
    let mut out = GroupConfusion::default();
    for (&p, ex) in predictions.iter().zip(dataset) {
        let c = &mut out.groups[ex.z() as usize];
        match (ex.y(), p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, _) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub false_positive: f64,
    pub false_negative: f64,
    pub parity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub groups: [GroupRates; 2],
    pub overall_false_positive: f64,
    pub overall_false_negative: f64,
    pub fped: f64,
    pub fned: f64,
    pub dpd: f64,
}

fn pct(num: usize, den: usize) -> f64 {
    100.0 * num as f64 / den as f64
}

pub fn fairness_report(confusion: &GroupConfusion) -> Result<FairnessReport> {
    let mut missing = Vec::new();
    for (z, c) in confusion.groups.iter().enumerate() {
        let name = if z == 0 { "Group I" } else { "Group II" };
        if c.actual_negatives() == 0 {
            missing.push(format!("{name} false positive rate (no actual negatives)"));
        }
        if c.actual_positives() == 0 {
            missing.push(format!("{name} false negative rate (no actual positives)"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MetricUndefined { unavailable: missing });
    }
    let groups = confusion.groups.map(|c| GroupRates {
        false_positive: pct(c.fp, c.actual_negatives()),
        false_negative: pct(c.fn_, c.actual_positives()),
        parity: pct(c.predicted_positives(), c.total()),
    });
    let pooled = confusion.groups[0].merge(&confusion.groups[1]);
    let overall_fp = pct(pooled.fp, pooled.actual_negatives());
    let overall_fn = pct(pooled.fn_, pooled.actual_positives());
    let fped = groups.iter().map(|g| (g.false_positive - overall_fp).abs()).sum();
    let fned = groups.iter().map(|g| (g.false_negative - overall_fn).abs()).sum();
    Ok(FairnessReport {
        groups,
        overall_false_positive: overall_fp,
        overall_false_negative: overall_fn,
        fped,
        fned,
        dpd: (groups[0].parity - groups[1].parity).abs(),
    })
}

/// Per-group rates of one preliminary-study run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub label: String,
    pub balance_rate: f64,
    pub seed: u64,
    pub report: FairnessReport,
    pub accuracy: f64,
}

/// Plain-text table with per-group false positive / false negative /
/// parity columns, two decimals.
pub fn render_bias_table(rows: &[BiasRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>6} | {:>8} {:>8} | {:>8} {:>8} | {:>8} {:>8}",
        "run", "rate", "seed", "FP I", "FP II", "FN I", "FN II", "DP I", "DP II"
    );
    for r in rows {
        let g = &r.report.groups;
        let _ = writeln!(
            out,
            "{:<24} {:>6.2} {:>6} | {:>8.2} {:>8.2} | {:>8.2} {:>8.2} | {:>8.2} {:>8.2}",
            r.label,
            r.balance_rate,
            r.seed,
            g[0].false_positive,
            g[1].false_positive,
            g[0].false_negative,
            g[1].false_negative,
            g[0].parity,
            g[1].parity
        );
    }
    out
}

/// Builds the `spec` split from `pool`, trains a base classifier on it and
/// reports per-group rates on the balanced test set.
pub fn preliminary_bias_run(
    pool: &[Example],
    spec: &CorpusSpec,
    encoding: &EncodingConfig,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<BiasRow> {
    let split = build_balanced_split(pool, spec, seed::derive(seed, "split"))?;
    let data = EncodedSplit::new(&split, encoding);
    let (model, _) = train_classifier(
        &data.train,
        &data.val,
        &data.vocab,
        config,
        Task::Label,
        seed::derive(seed, "base"),
    )?;
    let eval = evaluate(&model, &data.test, Task::Label);
    let report = fairness_report(&confusion_by_group(&eval.predictions, &data.test)?)?;
    Ok(BiasRow {
        label: format!("base-{}", config.architecture),
        balance_rate: spec.balance_rate,
        seed,
        report,
        accuracy: eval.accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(y: u8, z: u8) -> Example {
        Example::new(0, vec!["t".into()], y, z).unwrap()
    }

    /// Counts reproducing the given per-group rates with 10,000 actual
    /// positives and negatives in each group.
    fn from_rates(fp: [f64; 2], fnr: [f64; 2]) -> GroupConfusion {
        let scale = 10_000.0;
        let mut g = GroupConfusion::default();
        for z in 0..2 {
            let fpc = (fp[z] / 100.0 * scale).round() as usize;
            let fnc = (fnr[z] / 100.0 * scale).round() as usize;
            g.groups[z] = Confusion {
                tp: 10_000 - fnc,
                fp: fpc,
                tn: 10_000 - fpc,
                fn_: fnc,
            };
        }
        g
    }

    #[test]
    fn hand_enumerated_confusion() {
        let data = [ex(1, 0), ex(0, 0), ex(1, 1), ex(0, 1)];
        let c = confusion_by_group(&[1, 1, 0, 0], &data).unwrap();
        assert_eq!(c.groups[0], Confusion { tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert_eq!(c.groups[1], Confusion { tp: 0, fp: 0, tn: 1, fn_: 1 });
    }

    #[test]
    fn all_correct_and_all_flipped() {
        let data = [ex(1, 0), ex(0, 0), ex(1, 1), ex(0, 1)];
        let c = confusion_by_group(&[1, 0, 1, 0], &data).unwrap();
        assert!(c.groups.iter().all(|g| g.fp == 0 && g.fn_ == 0));
        let c = confusion_by_group(&[0, 1, 0, 1], &data).unwrap();
        assert!(c.groups.iter().all(|g| g.tp == 0 && g.tn == 0));
    }

    #[test]
    fn misaligned_predictions() {
        let err = confusion_by_group(&[1], &[ex(1, 0), ex(0, 0)]).unwrap_err();
        assert!(matches!(err, Error::Alignment { predictions: 1, examples: 2 }));
    }

    #[test]
    fn published_group_rates_reproduce_summary() {
        let r = fairness_report(&from_rates([46.97, 23.38], [21.29, 62.75])).unwrap();
        assert!((r.overall_false_positive - 35.175).abs() < 1e-9);
        assert!((r.fped - 23.59).abs() < 1e-9);
        assert!((r.fned - 41.46).abs() < 1e-9);
        assert!((r.fped - (46.97 - 23.38)).abs() < 1e-9);
        assert!((r.groups[0].parity - 62.84).abs() < 1e-9);
        assert!((r.dpd - 32.52).abs() < 0.01);
    }

    #[test]
    fn identical_groups_are_fair() {
        let c = Confusion { tp: 30, fp: 10, tn: 40, fn_: 20 };
        let r = fairness_report(&GroupConfusion { groups: [c, c] }).unwrap();
        assert_eq!((r.fped, r.fned, r.dpd), (0.0, 0.0, 0.0));
    }

    #[test]
    fn group_swap_is_symmetric() {
        let a = Confusion { tp: 30, fp: 12, tn: 40, fn_: 20 };
        let b = Confusion { tp: 5, fp: 1, tn: 70, fn_: 45 };
        let r1 = fairness_report(&GroupConfusion { groups: [a, b] }).unwrap();
        let r2 = fairness_report(&GroupConfusion { groups: [b, a] }).unwrap();
        assert!((r1.fped - r2.fped).abs() < 1e-12);
        assert!((r1.fned - r2.fned).abs() < 1e-12);
        assert!((r1.dpd - r2.dpd).abs() < 1e-12);
    }

    #[test]
    fn empty_negatives_are_undefined() {
        let a = Confusion { tp: 3, fp: 0, tn: 0, fn_: 1 };
        let b = Confusion { tp: 3, fp: 1, tn: 2, fn_: 1 };
        match fairness_report(&GroupConfusion { groups: [a, b] }) {
            Err(Error::MetricUndefined { unavailable }) => {
                assert_eq!(unavailable.len(), 1);
                assert!(unavailable[0].contains("Group I false positive"));
            }
            other => panic!("{other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn confusion() -> impl Strategy<Value = Confusion> {
            (1usize..200, 1usize..200, 1usize..200, 1usize..200)
                .prop_map(|(tp, fp, tn, fn_)| Confusion { tp, fp, tn, fn_ })
        }

        proptest! {
            #[test]
            fn equal_negatives_make_fped_the_rate_gap(a in confusion(), b in confusion()) {
                let negatives = a.actual_negatives();
                let fp_b = b.fp.min(negatives);
                let b = Confusion { fp: fp_b, tn: negatives - fp_b, ..b };
                prop_assume!(b.tn + b.fp > 0);
                let r = fairness_report(&GroupConfusion { groups: [a, b] }).unwrap();
                let gap = (r.groups[0].false_positive - r.groups[1].false_positive).abs();
                prop_assert!((r.fped - gap).abs() < 1e-9);
            }

            #[test]
            fn dpd_in_range(a in confusion(), b in confusion()) {
                let r = fairness_report(&GroupConfusion { groups: [a, b] }).unwrap();
                prop_assert!((0.0..=100.0).contains(&r.dpd));
                prop_assert!(r.fped >= 0.0 && r.fned >= 0.0);
            }
        }
    }
}
