//! Overlap between task and demographic saliency, measured with the
//! Jensen-Shannon divergence (base-2, so values lie in `[0, 1]`), and the
//! balance-rate sweep relating that overlap to demographic parity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{evaluate, train_classifier, ClassifierConfig, ClassifierModel, Task};
use crate::corpus::{build_balanced_split, CorpusSpec, EncodedExample, EncodedSplit, EncodingConfig, Example};
use crate::error::{Error, Result, StageExt};
use crate::explainer::{explained_fidelity, train_explainer, uniform_fidelity, ExplainerConfig, ExplainerModel, Fidelity};
use crate::fairness::{confusion_by_group, fairness_report};
use crate::seed;

const NORM_TOL: f64 = 1e-6;

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (2.0 * pi / (pi + qi)).log2())
        .sum()
}

/// `JS(P, Q) = ½ KL(P ‖ M) + ½ KL(Q ‖ M)` with `M = ½ (P + Q)`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Validation(format!(
            "distributions have different support sizes ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("P", p), ("Q", q)] {
        if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(format!("{name} has negative or non-finite mass")));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("{name} sums to {total}, not 1")));
        }
    }
    let js = 0.5 * kl_to_mixture(p, q) + 0.5 * kl_to_mixture(q, p);
    Ok(js.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub per_example: Vec<f64>,
    pub mean_js: f64,
    pub balance_rate: Option<f64>,
    pub dpd: Option<f64>,
}

/// Per-example JS between the two explainers' saliency on real tokens.
pub fn measure_overlap(
    task_explainer: &ExplainerModel,
    group_explainer: &ExplainerModel,
    data: &[EncodedExample],
) -> Result<OverlapReport> {
    if task_explainer.vocab_fingerprint() != group_explainer.vocab_fingerprint()
        || task_explainer.vocab_size() != group_explainer.vocab_size()
    {
        return Err(Error::Config("explainers were built over different vocabularies".into()));
    }
    let sy = task_explainer.explain(data);
    let sz = group_explainer.explain(data);
    let per_example = sy
        .iter()
        .zip(&sz)
        .filter(|(a, _)| a.length > 0)
        .map(|(a, b)| js_divergence(a.real(), b.real()))
        .collect::<Result<Vec<f64>>>()?;
    let mean_js = per_example.iter().sum::<f64>() / per_example.len().max(1) as f64;
    Ok(OverlapReport {
        per_example,
        mean_js,
        balance_rate: None,
        dpd: None,
    })
}

/// Everything a sweep cell needs besides its rate and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Template split; its `balance_rate` is overridden per row.
    pub corpus: CorpusSpec,
    pub encoding: EncodingConfig,
    pub classifier: ClassifierConfig,
    pub explainer: ExplainerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub balance_rate: f64,
    /// `None` marks a seed-averaged row.
    pub seed: Option<u64>,
    pub mean_js: f64,
    pub dpd: f64,
    /// Validation fidelity of the task and group explainers, each paired
    /// with the uniform-saliency baseline on the same frozen classifier.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fidelity: Vec<(Fidelity, Fidelity)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub averages: Vec<SweepRow>,
}

/// Frozen task and group classifiers with an explainer trained for each.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainerPair {
    pub task_model: ClassifierModel,
    pub group_model: ClassifierModel,
    pub task_explainer: ExplainerModel,
    pub group_explainer: ExplainerModel,
}

pub fn train_explainer_pair(
    data: &EncodedSplit,
    classifier: &ClassifierConfig,
    explainer: &ExplainerConfig,
    run_seed: u64,
) -> Result<ExplainerPair> {
    let train = |task, stage| {
        train_classifier(&data.train, &data.val, &data.vocab, classifier, task, seed::derive(run_seed, stage))
            .map(|(m, _)| m.freeze())
    };
    let task_model = train(Task::Label, "base").stage("task classifier")?;
    let group_model = train(Task::Group, "group-classifier").stage("group classifier")?;
    let explain = |model: &ClassifierModel, stage| {
        train_explainer(model, &data.train, &data.val, explainer, seed::derive(run_seed, stage)).map(|(e, _)| e)
    };
    let task_explainer = explain(&task_model, "task-explainer").stage("task explainer")?;
    let group_explainer = explain(&group_model, "group-explainer").stage("group explainer")?;
    Ok(ExplainerPair {
        task_model,
        group_model,
        task_explainer,
        group_explainer,
    })
}

impl ExplainerPair {
    /// Explained and uniform-saliency fidelity of both explainers.
    pub fn fidelity(&self, data: &[EncodedExample]) -> Vec<(Fidelity, Fidelity)> {
        [
            (&self.task_explainer, &self.task_model),
            (&self.group_explainer, &self.group_model),
        ]
        .into_iter()
        .map(|(e, m)| (explained_fidelity(e, m, data), uniform_fidelity(m, data)))
        .collect()
    }

    /// Overlap on `data` together with the task model's DPD there.
    pub fn overlap(&self, data: &[EncodedExample]) -> Result<OverlapReport> {
        let mut report = measure_overlap(&self.task_explainer, &self.group_explainer, data)?;
        let eval = evaluate(&self.task_model, data, Task::Label);
        report.dpd = Some(fairness_report(&confusion_by_group(&eval.predictions, data)?)?.dpd);
        Ok(report)
    }
}

/// One (rate, seed) cell of the sweep.
pub fn overlap_run(pool: &[Example], settings: &SweepSettings, rate: f64, run_seed: u64) -> Result<SweepRow> {
    let spec = CorpusSpec {
        balance_rate: rate,
        ..settings.corpus.clone()
    };
    let split = build_balanced_split(pool, &spec, seed::derive(run_seed, "split"))?;
    let data = EncodedSplit::new(&split, &settings.encoding);
    let pair = train_explainer_pair(&data, &settings.classifier, &settings.explainer, run_seed)?;
    let overlap = pair.overlap(&data.test)?;
    Ok(SweepRow {
        balance_rate: rate,
        seed: Some(run_seed),
        mean_js: overlap.mean_js,
        dpd: overlap.dpd.unwrap_or_default(),
        fidelity: pair.fidelity(&data.val),
    })
}

/// Runs every (rate, seed) cell and appends one seed-averaged row per rate.
pub fn balance_sweep(rates: &[f64], pool: &[Example], settings: &SweepSettings, seeds: &[u64]) -> Result<SweepTable> {
    if let Some(bad) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::Validation(format!("balance rate {bad} outside (0, 1)")));
    }
    let mut rows = Vec::with_capacity(rates.len() * seeds.len());
    let mut averages = Vec::with_capacity(rates.len());
    for &rate in rates {
        let start = rows.len();
        for &s in seeds {
            rows.push(overlap_run(pool, settings, rate, s).stage(format!("sweep at balance rate {rate}"))?);
        }
        let cell = &rows[start..];
        let n = cell.len().max(1) as f64;
        averages.push(SweepRow {
            balance_rate: rate,
            seed: None,
            mean_js: cell.iter().map(|r| r.mean_js).sum::<f64>() / n,
            dpd: cell.iter().map(|r| r.dpd).sum::<f64>() / n,
            fidelity: Vec::new(),
        });
    }
    Ok(SweepTable { rows, averages })
}

impl SweepTable {
    /// `balance_rate,seed,mean_js,dpd` rows followed by `seed = avg` rows.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("balance_rate,seed,mean_js,dpd\n");
        for r in self.rows.iter().chain(&self.averages) {
            let seed = r.seed.map_or_else(|| "avg".to_owned(), |s| s.to_string());
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.balance_rate, seed, r.mean_js, r.dpd);
        }
        out
    }

    /// Series for a two-axis plot of the seed-averaged rows.
    pub fn plot_data(&self) -> PlotData {
        PlotData {
            balance_rate: self.averages.iter().map(|r| r.balance_rate).collect(),
            mean_js: self.averages.iter().map(|r| r.mean_js).collect(),
            dpd: self.averages.iter().map(|r| r.dpd).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub balance_rate: Vec<f64>,
    pub mean_js: Vec<f64>,
    pub dpd: Vec<f64>,
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, PAD};
    use crate::explainer::ExplainerConfig;

    /// Direct term-by-term evaluation used as the reference.
    fn js_reference(p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..p.len() {
            let m = 0.5 * (p[i] + q[i]);
            if p[i] > 0.0 {
                total += 0.5 * p[i] * (p[i] / m).log2();
            }
            if q[i] > 0.0 {
                total += 0.5 * q[i] * (q[i] / m).log2();
            }
        }
        total
    }

    #[test]
    fn js_known_values() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        // ½·log2(4/3) + ½·(½·log2(2/3) + ½)
        let hand = 0.5 * (4.0f64 / 3.0).log2() + 0.5 * (0.5 * (2.0f64 / 3.0).log2() + 0.5);
        let v = js_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - hand).abs() < 1e-12);
        assert!((v - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn js_rejects_bad_input() {
        assert!(js_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn spearman_perfect_and_tied() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn same_explainer_has_zero_overlap_distance() {
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let vocab = build_vocab(&[Example::new(0, words, 0, 0).unwrap()], 1, 100);
        let cfg = ExplainerConfig { embedding_dim: 4, hidden: 3, ..Default::default() };
        let e = ExplainerModel::for_vocab(&cfg, &vocab, 1).unwrap();
        let data: Vec<EncodedExample> = (0..4)
            .map(|i| EncodedExample { id: i, ids: vec![2, 3 + i as usize, PAD], length: 2, y: 0, z: 0 })
            .collect();
        let r = measure_overlap(&e, &e, &data).unwrap();
        assert_eq!(r.mean_js, 0.0);
        let mean = r.per_example.iter().sum::<f64>() / r.per_example.len() as f64;
        assert_eq!(r.mean_js, mean);

        let other_vocab = build_vocab(&[Example::new(0, vec!["zz".into()], 0, 0).unwrap()], 1, 100);
        let f = ExplainerModel::for_vocab(&cfg, &other_vocab, 1).unwrap();
        assert!(matches!(measure_overlap(&e, &f, &data), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_csv_layout() {
        let row = |rate, seed| SweepRow { balance_rate: rate, seed, mean_js: 0.5, dpd: 1.25, fidelity: vec![] };
        let table = SweepTable {
            rows: vec![row(0.5, Some(1)), row(0.5, Some(2))],
            averages: vec![row(0.5, None)],
        };
        let csv = table.to_csv("run");
        assert_eq!(
            csv,
            "# run\nbalance_rate,seed,mean_js,dpd\n0.5,1,0.500000,1.250000\n0.5,2,0.500000,1.250000\n0.5,avg,0.500000,1.250000\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..1.0, n).prop_filter_map("non-zero", |v| {
                let s: f64 = v.iter().sum();
                (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
            })
        }

        proptest! {
            #[test]
            fn js_is_symmetric_bounded_and_matches_reference((p, q) in (1usize..8).prop_flat_map(|n| (dist(n), dist(n)))) {
                let a = js_divergence(&p, &q).unwrap();
                let b = js_divergence(&q, &p).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - js_reference(&p, &q)).abs() < 1e-9);
                prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
            }
        }
    }
}
