//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p implicit-debias --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use implicit_debias::baselines::cell_weights;
use implicit_debias::classifiers::{Architecture, ClassifierConfig, ClassifierModel, Task};
use implicit_debias::corpus::{
    build_balanced_split, build_vocab, generate_synthetic_pool, Batch, CorpusSpec, EncodedExample, Example,
    SyntheticGenSpec, PAD,
};
use implicit_debias::debiaser::{DebiasConfig, DebiasState};
use implicit_debias::explainer::{ExplainerConfig, ExplainerModel};
use implicit_debias::fairness::{fairness_report, Confusion, GroupConfusion};
use implicit_debias::nn::{normal_matrix, uniform_matrix};
use implicit_debias::overlap::{balance_sweep, js_divergence, spearman, SweepTable};
use implicit_debias::runner::{self, evaluate_method, train_method, ExperimentConfig, Method};
use implicit_debias::seed;
use implicit_debias::tensor::Tape;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn metric_arithmetic() -> Outcome {
    // 10,000 actual positives and negatives per group.
    let group = |fp: usize, fnc: usize| Confusion {
        tp: 10_000 - fnc,
        fp,
        tn: 10_000 - fp,
        fn_: fnc,
    };
    let c = GroupConfusion {
        groups: [group(4697, 2129), group(2338, 6275)],
    };
    let r = match fairness_report(&c) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let pass = close(r.fped, 23.59, 0.02) && close(r.fned, 41.46, 0.02) && close(r.dpd, 32.52, 0.02);
    let parity_ok = close(r.groups[0].parity, 62.84, 0.02) && close(r.groups[1].parity, 30.32, 0.02);
    outcome(
        pass && parity_ok,
        format!(
            "FPED {:.3} FNED {:.3} DPD {:.3} (parity {:.3} / {:.3})",
            r.fped, r.fned, r.dpd, r.groups[0].parity, r.groups[1].parity
        ),
    )
}

fn js_exact() -> Outcome {
    let same = js_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap();
    let disjoint = js_divergence(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.25, 0.75]).unwrap();
    let half = js_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let oracle = 0.5 * (4.0f64 / 3.0).log2() + 0.5 * (0.5 * (2.0f64 / 3.0).log2() + 0.5);
    let pass = same == 0.0 && close(disjoint, 1.0, 1e-12) && close(half, oracle, 1e-12) && close(half, 0.3113, 1e-4);
    outcome(pass, format!("identity {same}, disjoint {disjoint:.6}, half {half:.6} (oracle {oracle:.6})"))
}

fn desk_config(arch: Architecture, rate: f64) -> ExperimentConfig {
    let base = ExperimentConfig::default();
    ExperimentConfig {
        architecture: arch,
        classifier: ClassifierConfig::compact(arch),
        corpus: CorpusSpec { balance_rate: rate, ..base.corpus.clone() },
        ..base
    }
}

fn bias_emergence(pool: &[Example]) -> Outcome {
    let mut details = Vec::new();
    let mut biased = 0;
    let mut balanced_ok = 0;
    for s in 1..=5u64 {
        let mut dpd = [0.0; 2];
        for (i, rate) in [0.8, 0.5].into_iter().enumerate() {
            let cfg = desk_config(Architecture::Cnn, rate);
            let split = cfg.split(pool, s).unwrap();
            let base = train_method(&cfg, Method::Base, &split, s).unwrap();
            let r = evaluate_method(&cfg, &base, &split, s).unwrap();
            dpd[i] = r.fairness.dpd;
            if i == 0 && r.fairness.dpd >= 20.0 && r.fairness.groups[0].parity > r.fairness.groups[1].parity {
                biased += 1;
            }
            if i == 1 && r.fairness.dpd < 5.0 {
                balanced_ok += 1;
            }
        }
        details.push(format!("s{s}: {:.1}/{:.1}", dpd[0], dpd[1]));
    }
    outcome(
        biased >= 4 && balanced_ok == 5,
        format!(
            "rho=0.8 biased in {biased}/5, rho=0.5 below 5 in {balanced_ok}/5 (DPD 0.8/0.5 {})",
            details.join(", ")
        ),
    )
}

fn overlap_trend(sweep: &SweepTable) -> Outcome {
    let p = sweep.plot_data();
    let r_js = spearman(&p.balance_rate, &p.mean_js);
    let r_dpd = spearman(&p.balance_rate, &p.dpd);
    let series: Vec<String> = p
        .balance_rate
        .iter()
        .zip(&p.mean_js)
        .zip(&p.dpd)
        .map(|((r, j), d)| format!("{r}: {j:.3}/{d:.1}"))
        .collect();
    outcome(
        r_js <= -0.7 && r_dpd >= 0.7,
        format!("spearman(rho, JS) {r_js:.2}, spearman(rho, DPD) {r_dpd:.2} [{}]", series.join(", ")),
    )
}

fn debiasing_effect(pool: &[Example]) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for arch in [Architecture::Cnn, Architecture::Rnn] {
        let cfg = desk_config(arch, 0.8);
        let mut wins = 0;
        let mut cells = Vec::new();
        for s in 1..=5u64 {
            let split = cfg.split(pool, s).unwrap();
            let base = evaluate_method(&cfg, &train_method(&cfg, Method::Base, &split, s).unwrap(), &split, s).unwrap();
            let deb = evaluate_method(&cfg, &train_method(&cfg, Method::DebiasedTc, &split, s).unwrap(), &split, s).unwrap();
            let fair = deb.fairness.dpd <= 0.5 * base.fairness.dpd;
            let accurate = deb.accuracy >= base.accuracy - 0.05;
            wins += usize::from(fair && accurate);
            cells.push(format!(
                "DPD {:.1}->{:.1} acc {:.1}->{:.1}",
                base.fairness.dpd,
                deb.fairness.dpd,
                100.0 * base.accuracy,
                100.0 * deb.accuracy
            ));
        }
        pass &= wins >= 4;
        details.push(format!("{arch} {wins}/5 [{}]", cells.join("; ")));
    }
    outcome(pass, details.join(" | "))
}

fn toy_vocab() -> implicit_debias::corpus::Vocabulary {
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    build_vocab(&[Example::new(0, words, 0, 0).unwrap()], 1, 100)
}

fn randomise_head(model: &mut ExplainerModel, seed: u64) {
    let mut rng = seed::rng(seed, "randomise");
    for m in model.params_mut().values_mut() {
        if m.data().iter().all(|&v| v == 0.0) {
            *m = uniform_matrix(m.rows(), m.cols(), 1.0, &mut rng);
        }
    }
}

fn gradient_checks() -> Outcome {
    let vocab = toy_vocab();
    let batch = Batch::from_slice(&[
        EncodedExample { id: 0, ids: vec![2, 3], length: 2, y: 1, z: 0 },
        EncodedExample { id: 1, ids: vec![4, 5], length: 2, y: 0, z: 1 },
    ]);
    let mut worst_reversal: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for arch in [Architecture::Cnn, Architecture::Rnn] {
        let cls = ClassifierConfig {
            embedding_dim: 4,
            cnn_filters: 3,
            cnn_kernel_sizes: vec![1, 2],
            rnn_hidden: 3,
            ..ClassifierConfig::new(arch)
        };
        let cor = ExplainerConfig { embedding_dim: 3, hidden: 2, ..Default::default() };
        for lambda in [1.0, 2.5] {
            let cfg = DebiasConfig { lambda, ..Default::default() };
            let mut state = DebiasState::new(&vocab, &cls, &cor, &cfg, 21).unwrap();
            randomise_head(&mut state.corrector, 3);
            let plain = state.adversarial_corrector_gradients(&batch, false);
            let reversed = state.adversarial_corrector_gradients(&batch, true);
            for (p, r) in plain.iter().zip(&reversed) {
                let (Some(p), Some(r)) = (p, r) else { continue };
                for (&a, &b) in p.data().iter().zip(r.data()) {
                    if a.abs() > 1e-10 {
                        worst_reversal = worst_reversal.max(rel_err(-lambda * a, b));
                    }
                }
            }
            // The no-reversal gradient itself against central differences of L^Z.
            if lambda == 1.0 {
                let h = 1e-5;
                for (pi, g) in plain.iter().enumerate() {
                    let Some(g) = g else { continue };
                    for k in 0..g.data().len() {
                        let mut up = state.clone();
                        up.corrector.params_mut().values_mut()[pi].data_mut()[k] += h;
                        let mut down = state.clone();
                        down.corrector.params_mut().values_mut()[pi].data_mut()[k] -= h;
                        let fd = (up.combined_loss(&batch).1 - down.combined_loss(&batch).1) / (2.0 * h);
                        if fd.abs() > 1e-6 || g.data()[k].abs() > 1e-6 {
                            worst_fd = worst_fd.max(rel_err(fd, g.data()[k]));
                        }
                    }
                }
            }
        }
    }

    // Classifier input gradients.
    let mut worst_input: f64 = 0.0;
    for arch in [Architecture::Cnn, Architecture::Rnn] {
        let cls = ClassifierConfig {
            embedding_dim: 4,
            cnn_filters: 3,
            cnn_kernel_sizes: vec![2, 3],
            rnn_hidden: 3,
            ..ClassifierConfig::new(arch)
        };
        let model = ClassifierModel::new(&cls, Task::Label, &vocab, 8).unwrap();
        let mut rng = seed::rng(2, "input");
        let (lengths, seq_len) = (vec![3, 2], 3);
        let mut x = normal_matrix(6, 4, &mut rng);
        x.row_mut(5).fill(0.0);
        let targets = [1usize, 0];
        let loss_at = |m: &implicit_debias::tensor::Matrix| {
            let p = model.forward_weighted(m, &lengths, seq_len).unwrap();
            -(0..2).map(|b| p.get(b, targets[b]).ln()).sum::<f64>() / 2.0
        };
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let xv = tape.param(x.clone());
        let logits = model.logits_from_embedded(&mut tape, &vars, xv, &lengths, seq_len, None);
        let loss = tape.cross_entropy(logits, &targets, None);
        tape.backward(loss);
        let g = tape.grad(xv).unwrap().clone();
        let h = 1e-5;
        for k in 0..x.data().len() {
            let mut up = x.clone();
            up.data_mut()[k] += h;
            let mut down = x.clone();
            down.data_mut()[k] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            if fd.abs() > 1e-6 || g.data()[k].abs() > 1e-6 {
                worst_input = worst_input.max(rel_err(fd, g.data()[k]));
            }
        }
    }
    outcome(
        worst_reversal <= 1e-5 && worst_input <= 1e-3 && worst_fd <= 1e-3,
        format!(
            "reversal rel err {worst_reversal:.2e}, corrector FD rel err {worst_fd:.2e}, input FD rel err {worst_input:.2e}"
        ),
    )
}

fn saliency_contract() -> Outcome {
    let vocab_size = 50;
    let cfg = ExplainerConfig { embedding_dim: 6, hidden: 5, ..Default::default() };
    let mut model = ExplainerModel::new(&cfg, vocab_size, "fp", 13).unwrap();
    randomise_head(&mut model, 5);
    let mut rng = seed::rng(99, "saliency-inputs");
    let mut checked = 0usize;
    let mut violations = 0usize;
    let max_len = 24;
    while checked < 10_000 {
        let data: Vec<EncodedExample> = (0..100)
            .map(|i| {
                let length = rng.random_range(1..=max_len);
                let mut ids: Vec<usize> = (0..length).map(|_| rng.random_range(1..vocab_size)).collect();
                ids.resize(max_len, PAD);
                EncodedExample { id: i, ids, length, y: 0, z: 0 }
            })
            .collect();
        for (ex, s) in data.iter().zip(model.explain(&data)) {
            let sum: f64 = s.real().iter().sum();
            let ok = (sum - 1.0).abs() <= 1e-6
                && s.scores.iter().all(|&v| v >= 0.0)
                && s.scores[ex.length..].iter().all(|&v| v == 0.0);
            violations += usize::from(!ok);
            checked += 1;
        }
    }
    let singles: Vec<EncodedExample> = (0..50)
        .map(|i| EncodedExample { id: i, ids: vec![2 + i as usize % 40, PAD, PAD], length: 1, y: 0, z: 0 })
        .collect();
    let single_ok = model.explain(&singles).iter().all(|s| s.real() == [1.0]);
    outcome(
        violations == 0 && single_ok,
        format!("{checked} inputs, {violations} violations, single-token exact: {single_ok}"),
    )
}

fn explainer_fidelity(sweep: &SweepTable) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut total = 0;
    for row in &sweep.rows {
        for (explained, uniform) in &row.fidelity {
            let gap = explained.cross_entropy - uniform.cross_entropy;
            worst = worst.max(gap);
            failures += usize::from(gap > 0.0);
            total += 1;
        }
    }
    outcome(
        failures == 0 && total > 0,
        format!("{total} explainers, {failures} above uniform; worst CE gap {worst:.4}"),
    )
}

fn weighting_algebra(pool: &[Example]) -> Outcome {
    let spec = CorpusSpec::default();
    let split = build_balanced_split(pool, &spec, 17).unwrap();
    let w = cell_weights(&split.train).unwrap();
    let tol = 1.0 / split.train.len() as f64;
    let expected = [[2.5, 0.625], [0.625, 2.5]];
    let mut pass = (0..2).all(|z| (0..2).all(|y| close(w[z][y], expected[z][y], tol)));
    for z in 0..2u8 {
        let mass = |y: u8| -> f64 {
            split
                .train
                .iter()
                .filter(|e| e.z == z && e.y == y)
                .map(|e| w[e.z as usize][e.y as usize])
                .sum()
        };
        pass &= close(mass(0), mass(1), 1e-9 * mass(0));
    }
    outcome(
        pass,
        format!(
            "Group I {{pos {:.4}, neg {:.4}}}, Group II {{pos {:.4}, neg {:.4}}}, N={}",
            w[0][1], w[0][0], w[1][1], w[1][0], split.train.len()
        ),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        source: implicit_debias::corpus::CorpusSource::Synthetic(SyntheticGenSpec {
            pool_size: 3000,
            ..Default::default()
        }),
        corpus: CorpusSpec {
            total_size: 400,
            balance_rate: 0.8,
            val_per_cell: 20,
            test_per_cell: 50,
        },
        classifier: ClassifierConfig {
            embedding_dim: 8,
            cnn_filters: 4,
            max_epochs: 3,
            ..ClassifierConfig::compact(Architecture::Cnn)
        },
        explainer: ExplainerConfig { embedding_dim: 8, hidden: 4, max_epochs: 3, ..ExplainerConfig::compact() },
        debias: DebiasConfig { epochs: 1, ..Default::default() },
        seeds: vec![2],
        rates: vec![0.5, 0.8],
        out: dir.path().join("run"),
        ..Default::default()
    };

    let run_all = |cfg: &ExperimentConfig| -> implicit_debias::Result<BTreeMap<String, Vec<u8>>> {
        let _ = std::fs::remove_dir_all(&cfg.out);
        runner::prepare_data(cfg)?;
        for m in Method::ALL {
            let c = ExperimentConfig { method: m, ..cfg.clone() };
            runner::train(&c)?;
            runner::evaluate_run(&c)?;
        }
        runner::explain(cfg)?;
        runner::overlap(cfg)?;
        runner::sweep(cfg)?;
        runner::compare(cfg)?;
        Ok(read_tree(&cfg.out))
    };
    let (a, b) = match (run_all(&cfg), run_all(&cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
    };
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        differing.is_empty() && a.len() == b.len(),
        format!("{} artifacts compared, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let pool = generate_synthetic_pool(&SyntheticGenSpec::default()).expect("synthetic pool");

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {id:>2} {name:<28} {} ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        results.push((id, name, o));
    };

    run(1, "metric arithmetic", &mut metric_arithmetic);
    run(2, "js divergence", &mut js_exact);
    run(3, "bias emergence", &mut || bias_emergence(&pool));
    let settings = desk_config(Architecture::Cnn, 0.5).sweep_settings();
    let sweep_settings = implicit_debias::overlap::SweepSettings {
        corpus: CorpusSpec { test_per_cell: 250, ..settings.corpus.clone() },
        ..settings
    };
    let mut sweep: Option<SweepTable> = None;
    run(4, "overlap trend", &mut || {
        match balance_sweep(&[0.5, 0.6, 0.7, 0.8, 0.9], &pool, &sweep_settings, &[1, 2, 3]) {
            Ok(t) => {
                let o = overlap_trend(&t);
                sweep = Some(t);
                o
            }
            Err(e) => outcome(false, e.to_string()),
        }
    });
    run(5, "debiasing effect", &mut || debiasing_effect(&pool));
    run(6, "gradient reversal", &mut gradient_checks);
    run(7, "saliency contract", &mut saliency_contract);
    run(8, "explainer fidelity", &mut || match &sweep {
        Some(t) => explainer_fidelity(t),
        None => outcome(false, "sweep unavailable"),
    });
    run(9, "instance weighting", &mut || weighting_algebra(&pool));
    run(10, "determinism", &mut determinism);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
