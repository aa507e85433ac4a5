//! Experiment configuration and the pipeline behind each CLI subcommand.
//!
//! Every run is a pure function of the resolved [`ExperimentConfig`] and a
//! seed, so subcommands regenerate the split they need instead of reading
//! intermediate files, and reruns produce byte-identical artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{cell_weights, data_augmentation, train_weighted};
use crate::checkpoint::{Checkpoint, Payload};
use crate::classifiers::{evaluate, train_classifier, Architecture, ClassifierConfig, ClassifierModel, Predictor, Task, TrainingLog};
use crate::corpus::{
    build_balanced_split, encode_all, generate_synthetic_pool, load_tsv, write_tsv, CorpusSource, CorpusSpec,
    EncodedSplit, EncodingConfig, Example, Split, SplitManifest, SyntheticGenSpec, TsvSchema, Vocabulary,
};
use crate::debiaser::{train_debiased, DebiasConfig, DebiasLog, DebiasedModel};
use crate::error::{Error, Result, StageExt};
use crate::explainer::{saliency_records, write_saliency_dump, ExplainerConfig, Fidelity};
use crate::fairness::{confusion_by_group, fairness_report, render_bias_table, BiasRow, FairnessReport};
use crate::overlap::{balance_sweep, train_explainer_pair, OverlapReport, SweepSettings};
use crate::seed;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Base,
    DataAug,
    InsWeigh,
    DebiasedTc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Base, Method::DataAug, Method::InsWeigh, Method::DebiasedTc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::DataAug => "data_aug",
            Method::InsWeigh => "ins_weigh",
            Method::DebiasedTc => "debiased_tc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected base, data_aug, ins_weigh or debiased_tc)")))
    }
}

/// Everything a run depends on. `architecture` overrides the field of the
/// same name inside `classifier`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: CorpusSource,
    pub corpus: CorpusSpec,
    pub encoding: EncodingConfig,
    pub architecture: Architecture,
    pub method: Method,
    /// Methods run by `compare`.
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Balance rates visited by `sweep`.
    pub rates: Vec<f64>,
    pub classifier: ClassifierConfig,
    pub explainer: ExplainerConfig,
    pub debias: DebiasConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: CorpusSource::Synthetic(SyntheticGenSpec::default()),
            corpus: CorpusSpec::default(),
            encoding: EncodingConfig::default(),
            architecture: Architecture::Cnn,
            method: Method::Base,
            methods: Method::ALL.to_vec(),
            seeds: vec![1],
            rates: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            classifier: ClassifierConfig::compact(Architecture::Cnn),
            explainer: ExplainerConfig::compact(),
            debias: DebiasConfig::default(),
            out: PathBuf::from("runs"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub balance_rate: Option<f64>,
    pub architecture: Option<Architecture>,
    pub method: Option<Method>,
    pub methods: Option<Vec<Method>>,
    pub seeds: Option<Vec<u64>>,
    pub rates: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (if any), applies `overrides`, then validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&fs::read_to_string(p)?).stage(format!("config {}", p.display()))?,
            None => Self::default(),
        };
        if let Some(r) = overrides.balance_rate {
            cfg.corpus.balance_rate = r;
        }
        if let Some(a) = overrides.architecture {
            cfg.architecture = a;
        }
        if let Some(m) = overrides.method {
            cfg.method = m;
        }
        if let Some(m) = &overrides.methods {
            cfg.methods = m.clone();
        }
        if let Some(s) = &overrides.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(r) = &overrides.rates {
            cfg.rates = r.clone();
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        cfg.classifier.architecture = cfg.architecture;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.classifier.validate()?;
        self.explainer.validate()?;
        self.debias.validate()?;
        if let CorpusSource::Synthetic(spec) = &self.source {
            spec.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("balance rate {r} outside (0, 1)")));
        }
        if self.classifier.architecture != self.architecture {
            return Err(Error::Config("classifier.architecture disagrees with architecture".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn header(&self, seed: Option<u64>) -> Header {
        Header {
            tool: TOOL.to_owned(),
            version: TOOL_VERSION.to_owned(),
            seed,
            config: self.clone(),
        }
    }

    /// One-line JSON header for text artifacts.
    fn header_text(&self, seed: Option<u64>) -> Result<String> {
        Ok(serde_json::to_string(&self.header(seed))?)
    }

    pub fn load_pool(&self) -> Result<Vec<Example>> {
        match &self.source {
            CorpusSource::Synthetic(spec) => generate_synthetic_pool(spec),
            CorpusSource::Tsv { path } => load_tsv(path, TsvSchema::default()).stage(format!("corpus {path}")),
        }
    }

    pub fn split(&self, pool: &[Example], seed: u64) -> Result<Split> {
        build_balanced_split(pool, &self.corpus, seed::derive(seed, "split")).stage("split")
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            corpus: self.corpus.clone(),
            encoding: self.encoding.clone(),
            classifier: self.classifier.clone(),
            explainer: self.explainer.clone(),
        }
    }
}

/// Reproducibility record embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub header: Header,
    pub data: T,
}

fn write_json<T: Serialize>(path: &Path, header: Header, data: T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Artifact { header, data })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_text(path: &Path, header: &str, body: &str) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(body);
    fs::write(path, out)?;
    Ok(())
}

/// A trained model of any method.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Classifier(ClassifierModel),
    Debiased {
        model: DebiasedModel,
        adversary: Option<ClassifierModel>,
        config: DebiasConfig,
    },
}

impl Predictor for TrainedModel {
    fn predict_proba(&self, data: &[crate::corpus::EncodedExample]) -> Vec<[f64; 2]> {
        match self {
            TrainedModel::Classifier(m) => m.predict_proba(data),
            TrainedModel::Debiased { model, .. } => model.predict_proba(data),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLog {
    Classifier(TrainingLog),
    Debiased(DebiasLog),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedMethod {
    pub method: Method,
    pub vocab: Vocabulary,
    pub model: TrainedModel,
    pub log: Option<TrainLog>,
}

impl TrainedMethod {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let payload = match &self.model {
            TrainedModel::Classifier(m) => Payload::Classifier { model: m.clone() },
            TrainedModel::Debiased {
                model,
                adversary,
                config,
            } => Payload::Debiased {
                config: config.clone(),
                corrector: model.corrector.clone(),
                main: model.main.clone(),
                adversary: adversary.clone(),
            },
        };
        Checkpoint::new(seed, &self.vocab, payload)
    }

    pub fn from_checkpoint(method: Method, ck: Checkpoint) -> Result<Self> {
        let vocab = ck.vocab.clone();
        let model = match ck.payload {
            Payload::Classifier { model } => TrainedModel::Classifier(model),
            Payload::Debiased { ref config, .. } => {
                let config = config.clone();
                let (model, adversary) = ck.into_debiased(false)?;
                TrainedModel::Debiased {
                    model,
                    adversary,
                    config,
                }
            }
            Payload::Explainer { .. } => {
                return Err(Error::Config("an explainer checkpoint cannot be evaluated as a classifier".into()))
            }
        };
        Ok(Self {
            method,
            vocab,
            model,
            log: None,
        })
    }
}

/// Trains `method` on `split`; the stage seed depends only on the run seed
/// and the method, so `compare` and `train` agree.
pub fn train_method(cfg: &ExperimentConfig, method: Method, split: &Split, seed: u64) -> Result<TrainedMethod> {
    let stage_seed = seed::derive(seed, method.name());
    let run = || -> Result<TrainedMethod> {
        let (vocab, model, log) = match method {
            Method::Base => {
                let data = EncodedSplit::new(split, &cfg.encoding);
                let (m, log) = train_classifier(&data.train, &data.val, &data.vocab, &cfg.classifier, Task::Label, stage_seed)?;
                (data.vocab, TrainedModel::Classifier(m), TrainLog::Classifier(log))
            }
            Method::DataAug => {
                if split.reserve.is_empty() {
                    return Err(Error::Config("data augmentation needs a non-empty reserve pool".into()));
                }
                let augmented = Split {
                    train: data_augmentation(&split.train, &split.reserve, seed::derive(seed, "augment"))?,
                    ..split.clone()
                };
                let data = EncodedSplit::new(&augmented, &cfg.encoding);
                let (m, log) = train_classifier(&data.train, &data.val, &data.vocab, &cfg.classifier, Task::Label, stage_seed)?;
                (data.vocab, TrainedModel::Classifier(m), TrainLog::Classifier(log))
            }
            Method::InsWeigh => {
                let data = EncodedSplit::new(split, &cfg.encoding);
                let w = cell_weights(&split.train)?;
                let weights: Vec<f64> = split.train.iter().map(|e| w[e.z as usize][e.y as usize]).collect();
                let (m, log) = train_weighted(&data.train, &weights, &data.val, &data.vocab, &cfg.classifier, stage_seed)?;
                (data.vocab, TrainedModel::Classifier(m), TrainLog::Classifier(log))
            }
            Method::DebiasedTc => {
                let data = EncodedSplit::new(split, &cfg.encoding);
                let (model, state, log) = train_debiased(
                    &data.train,
                    &data.val,
                    &data.vocab,
                    &cfg.classifier,
                    &cfg.explainer,
                    &cfg.debias,
                    stage_seed,
                )?;
                let trained = TrainedModel::Debiased {
                    model,
                    adversary: Some(state.adversary),
                    config: cfg.debias.clone(),
                };
                (data.vocab, trained, TrainLog::Debiased(log))
            }
        };
        Ok(TrainedMethod {
            method,
            vocab,
            model,
            log: Some(log),
        })
    };
    run().stage(format!("train {method}"))
}

/// Test-split performance and fairness of one trained method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub seed: u64,
    pub balance_rate: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub fairness: FairnessReport,
}

pub fn evaluate_method(cfg: &ExperimentConfig, trained: &TrainedMethod, split: &Split, seed: u64) -> Result<MethodReport> {
    let test = encode_all(&split.test, &trained.vocab, cfg.encoding.max_len);
    let eval = evaluate(&trained.model, &test, Task::Label);
    let fairness = fairness_report(&confusion_by_group(&eval.predictions, &test)?).stage(format!("evaluate {}", trained.method))?;
    Ok(MethodReport {
        method: trained.method,
        seed,
        balance_rate: cfg.corpus.balance_rate,
        accuracy: eval.accuracy,
        f1: eval.f1,
        fairness,
    })
}

/// Fairness and performance columns, one row per report followed by a
/// per-method mean row when more than one seed is present.
pub fn render_comparison(reports: &[MethodReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7}",
        "method", "seed", "FPED", "FNED", "DPD", "Acc", "F1"
    );
    let row = |out: &mut String, name: &str, seed: &str, r: [f64; 5]| {
        let _ = writeln!(
            out,
            "{:<12} {:>6} | {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2}",
            name, seed, r[0], r[1], r[2], r[3], r[4]
        );
    };
    let values = |r: &MethodReport| {
        [
            r.fairness.fped,
            r.fairness.fned,
            r.fairness.dpd,
            100.0 * r.accuracy,
            100.0 * r.f1,
        ]
    };
    for r in reports {
        row(&mut out, r.method.name(), &r.seed.to_string(), values(r));
    }
    let mut methods: Vec<Method> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    for m in methods {
        let rows: Vec<[f64; 5]> = reports.iter().filter(|r| r.method == m).map(values).collect();
        if rows.len() < 2 {
            continue;
        }
        let mut mean = [0.0; 5];
        for r in &rows {
            for (acc, v) in mean.iter_mut().zip(r) {
                *acc += v / rows.len() as f64;
            }
        }
        row(&mut out, m.name(), "mean", mean);
    }
    out
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// Split TSVs plus a manifest per seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        create_dir(&dir)?;
        let split = cfg.split(&pool, seed)?;
        for (name, part) in [
            ("train", &split.train),
            ("val", &split.val),
            ("test", &split.test),
            ("reserve", &split.reserve),
        ] {
            let path = dir.join(format!("{name}.tsv"));
            write_tsv(&path, part)?;
            written.push(path);
        }
        let manifest = SplitManifest::new(seed::derive(seed, "split"), &cfg.corpus, cfg.source.clone(), &split);
        let path = dir.join("manifest.json");
        write_json(&path, cfg.header(Some(seed)), manifest)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    header: Header,
    checkpoint: Checkpoint,
}

fn checkpoint_path(cfg: &ExperimentConfig, seed: u64, method: Method) -> PathBuf {
    cfg.seed_dir(seed).join(format!("{method}.model.json"))
}

fn save_checkpoint(cfg: &ExperimentConfig, seed: u64, path: &Path, checkpoint: Checkpoint) -> Result<()> {
    let file = CheckpointFile {
        header: cfg.header(Some(seed)),
        checkpoint,
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read checkpoint {} ({e}); run `train` first", path.display()))
    })?;
    let file: serde_json::Value = serde_json::from_str(&text)?;
    let inner = file
        .get("checkpoint")
        .ok_or_else(|| Error::Config(format!("{} has no checkpoint section", path.display())))?;
    Checkpoint::from_json(&inner.to_string())
}

/// Trains `cfg.method` for each seed and writes a checkpoint and a
/// training log.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        create_dir(&cfg.seed_dir(seed))?;
        let split = cfg.split(&pool, seed)?;
        let trained = train_method(cfg, cfg.method, &split, seed)?;
        let path = checkpoint_path(cfg, seed, cfg.method);
        save_checkpoint(cfg, seed, &path, trained.checkpoint(seed))?;
        written.push(path);
        let path = cfg.seed_dir(seed).join(format!("{}.log.json", cfg.method));
        write_json(&path, cfg.header(Some(seed)), &trained.log)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub summary: MethodReport,
    pub per_group: BiasRow,
}

/// Evaluates the checkpoint written by `train` on the regenerated test set.
pub fn evaluate_run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let ck = load_checkpoint(&checkpoint_path(cfg, seed, cfg.method)).stage("evaluate")?;
        let split = cfg.split(&pool, seed)?;
        let trained = TrainedMethod::from_checkpoint(cfg.method, ck)?;
        let summary = evaluate_method(cfg, &trained, &split, seed)?;
        let per_group = BiasRow {
            label: format!("{}-{}", cfg.method, cfg.architecture),
            balance_rate: cfg.corpus.balance_rate,
            seed,
            report: summary.fairness.clone(),
            accuracy: summary.accuracy,
        };
        let table = format!(
            "{}\n{}",
            render_bias_table(std::slice::from_ref(&per_group)),
            render_comparison(std::slice::from_ref(&summary))
        );
        let dir = cfg.seed_dir(seed);
        let path = dir.join(format!("{}.eval.json", cfg.method));
        write_json(&path, cfg.header(Some(seed)), EvaluationReport { summary, per_group })?;
        written.push(path);
        let path = dir.join(format!("{}.eval.txt", cfg.method));
        write_text(&path, &cfg.header_text(Some(seed))?, &table)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    /// (explained, uniform) validation fidelity for the task then group
    /// explainer.
    pub fidelity: Vec<(Fidelity, Fidelity)>,
}

/// Saliency dumps of the task and group explainers on the test split.
pub fn explain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        create_dir(&dir)?;
        let split = cfg.split(&pool, seed)?;
        let data = EncodedSplit::new(&split, &cfg.encoding);
        let pair = train_explainer_pair(&data, &cfg.classifier, &cfg.explainer, seed)?;
        let header = cfg.header_text(Some(seed))?;
        for (name, explainer) in [("label", &pair.task_explainer), ("group", &pair.group_explainer)] {
            let records = saliency_records(&data.test, &explainer.explain(&data.test), &data.vocab);
            let path = dir.join(format!("saliency-{name}.txt"));
            write_saliency_dump(&path, &header, &records)?;
            written.push(path);
            let path = dir.join(format!("explainer-{name}.model.json"));
            let ck = Checkpoint::new(seed, &data.vocab, Payload::Explainer { model: explainer.clone() });
            save_checkpoint(cfg, seed, &path, ck)?;
            written.push(path);
        }
        let path = dir.join("explain.json");
        write_json(
            &path,
            cfg.header(Some(seed)),
            ExplainSummary {
                fidelity: pair.fidelity(&data.val),
            },
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Mean JS overlap of task and group saliency on the test split.
pub fn overlap(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        create_dir(&dir)?;
        let split = cfg.split(&pool, seed)?;
        let data = EncodedSplit::new(&split, &cfg.encoding);
        let pair = train_explainer_pair(&data, &cfg.classifier, &cfg.explainer, seed)?;
        let report = OverlapReport {
            balance_rate: Some(cfg.corpus.balance_rate),
            ..pair.overlap(&data.test)?
        };
        let path = dir.join("overlap.json");
        write_json(&path, cfg.header(Some(seed)), report)?;
        written.push(path);
    }
    Ok(written)
}

/// Sweep over `cfg.rates` and `cfg.seeds`: raw CSV, plot series and a JSON
/// table that also records explainer fidelity.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let pool = cfg.load_pool()?;
    create_dir(&cfg.out)?;
    let table = balance_sweep(&cfg.rates, &pool, &cfg.sweep_settings(), &cfg.seeds)?;
    let csv = cfg.out.join("sweep.csv");
    fs::write(&csv, table.to_csv(&cfg.header_text(None)?))?;
    let plot = cfg.out.join("sweep-plot.json");
    write_json(&plot, cfg.header(None), table.plot_data())?;
    let full = cfg.out.join("sweep.json");
    write_json(&full, cfg.header(None), &table)?;
    Ok(vec![csv, plot, full])
}

/// Every method in `cfg.methods` on one shared split per seed.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let reports = compare_reports(cfg)?;
    create_dir(&cfg.out)?;
    let json = cfg.out.join("compare.json");
    write_json(&json, cfg.header(None), &reports)?;
    let txt = cfg.out.join("compare.txt");
    write_text(&txt, &cfg.header_text(None)?, &render_comparison(&reports))?;
    Ok(vec![json, txt])
}

pub fn compare_reports(cfg: &ExperimentConfig) -> Result<Vec<MethodReport>> {
    let pool = cfg.load_pool()?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let split = cfg.split(&pool, seed)?;
        for &method in &cfg.methods {
            let trained = train_method(cfg, method, &split, seed)?;
            reports.push(evaluate_method(cfg, &trained, &split, seed)?);
        }
    }
    Ok(reports)
}
