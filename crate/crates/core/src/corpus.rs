//! Labelled text examples, TSV ingestion, the synthetic biased-corpus
//! generator, balance-rate-controlled splits, and vocabulary encoding.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One labelled text. `z = 0` is Group I, `z = 1` is Group II.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<String>,
    pub y: u8,
    pub z: u8,
}

impl Example {
    pub fn new(id: u64, tokens: Vec<String>, y: u8, z: u8) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation(format!("example {id} has no tokens")));
        }
        if y > 1 || z > 1 {
            return Err(Error::Validation(format!("example {id}: labels must be binary")));
        }
        Ok(Self { id, tokens, y, z })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Anything carrying a task label and a group attribute.
pub trait Labeled {
    fn y(&self) -> u8;
    fn z(&self) -> u8;
}

impl Labeled for Example {
    fn y(&self) -> u8 {
        self.y
    }
    fn z(&self) -> u8 {
        self.z
    }
}

impl Labeled for EncodedExample {
    fn y(&self) -> u8 {
        self.y
    }
    fn z(&self) -> u8 {
        self.z
    }
}

/// Lowercases, splits punctuation into separate tokens (apostrophes,
/// hyphens, `#`, `@` and `_` stay inside words), then splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_punctuation() && !matches!(c, '\'' | '-' | '#' | '@' | '_') {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

/// Column positions of a TSV corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvSchema {
    pub text: usize,
    pub y: usize,
    pub z: usize,
}

impl Default for TsvSchema {
    fn default() -> Self {
        Self { text: 0, y: 1, z: 2 }
    }
}

fn parse_binary(field: &str, what: &str, line: usize) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Schema {
            line,
            message: format!("{what} must be 0 or 1, got {other:?}"),
        }),
    }
}

/// Parses TSV text. A first line whose label column is not numeric is
/// treated as a header; blank lines are skipped.
pub fn parse_tsv(contents: &str, schema: TsvSchema) -> Result<Vec<Example>> {
    let width = schema.text.max(schema.y).max(schema.z) + 1;
    let mut out = Vec::new();
    for (idx, raw) in contents.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() < width {
            return Err(Error::Load {
                line,
                message: format!("expected at least {width} tab-separated columns, found {}", cols.len()),
            });
        }
        if idx == 0 && cols[schema.y].trim().parse::<f64>().is_err() {
            continue;
        }
        let y = parse_binary(cols[schema.y], "y", line)?;
        let z = parse_binary(cols[schema.z], "z", line)?;
        let tokens = tokenize(cols[schema.text]);
        if tokens.is_empty() {
            return Err(Error::Load {
                line,
                message: "text tokenizes to zero tokens".into(),
            });
        }
        out.push(Example {
            id: line as u64,
            tokens,
            y,
            z,
        });
    }
    Ok(out)
}

pub fn load_tsv(path: impl AsRef<Path>, schema: TsvSchema) -> Result<Vec<Example>> {
    let contents = fs::read_to_string(path)?;
    parse_tsv(&contents, schema)
}

/// Writes `text<TAB>y<TAB>z` rows with no header.
pub fn write_tsv(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        writeln!(file, "{}\t{}\t{}", ex.text(), ex.y, ex.z)?;
    }
    file.flush()?;
    Ok(())
}

/// Parameters of the synthetic corpus generator.
///
/// Every example receives `content_count` label-predictive words (each one
/// drawn from the opposite label's lexicon with probability
/// `content_noise`), with probability `style_probability` it receives
/// `style_count` words from its group's style lexicon, and `filler_count`
/// neutral words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticGenSpec {
    pub pool_size: usize,
    pub positive_words: usize,
    pub negative_words: usize,
    pub group_one_words: usize,
    pub group_two_words: usize,
    pub filler_words: usize,
    pub content_count: usize,
    pub style_count: usize,
    pub filler_count: usize,
    pub style_probability: f64,
    pub content_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticGenSpec {
    fn default() -> Self {
        Self {
            pool_size: 20_000,
            positive_words: 30,
            negative_words: 30,
            group_one_words: 20,
            group_two_words: 20,
            filler_words: 100,
            content_count: 2,
            style_count: 1,
            filler_count: 5,
            style_probability: 0.9,
            content_noise: 0.3,
            seed: 7,
        }
    }
}

/// Which lexicon a synthetic word was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lexicon {
    Positive,
    Negative,
    GroupOne,
    GroupTwo,
    Filler,
}

impl Lexicon {
    fn prefix(self) -> &'static str {
        match self {
            Lexicon::Positive => "pos",
            Lexicon::Negative => "neg",
            Lexicon::GroupOne => "sta",
            Lexicon::GroupTwo => "stb",
            Lexicon::Filler => "fil",
        }
    }

    pub fn word(self, index: usize) -> String {
        format!("{}{index}", self.prefix())
    }

    /// Classifies a generated word; `None` for anything else.
    pub fn of(word: &str) -> Option<Self> {
        let (prefix, rest) = word.split_at_checked(3)?;
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        match prefix {
            "pos" => Some(Lexicon::Positive),
            "neg" => Some(Lexicon::Negative),
            "sta" => Some(Lexicon::GroupOne),
            "stb" => Some(Lexicon::GroupTwo),
            "fil" => Some(Lexicon::Filler),
            _ => None,
        }
    }

    pub fn is_style(self) -> bool {
        matches!(self, Lexicon::GroupOne | Lexicon::GroupTwo)
    }
}

impl SyntheticGenSpec {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.positive_words,
            self.negative_words,
            self.group_one_words,
            self.group_two_words,
        ];
        if sizes.contains(&0) {
            return Err(Error::Validation("content and style lexicons must be non-empty".into()));
        }
        if self.filler_count > 0 && self.filler_words == 0 {
            return Err(Error::Validation("filler tokens requested from an empty lexicon".into()));
        }
        if self.content_count == 0 {
            return Err(Error::Validation("content_count must be at least 1".into()));
        }
        for (name, p) in [
            ("style_probability", self.style_probability),
            ("content_noise", self.content_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Draws the synthetic pool. The result depends only on `spec`.
pub fn generate_synthetic_pool(spec: &SyntheticGenSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pool = Vec::with_capacity(spec.pool_size);
    for id in 0..spec.pool_size {
        let y = rng.random_bool(0.5) as u8;
        let z = rng.random_bool(0.5) as u8;
        let mut tokens = Vec::with_capacity(spec.content_count + spec.style_count + spec.filler_count);
        for _ in 0..spec.content_count {
            let flipped = rng.random::<f64>() < spec.content_noise;
            let (lex, size) = if (y == 1) != flipped {
                (Lexicon::Positive, spec.positive_words)
            } else {
                (Lexicon::Negative, spec.negative_words)
            };
            tokens.push(lex.word(rng.random_range(0..size)));
        }
        if rng.random::<f64>() < spec.style_probability {
            let (lex, size) = if z == 0 {
                (Lexicon::GroupOne, spec.group_one_words)
            } else {
                (Lexicon::GroupTwo, spec.group_two_words)
            };
            for _ in 0..spec.style_count {
                tokens.push(lex.word(rng.random_range(0..size)));
            }
        }
        for _ in 0..spec.filler_count {
            tokens.push(Lexicon::Filler.word(rng.random_range(0..spec.filler_words)));
        }
        tokens.shuffle(&mut rng);
        pool.push(Example {
            id: id as u64,
            tokens,
            y,
            z,
        });
    }
    Ok(pool)
}

/// Training-set composition. Labels and groups are each balanced 1:1
/// overall; `balance_rate` is the positive fraction inside Group I.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub total_size: usize,
    pub balance_rate: f64,
    pub val_per_cell: usize,
    pub test_per_cell: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            total_size: 4000,
            balance_rate: 0.8,
            val_per_cell: 100,
            test_per_cell: 1000,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.balance_rate > 0.0 && self.balance_rate < 1.0) {
            return Err(Error::Validation("balance_rate must lie in (0, 1)".into()));
        }
        if self.total_size == 0 {
            return Err(Error::Validation("total_size must be positive".into()));
        }
        Ok(())
    }

    /// Training counts per (group, label) cell.
    pub fn train_counts(&self) -> CellCounts {
        let n = self.total_size;
        let group_one = n / 2;
        let group_two = n - group_one;
        let positives = n / 2;
        let one_pos = ((self.balance_rate * n as f64 / 2.0).round() as usize).min(group_one);
        let one_neg = group_one - one_pos;
        let two_pos = positives.saturating_sub(one_pos).min(group_two);
        let two_neg = group_two - two_pos;
        CellCounts {
            counts: [[one_neg, one_pos], [two_neg, two_pos]],
        }
    }
}

/// Example counts indexed as `counts[z][y]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: [[usize; 2]; 2],
}

impl CellCounts {
    pub fn uniform(per_cell: usize) -> Self {
        Self {
            counts: [[per_cell; 2]; 2],
        }
    }

    pub fn of<T: Labeled>(examples: &[T]) -> Self {
        let mut counts = [[0usize; 2]; 2];
        for ex in examples {
            counts[ex.z() as usize][ex.y() as usize] += 1;
        }
        Self { counts }
    }

    pub fn get(&self, y: u8, z: u8) -> usize {
        self.counts[z as usize][y as usize]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn positives(&self) -> usize {
        self.counts[0][1] + self.counts[1][1]
    }

    pub fn group(&self, z: u8) -> usize {
        self.counts[z as usize].iter().sum()
    }
}

/// Train/validation/test plus the unused remainder of the pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub reserve: Vec<Example>,
}

pub fn build_balanced_split(pool: &[Example], spec: &CorpusSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    let train_counts = spec.train_counts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: [[Vec<&Example>; 2]; 2] = Default::default();
    for ex in pool {
        cells[ex.z as usize][ex.y as usize].push(ex);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        reserve: Vec::new(),
    };
    for z in 0..2u8 {
        for y in 0..2u8 {
            let cell = &mut cells[z as usize][y as usize];
            let n_train = train_counts.get(y, z);
            let needed = n_train + spec.val_per_cell + spec.test_per_cell;
            if cell.len() < needed {
                return Err(Error::Capacity {
                    y,
                    z,
                    needed,
                    available: cell.len(),
                });
            }
            cell.shuffle(&mut rng);
            let (train, rest) = cell.split_at(n_train);
            let (val, rest) = rest.split_at(spec.val_per_cell);
            let (test, reserve) = rest.split_at(spec.test_per_cell);
            split.train.extend(train.iter().map(|&e| e.clone()));
            split.val.extend(val.iter().map(|&e| e.clone()));
            split.test.extend(test.iter().map(|&e| e.clone()));
            split.reserve.extend(reserve.iter().map(|&e| e.clone()));
        }
    }
    split.train.shuffle(&mut rng);
    split.val.shuffle(&mut rng);
    split.test.shuffle(&mut rng);
    Ok(split)
}

/// Reproduction record written next to a prepared split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub spec: CorpusSpec,
    pub source: CorpusSource,
    pub train: CellCounts,
    pub val: CellCounts,
    pub test: CellCounts,
    pub reserve: CellCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(SyntheticGenSpec),
    Tsv { path: String },
}

impl SplitManifest {
    pub fn new(seed: u64, spec: &CorpusSpec, source: CorpusSource, split: &Split) -> Self {
        Self {
            seed,
            spec: spec.clone(),
            source,
            train: CellCounts::of(&split.train),
            val: CellCounts::of(&split.val),
            test: CellCounts::of(&split.test),
            reserve: CellCounts::of(&split.reserve),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Validation("vocabulary must start with <pad>, <unk>".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Builds the vocabulary from training examples. Tokens are ranked by
/// descending frequency, then lexicographically; at most `max_size` entries
/// (including the two reserved ones) are kept.
pub fn build_vocab(train: &[Example], min_freq: usize, max_size: usize) -> Vocabulary {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in train {
        for t in &ex.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size.saturating_sub(2))
            .map(|(t, _)| t.to_owned()),
    );
    Vocabulary::from_tokens(tokens).expect("reserved tokens present")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub id: u64,
    /// Exactly `max_len` ids; positions at or past `length` hold [`PAD`].
    pub ids: Vec<usize>,
    pub length: usize,
    pub y: u8,
    pub z: u8,
}

pub fn encode(example: &Example, vocab: &Vocabulary, max_len: usize) -> EncodedExample {
    let mut ids: Vec<usize> = example.tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    let length = ids.len();
    ids.resize(max_len, PAD);
    EncodedExample {
        id: example.id,
        ids,
        length,
        y: example.y,
        z: example.z,
    }
}

pub fn encode_all(examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Vec<EncodedExample> {
    examples.iter().map(|e| encode(e, vocab, max_len)).collect()
}

/// Real-token prefix of an encoding, mapped back to strings.
pub fn decode(encoded: &EncodedExample, vocab: &Vocabulary) -> Vec<String> {
    encoded.ids[..encoded.length]
        .iter()
        .map(|&i| vocab.token(i).to_owned())
        .collect()
}

/// A padded mini-batch trimmed to its longest real sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Row-major `batch x seq_len` token ids.
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample]) -> Self {
        let seq_len = examples.iter().map(|e| e.length).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(examples.len() * seq_len);
        for e in examples {
            ids.extend(e.ids.iter().copied().chain(std::iter::repeat(PAD)).take(seq_len));
        }
        Self {
            ids,
            lengths: examples.iter().map(|e| e.length.min(seq_len)).collect(),
            seq_len,
            y: examples.iter().map(|e| e.y as usize).collect(),
            z: examples.iter().map(|e| e.z as usize).collect(),
        }
    }

    pub fn from_slice(examples: &[EncodedExample]) -> Self {
        Self::new(&examples.iter().collect::<Vec<_>>())
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }
}

/// Vocabulary and padding settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub max_len: usize,
    pub min_freq: usize,
    pub max_vocab: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            min_freq: 1,
            max_vocab: 50_000,
        }
    }
}

/// A split encoded with a vocabulary built from its training portion.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

impl EncodedSplit {
    pub fn new(split: &Split, config: &EncodingConfig) -> Self {
        let vocab = build_vocab(&split.train, config.min_freq, config.max_vocab);
        Self {
            train: encode_all(&split.train, &vocab, config.max_len),
            val: encode_all(&split.val, &vocab, config.max_len),
            test: encode_all(&split.test, &vocab, config.max_len),
            vocab,
        }
    }
}
