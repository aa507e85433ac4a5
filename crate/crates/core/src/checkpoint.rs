//! Self-describing JSON model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierModel;
use crate::corpus::Vocabulary;
use crate::debiaser::{DebiasConfig, DebiasedModel};
use crate::error::{Error, Result};
use crate::explainer::ExplainerModel;

pub const FORMAT: &str = "implicit-debias-checkpoint";
pub const VERSION: u32 = 1;

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Classifier {
        model: ClassifierModel,
    },
    Explainer {
        model: ExplainerModel,
    },
    Debiased {
        config: DebiasConfig,
        corrector: ExplainerModel,
        main: ClassifierModel,
        adversary: Option<ClassifierModel>,
    },
}

impl Payload {
    fn fingerprints(&self) -> Vec<&str> {
        match self {
            Payload::Classifier { model } => vec![model.vocab_fingerprint()],
            Payload::Explainer { model } => vec![model.vocab_fingerprint()],
            Payload::Debiased { corrector, main, adversary, .. } => {
                let mut v = vec![corrector.vocab_fingerprint(), main.vocab_fingerprint()];
                v.extend(adversary.iter().map(|a| a.vocab_fingerprint()));
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub vocab_fingerprint: String,
    pub vocab: Vocabulary,
    pub payload: Payload,
}

impl Checkpoint {
    pub fn new(seed: u64, vocab: &Vocabulary, payload: Payload) -> Self {
        Self {
            format: FORMAT.to_owned(),
            version: VERSION,
            seed,
            vocab_fingerprint: vocab.fingerprint(),
            vocab: vocab.clone(),
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!("not a checkpoint file (format {:?})", ck.format)));
        }
        if ck.version > VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is newer than supported version {VERSION}",
                ck.version
            )));
        }
        let actual = ck.vocab.fingerprint();
        if actual != ck.vocab_fingerprint || ck.payload.fingerprints().iter().any(|f| *f != actual) {
            return Err(Error::Config("checkpoint vocabulary hash does not match its models".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Drops the stored adversary unless `restore_adversary` is set.
    pub fn into_debiased(self, restore_adversary: bool) -> Result<(DebiasedModel, Option<ClassifierModel>)> {
        match self.payload {
            Payload::Debiased {
                corrector,
                main,
                adversary,
                ..
            } => Ok((DebiasedModel { corrector, main }, adversary.filter(|_| restore_adversary))),
            _ => Err(Error::Config("checkpoint does not hold a debiased model".into())),
        }
    }
}
