//! Versioned JSON container of named tensors, model config and vocabulary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autograd::Mat;
use super::params::{NamedTensor, ParameterBundle};
use super::vocab::Vocab;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;
use crate::sat::TagPolicy;

pub const FORMAT: &str = "turducken-toy-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    #[serde(default)]
    pub prompt: PromptTemplate,
    #[serde(default)]
    pub tag_policy: TagPolicy,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &Model, vocab: Vocab, prompt: PromptTemplate, tag_policy: TagPolicy) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config().clone(),
            vocab,
            prompt,
            tag_policy,
            tensors: model.params().to_named(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn model(&self) -> Result<Model> {
        let mut names = Vec::with_capacity(self.tensors.len());
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let m = Mat::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
            names.push(t.name.clone());
            tensors.push(m);
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        Model::from_params(self.config.clone(), ParameterBundle::from_parts(names, tensors))
    }
}
