use std::sync::Arc;

use super::autograd::Mat;
use super::vocab::Vocab;
use super::Model;
use crate::decode::{log_softmax, Scorer, SpecialIds};
use crate::error::Result;
use crate::grammar::Grammar;
use crate::prompt::{PromptTemplate, TaskId};

/// In-process scorer over a toy [`Model`] for one description. Encoder
/// states for both task prompts are computed once up front.
pub struct ToyScorer {
    model: Arc<Model>,
    vocab: Arc<Vocab>,
    grammar: Option<Grammar>,
    encoded: [Mat; 2],
}

impl ToyScorer {
    pub fn new(model: Arc<Model>, vocab: Arc<Vocab>, template: &PromptTemplate, description: &str) -> Result<Self> {
        let max = model.config().max_input_len;
        let encode = |task| {
            let (text, _) = template.build(task, description);
            let mut ids = vocab.encode_text(&text);
            ids.truncate(max);
            model.encode(&ids)
        };
        let encoded = [encode(TaskId::Origin)?, encode(TaskId::Syntax)?];
        Ok(Self {
            model,
            vocab,
            grammar: None,
            encoded,
        })
    }

    /// Detokenize with the grammar's layout rules instead of plain spaces.
    pub fn with_grammar(mut self, grammar: Grammar) -> Self {
        self.grammar = Some(grammar);
        self
    }
}

impl Scorer for ToyScorer {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn specials(&self) -> SpecialIds {
        SpecialIds {
            bos: Some(Vocab::BOS_ID),
            eos: Vocab::EOS_ID,
            pad: Some(Vocab::PAD_ID),
        }
    }

    fn next_distribution(&self, prefix: &[u32], task: TaskId) -> Result<Vec<f64>> {
        let enc = match task {
            TaskId::Origin => &self.encoded[0],
            TaskId::Syntax => &self.encoded[1],
        };
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(Vocab::BOS_ID);
        ids.extend_from_slice(prefix);
        Ok(log_softmax(&self.model.decode_step(enc, &ids, task)?))
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let toks = self.vocab.decode(ids);
        Ok(match self.grammar {
            Some(g) => g.detokenize(&toks),
            None => toks.join(" "),
        })
    }

    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}
