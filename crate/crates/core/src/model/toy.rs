//! End-to-end toy training over dual-task text pairs.

use serde::Serialize;

use super::train::{joint_loss, JointLoss, TaskBatch, TrainConfig, Trainer};
use super::vocab::Vocab;
use super::{Model, ModelConfig};
use crate::corpus::MtlPair;
use crate::error::{Error, Result};
use crate::prompt::TaskId;

pub type IdPairs = Vec<(Vec<u32>, Vec<u32>)>;

/// Id-encoded primary and auxiliary examples with their vocabulary.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub vocab: Vocab,
    pub primary: IdPairs,
    pub auxiliary: IdPairs,
}

/// Builds a whitespace vocabulary over all inputs and targets and encodes
/// the pairs, truncating to the model's length limits (one target slot is
/// kept for eos).
pub fn encode_pairs(pairs: &[MtlPair], max_input_len: usize, max_output_len: usize) -> Result<ToyData> {
    if pairs.is_empty() {
        return Err(Error::Argument("no training pairs".into()));
    }
    let texts: Vec<Vec<&str>> = pairs
        .iter()
        .flat_map(|p| {
            [
                &p.primary.input,
                &p.primary.target,
                &p.auxiliary.input,
                &p.auxiliary.target,
            ]
        })
        .map(|t| t.split_whitespace().collect())
        .collect();
    let vocab = Vocab::build(texts.iter().map(Vec::as_slice));
    let enc = |input: &str, target: &str| {
        let mut i = vocab.encode_text(input);
        i.truncate(max_input_len);
        let mut t = vocab.encode_text(target);
        t.truncate(max_output_len.saturating_sub(1));
        (i, t)
    };
    Ok(ToyData {
        primary: pairs.iter().map(|p| enc(&p.primary.input, &p.primary.target)).collect(),
        auxiliary: pairs
            .iter()
            .map(|p| enc(&p.auxiliary.input, &p.auxiliary.target))
            .collect(),
        vocab,
    })
}

/// Joint loss over the whole data set.
pub fn full_loss(model: &Model, data: &ToyData) -> Result<JointLoss> {
    joint_loss(
        model,
        &TaskBatch::new(TaskId::Origin, &data.primary),
        &TaskBatch::new(TaskId::Syntax, &data.auxiliary),
    )
}

/// Mean `|σ(Y·W_aux + b_aux) − 0.5|` over every target position and vocab
/// entry of the primary examples.
pub fn mean_gate_deviation(model: &Model, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (src, tgt) in pairs {
        let enc = model.encode(src)?;
        let mut dec_in = vec![Vocab::BOS_ID];
        dec_in.extend_from_slice(tgt);
        let gate = model.gate_values(&enc, &dec_in)?;
        total += gate.iter().map(|g| (g - 0.5).abs()).sum::<f64>();
        count += gate.len();
    }
    if count == 0 {
        return Err(Error::Argument("no positions to measure".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyReport {
    pub initial: JointLoss,
    pub final_loss: JointLoss,
    /// Per-step minibatch losses.
    pub history: Vec<JointLoss>,
    pub initial_gate_deviation: f64,
    pub gate_deviation: f64,
    pub parameters: usize,
}

impl ToyReport {
    /// Relative drop of the full-data joint loss.
    pub fn loss_reduction(&self) -> f64 {
        1.0 - self.final_loss.total / self.initial.total
    }
}

/// Trains a fresh model on `data`. `config.vocab_size` is replaced by the
/// data's vocabulary size; the model seed is `train.seed`.
pub fn train_toy<F>(data: &ToyData, config: ModelConfig, train: TrainConfig, on_step: F) -> Result<(Model, ToyReport)>
where
    F: FnMut(usize, &JointLoss),
{
    let config = ModelConfig {
        vocab_size: data.vocab.len(),
        ..config
    };
    let model = Model::new(config, train.seed)?;
    let initial = full_loss(&model, data)?;
    let initial_gate_deviation = mean_gate_deviation(&model, &data.primary)?;
    let mut trainer = Trainer::new(model, train);
    let history = trainer.run(&data.primary, &data.auxiliary, on_step)?;
    let model = trainer.model;
    let final_loss = full_loss(&model, data)?;
    let gate_deviation = mean_gate_deviation(&model, &data.primary)?;
    let parameters = model.params().scalar_count();
    Ok((
        model,
        ToyReport {
            initial,
            final_loss,
            history,
            initial_gate_deviation,
            gate_deviation,
            parameters,
        },
    ))
}
