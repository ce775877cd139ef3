//! Teacher-forced joint training of both tasks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::autograd::{Graph, Mat};
use super::optim::{AdamW, AdamWConfig};
use super::vocab::Vocab;
use super::Model;
use crate::error::{Error, Result};
use crate::prompt::TaskId;

/// One task's padded minibatch. Targets end with eos; masks mark real
/// (non-pad) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub task: TaskId,
    pub inputs: Vec<Vec<u32>>,
    pub input_mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<u32>>,
    pub target_mask: Vec<Vec<bool>>,
}

fn pad(rows: &[Vec<u32>]) -> (Vec<Vec<u32>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.clone();
            let mut mask = vec![true; r.len()];
            ids.resize(width, Vocab::PAD_ID);
            mask.resize(width, false);
            (ids, mask)
        })
        .unzip()
}

impl TaskBatch {
    /// Pads `(source, target)` pairs, appending eos to each target.
    pub fn new(task: TaskId, pairs: &[(Vec<u32>, Vec<u32>)]) -> Self {
        let sources: Vec<Vec<u32>> = pairs.iter().map(|(s, _)| s.clone()).collect();
        let targets: Vec<Vec<u32>> = pairs
            .iter()
            .map(|(_, t)| t.iter().copied().chain([Vocab::EOS_ID]).collect())
            .collect();
        let (inputs, input_mask) = pad(&sources);
        let (targets, target_mask) = pad(&targets);
        Self {
            task,
            inputs,
            input_mask,
            targets,
            target_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Number of target positions that count towards the loss.
    pub fn token_count(&self) -> usize {
        self.target_mask.iter().flatten().filter(|m| **m).count()
    }

    fn validate(&self, vocab_size: usize) -> Result<()> {
        let rows = self.inputs.len();
        if self.input_mask.len() != rows || self.targets.len() != rows || self.target_mask.len() != rows {
            return Err(Error::Argument("batch field lengths disagree".into()));
        }
        for b in 0..rows {
            if self.inputs[b].len() != self.input_mask[b].len() || self.targets[b].len() != self.target_mask[b].len() {
                return Err(Error::Argument(format!("row {b}: mask length mismatch")));
            }
        }
        let bad = self
            .inputs
            .iter()
            .chain(&self.targets)
            .flatten()
            .find(|&&i| i as usize >= vocab_size);
        if let Some(id) = bad {
            return Err(Error::Argument(format!("token id {id} outside vocabulary")));
        }
        if self.token_count() == 0 {
            return Err(Error::Argument(format!("empty {} batch", self.task)));
        }
        Ok(())
    }

    /// Row `b` as (source ids, decoder input, targets, loss mask), trimmed of
    /// trailing padding.
    fn row(&self, b: usize) -> (Vec<u32>, Vec<u32>, Vec<usize>, Vec<bool>) {
        let src = self.inputs[b]
            .iter()
            .zip(&self.input_mask[b])
            .filter(|(_, m)| **m)
            .map(|(i, _)| *i)
            .collect();
        let n = self.target_mask[b].iter().rposition(|m| *m).map_or(0, |p| p + 1);
        let tgt = &self.targets[b][..n];
        let dec_in = std::iter::once(Vocab::BOS_ID)
            .chain(tgt.iter().take(n.saturating_sub(1)).copied())
            .collect();
        (
            src,
            dec_in,
            tgt.iter().map(|&t| t as usize).collect(),
            self.target_mask[b][..n].to_vec(),
        )
    }
}

/// Per-task cross-entropies and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub primary: f64,
    pub auxiliary: f64,
    pub total: f64,
}

type Grads = Vec<Option<Mat>>;

fn add_grads(into: &mut Grads, from: Grads) {
    for (slot, g) in into.iter_mut().zip(from) {
        match (slot.as_mut(), g) {
            (Some(acc), Some(g)) => *acc += &g,
            (None, Some(g)) => *slot = Some(g),
            _ => {}
        }
    }
}

fn example_loss(
    model: &Model,
    batch: &TaskBatch,
    b: usize,
    denom: f64,
    want_grads: bool,
) -> Result<(f64, Option<Grads>)> {
    let (src, dec_in, targets, mask) = batch.row(b);
    if targets.is_empty() {
        return Ok((0.0, None));
    }
    let mut g = Graph::new();
    let enc = model.encoder_graph(&mut g, &src)?;
    let y = model.decoder_graph(&mut g, enc, &dec_in)?;
    let (logits, _) = model.head_graph(&mut g, y, batch.task);
    let loss = g.cross_entropy(logits, &targets, &mask, denom);
    let value = g.scalar(loss);
    if !want_grads {
        return Ok((value, None));
    }
    let mut grads: Grads = vec![None; model.params().len()];
    for (idx, grad) in g.backward(loss) {
        grads[idx] = Some(grad);
    }
    Ok((value, Some(grads)))
}

/// Smallest |pre-activation| of any FFN ReLU over the batch.
pub fn relu_margin(model: &Model, batch: &TaskBatch) -> Result<f64> {
    batch.validate(model.config().vocab_size)?;
    let mut margin = f64::INFINITY;
    for b in 0..batch.len() {
        let (src, dec_in, _, _) = batch.row(b);
        let mut g = Graph::new();
        let enc = model.encoder_graph(&mut g, &src)?;
        model.decoder_graph(&mut g, enc, &dec_in)?;
        margin = margin.min(g.min_relu_input());
    }
    Ok(margin)
}

/// Token-mean cross-entropy of one task batch, optionally with gradients.
/// Examples run in parallel; results are reduced in example order so the
/// outcome is deterministic.
pub fn task_loss(model: &Model, batch: &TaskBatch, want_grads: bool) -> Result<(f64, Option<Grads>)> {
    batch.validate(model.config().vocab_size)?;
    let denom = batch.token_count() as f64;
    let parts: Vec<(f64, Option<Grads>)> = (0..batch.len())
        .into_par_iter()
        .map(|b| example_loss(model, batch, b, denom, want_grads))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads: Option<Grads> = want_grads.then(|| vec![None; model.params().len()]);
    for (l, g) in parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            add_grads(acc, g);
        }
    }
    Ok((loss, grads))
}

/// Sum of the primary and auxiliary cross-entropies.
pub fn joint_loss(model: &Model, primary: &TaskBatch, auxiliary: &TaskBatch) -> Result<JointLoss> {
    check_tasks(primary, auxiliary)?;
    let (p, _) = task_loss(model, primary, false)?;
    let (a, _) = task_loss(model, auxiliary, false)?;
    Ok(JointLoss {
        primary: p,
        auxiliary: a,
        total: p + a,
    })
}

fn check_tasks(primary: &TaskBatch, auxiliary: &TaskBatch) -> Result<()> {
    if primary.task != TaskId::Origin || auxiliary.task != TaskId::Syntax {
        return Err(Error::Argument("expected an origin batch and a syntax batch".into()));
    }
    Ok(())
}

/// Joint loss and summed gradients of both tasks.
pub fn joint_gradients(model: &Model, primary: &TaskBatch, auxiliary: &TaskBatch) -> Result<(JointLoss, Grads)> {
    check_tasks(primary, auxiliary)?;
    let (p, gp) = task_loss(model, primary, true)?;
    let (a, ga) = task_loss(model, auxiliary, true)?;
    let mut grads = gp.expect("gradients requested");
    add_grads(&mut grads, ga.expect("gradients requested"));
    Ok((
        JointLoss {
            primary: p,
            auxiliary: a,
            total: p + a,
        },
        grads,
    ))
}

/// One optimizer step on the joint loss. Returns the pre-update loss.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamW,
    primary: &TaskBatch,
    auxiliary: &TaskBatch,
) -> Result<JointLoss> {
    let (loss, grads) = joint_gradients(model, primary, auxiliary)?;
    if !loss.total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss (primary {}, auxiliary {}) at step {}",
            loss.primary,
            loss.auxiliary,
            optimizer.steps()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in `{}` at step {}",
                    model.params().names()[i],
                    optimizer.steps()
                )));
            }
        }
    }
    optimizer.update(model.params_mut(), &grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            seed: 1234,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Minibatch loop over paired primary/auxiliary examples.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let optimizer = AdamW::new(config.optimizer, model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            model,
            optimizer,
            config,
            rng,
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let bs = self.config.batch_size.min(n).max(1);
        let mut out = Vec::with_capacity(bs);
        while out.len() < bs {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Runs one step on a freshly drawn minibatch of `primary[i]`/`auxiliary[i]`.
    pub fn step(&mut self, primary: &[(Vec<u32>, Vec<u32>)], auxiliary: &[(Vec<u32>, Vec<u32>)]) -> Result<JointLoss> {
        if primary.is_empty() || primary.len() != auxiliary.len() {
            return Err(Error::Argument(
                "primary and auxiliary pair lists must be non-empty and aligned".into(),
            ));
        }
        let idx = self.next_indices(primary.len());
        let pri: Vec<_> = idx.iter().map(|&i| primary[i].clone()).collect();
        let aux: Vec<_> = idx.iter().map(|&i| auxiliary[i].clone()).collect();
        train_step(
            &mut self.model,
            &mut self.optimizer,
            &TaskBatch::new(TaskId::Origin, &pri),
            &TaskBatch::new(TaskId::Syntax, &aux),
        )
    }

    /// Runs `config.steps` steps, calling `on_step(step, loss)` after each.
    pub fn run<F>(
        &mut self,
        primary: &[(Vec<u32>, Vec<u32>)],
        auxiliary: &[(Vec<u32>, Vec<u32>)],
        mut on_step: F,
    ) -> Result<Vec<JointLoss>>
    where
        F: FnMut(usize, &JointLoss),
    {
        let mut history = Vec::with_capacity(self.config.steps);
        for s in 0..self.config.steps {
            let loss = self.step(primary, auxiliary)?;
            on_step(s, &loss);
            history.push(loss);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            max_rel_distance: 3,
            ..Default::default()
        }
    }

    #[test]
    fn batch_padding_and_rows() {
        let b = TaskBatch::new(TaskId::Origin, &[(vec![5, 6], vec![7]), (vec![5], vec![7, 8, 9])]);
        assert_eq!(b.inputs, vec![vec![5, 6], vec![5, 0]]);
        assert_eq!(b.targets[0], vec![7, 2, 0, 0]);
        assert_eq!(b.token_count(), 6);
        let (src, dec_in, tgt, mask) = b.row(1);
        assert_eq!(src, vec![5]);
        assert_eq!(dec_in, vec![1, 7, 8, 9]);
        assert_eq!(tgt, vec![7, 8, 9, 2]);
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn zero_model_loss_is_two_log_vocab() {
        let model = Model::zeros(cfg(9)).unwrap();
        let pri = TaskBatch::new(TaskId::Origin, &[(vec![4, 5], vec![6, 7]), (vec![8], vec![4])]);
        let aux = TaskBatch::new(TaskId::Syntax, &[(vec![4], vec![5, 6, 7])]);
        let l = joint_loss(&model, &pri, &aux).unwrap();
        assert!((l.total - 2.0 * 9f64.ln()).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn single_unmasked_uniform_token_costs_log_four() {
        let model = Model::zeros(cfg(4)).unwrap();
        let mut aux = TaskBatch::new(TaskId::Syntax, &[(vec![3], vec![3, 3])]);
        aux.target_mask[0] = vec![true, false, false];
        let (l, _) = task_loss(&model, &aux, false).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_argument_error() {
        let model = Model::zeros(cfg(5)).unwrap();
        let pri = TaskBatch::new(TaskId::Origin, &[]);
        let aux = TaskBatch::new(TaskId::Syntax, &[(vec![4], vec![4])]);
        assert!(matches!(joint_loss(&model, &pri, &aux), Err(Error::Argument(_))));
        let mut masked = aux.clone();
        masked.target_mask[0] = vec![false, false];
        assert!(matches!(task_loss(&model, &masked, false), Err(Error::Argument(_))));
    }

    #[test]
    fn both_tasks_reach_shared_trunk_and_gate_path() {
        let model = Model::new(cfg(10), 3).unwrap();
        let pri = TaskBatch::new(TaskId::Origin, &[(vec![4, 5], vec![6, 7])]);
        let aux = TaskBatch::new(TaskId::Syntax, &[(vec![4, 5], vec![8, 9])]);
        let (_, gp) = task_loss(&model, &pri, true).unwrap();
        let (_, ga) = task_loss(&model, &aux, true).unwrap();
        let (gp, ga) = (gp.unwrap(), ga.unwrap());
        let l = model.layout();
        let nonzero = |g: &Option<Mat>| g.as_ref().is_some_and(|m| m.iter().any(|x| *x != 0.0));
        for idx in [l.embed, l.encoder[0].attn.wq, l.decoder[0].ffn.w1] {
            assert!(
                nonzero(&gp[idx]) && nonzero(&ga[idx]),
                "{}",
                model.params().names()[idx]
            );
        }
        // the gate carries primary-loss gradient into the auxiliary head
        assert!(nonzero(&gp[l.aux_w]));
        assert!(!nonzero(&ga[l.pri_w]));
    }

    #[test]
    fn non_finite_loss_reported() {
        let mut model = Model::new(cfg(6), 1).unwrap();
        let idx = model.layout().pri_w;
        model.params_mut().tensor_mut(idx).fill(f64::NAN);
        let mut opt = AdamW::new(AdamWConfig::default(), model.params());
        let pri = TaskBatch::new(TaskId::Origin, &[(vec![4], vec![5])]);
        let aux = TaskBatch::new(TaskId::Syntax, &[(vec![4], vec![5])]);
        let err = train_step(&mut model, &mut opt, &pri, &aux).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..6).map(|i| (vec![4 + i % 3, 5], vec![6 + i % 4, 7])).collect();
        let run = || {
            let model = Model::new(cfg(12), 42).unwrap();
            let mut t = Trainer::new(
                model,
                TrainConfig {
                    steps: 5,
                    batch_size: 3,
                    seed: 9,
                    ..Default::default()
                },
            );
            t.run(&pairs, &pairs, |_, _| {}).unwrap();
            t.model.params().clone()
        };
        assert_eq!(run(), run());
    }
}
