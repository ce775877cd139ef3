//! Toy-scale encoder-decoder with relative-position attention, a shared
//! trunk and two task heads.
//!
//! The auxiliary head maps decoder states to syntax-guided-code logits,
//! `Y·W_aux + b_aux`. The primary head gates its own projection with the
//! auxiliary one: `(Y·W_pri + b_pri) ⊙ σ(Y·W_aux + b_aux)`. Training
//! minimizes the sum of both tasks' token-mean cross-entropies.

pub mod autograd;
pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod scorer;
pub mod toy;
pub mod train;
pub mod vocab;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::TaskId;
use autograd::{AttentionLayout, Graph, Mat, Var};
use params::{AttnIds, FfnIds, Layout, NormIds, ParameterBundle};

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::NamedTensor;
pub use scorer::ToyScorer;
pub use toy::{encode_pairs, train_toy, ToyData, ToyReport};
pub use train::{joint_loss, train_step, JointLoss, TaskBatch, TrainConfig, Trainer};
pub use vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_rel_distance: usize,
    pub n_soft: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    /// FFN hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// One relative-position table per stack instead of per layer.
    pub share_relative: bool,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            max_rel_distance: 16,
            n_soft: 0,
            max_input_len: 150,
            max_output_len: 256,
            ffn_mult: 4,
            share_relative: false,
            init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("max_rel_distance", self.max_rel_distance),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Argument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Argument("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

/// Scaled dot-product attention with a per-pair relative term added to keys
/// and values: `softmax(Q (K+P)ᵀ / √d_k) (V+P)`.
///
/// `p` has shape `(n_query, n_key, d_k)`; entry `p[i, j]` is added to key and
/// value row `j` when scoring query `i`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, p: &Array3<f64>) -> Result<Mat> {
    let (nq, dk) = q.dim();
    let nk = k.nrows();
    if k.ncols() != dk || v.dim() != (nk, dk) || p.dim() != (nq, nk, dk) {
        return Err(Error::Dimension(format!(
            "q {:?}, k {:?}, v {:?}, p {:?}",
            q.dim(),
            k.dim(),
            v.dim(),
            p.dim()
        )));
    }
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Mat::zeros((nq, dk));
    for i in 0..nq {
        let scores: Vec<f64> = (0..nk)
            .map(|j| (0..dk).map(|c| q[[i, c]] * (k[[j, c]] + p[[i, j, c]])).sum::<f64>() * scale)
            .collect();
        let lse = autograd::log_sum_exp(scores.iter().copied());
        for (j, sc) in scores.iter().enumerate() {
            let a = (sc - lse).exp();
            for c in 0..dk {
                out[[i, c]] += a * (v[[j, c]] + p[[i, j, c]]);
            }
        }
    }
    Ok(out)
}

/// Model instance: configuration, parameters and their layout.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParameterBundle,
    layout: Layout,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = ParameterBundle::init(&config, seed);
        Ok(Self { config, params, layout })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (params, layout) = ParameterBundle::zeros(&config);
        Ok(Self { config, params, layout })
    }

    pub fn from_params(config: ModelConfig, params: ParameterBundle) -> Result<Self> {
        config.validate()?;
        let (reference, layout) = ParameterBundle::zeros(&config);
        if reference.names() != params.names() {
            return Err(Error::Checkpoint("parameter names do not match the config".into()));
        }
        for i in 0..reference.len() {
            if reference.tensor(i).dim() != params.tensor(i).dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    params.names()[i],
                    params.tensor(i).dim(),
                    reference.tensor(i).dim()
                )));
            }
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterBundle {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterBundle {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            Some(bad) => Err(Error::Argument(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn p<'a>(&'a self, g: &mut Graph<'a>, idx: usize) -> Var {
        g.param(idx, self.params.tensor(idx))
    }

    fn norm<'a>(&'a self, g: &mut Graph<'a>, x: Var, ids: NormIds) -> Var {
        let gain = self.p(g, ids.gain);
        let bias = self.p(g, ids.bias);
        g.layer_norm(x, gain, bias)
    }

    fn ffn<'a>(&'a self, g: &mut Graph<'a>, x: Var, ids: FfnIds) -> Var {
        let w1 = self.p(g, ids.w1);
        let b1 = self.p(g, ids.b1);
        let w2 = self.p(g, ids.w2);
        let b2 = self.p(g, ids.b2);
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    fn multi_head<'a>(&'a self, g: &mut Graph<'a>, query_src: Var, key_src: Var, ids: AttnIds, causal: bool) -> Var {
        let nq = g.value(query_src).nrows();
        let nk = g.value(key_src).nrows();
        let wq = self.p(g, ids.wq);
        let wk = self.p(g, ids.wk);
        let wv = self.p(g, ids.wv);
        let wo = self.p(g, ids.wo);
        let rel = self.p(g, ids.rel);
        let q = g.matmul(query_src, wq);
        let k = g.matmul(key_src, wk);
        let v = g.matmul(key_src, wv);
        let layout = AttentionLayout::relative(nq, nk, self.config.max_rel_distance, causal);
        let heads = g.attention(q, k, v, rel, self.config.n_heads, layout);
        g.matmul(heads, wo)
    }

    /// Encoder stack over prompt token ids, soft prompt rows first.
    pub(crate) fn encoder_graph<'a>(&'a self, g: &mut Graph<'a>, ids: &[u32]) -> Result<Var> {
        if ids.len() > self.config.max_input_len {
            return Err(Error::Length {
                len: ids.len(),
                max: self.config.max_input_len,
            });
        }
        if ids.is_empty() && self.config.n_soft == 0 {
            return Err(Error::Argument("empty encoder input".into()));
        }
        self.check_ids(ids)?;
        let embed = self.p(g, self.layout.embed);
        let mut x = match (self.layout.soft_prompt, ids.is_empty()) {
            (Some(sp), true) => self.p(g, sp),
            (Some(sp), false) => {
                let soft = self.p(g, sp);
                let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                let tok = g.gather(embed, &idx);
                g.concat_rows(soft, tok)
            }
            (None, _) => {
                let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                g.gather(embed, &idx)
            }
        };
        for layer in &self.layout.encoder {
            let n = self.norm(g, x, layer.ln_attn);
            let a = self.multi_head(g, n, n, layer.attn, false);
            let x_att = g.add(x, a);
            let f = self.ffn(g, x_att, layer.ffn);
            let s = g.add(x_att, f);
            x = self.norm(g, s, layer.ln_out);
        }
        Ok(x)
    }

    /// Decoder stack over `dec_in` (already starting with bos).
    pub(crate) fn decoder_graph<'a>(&'a self, g: &mut Graph<'a>, enc: Var, dec_in: &[u32]) -> Result<Var> {
        if dec_in.len() > self.config.max_output_len {
            return Err(Error::Length {
                len: dec_in.len(),
                max: self.config.max_output_len,
            });
        }
        self.check_ids(dec_in)?;
        let embed = self.p(g, self.layout.embed);
        let idx: Vec<usize> = dec_in.iter().map(|&i| i as usize).collect();
        let mut y = g.gather(embed, &idx);
        for layer in &self.layout.decoder {
            let n = self.norm(g, y, layer.ln_self);
            let a = self.multi_head(g, n, n, layer.self_attn, true);
            let y_att = g.add(y, a);
            let n = self.norm(g, y_att, layer.ln_cross);
            let c = self.multi_head(g, n, enc, layer.cross_attn, false);
            let y_cross = g.add(y_att, c);
            let f = self.ffn(g, y_cross, layer.ffn);
            let s = g.add(y_cross, f);
            y = self.norm(g, s, layer.ln_out);
        }
        Ok(y)
    }

    /// Auxiliary-head logits `Y·W_aux + b_aux`.
    pub(crate) fn aux_logits<'a>(&'a self, g: &mut Graph<'a>, y: Var) -> Var {
        let w = self.p(g, self.layout.aux_w);
        let b = self.p(g, self.layout.aux_b);
        let z = g.matmul(y, w);
        g.add_row(z, b)
    }

    /// Task head over decoder states. Returns `(logits, gate)`; the gate is
    /// only present for the primary task.
    pub(crate) fn head_graph<'a>(&'a self, g: &mut Graph<'a>, y: Var, task: TaskId) -> (Var, Option<Var>) {
        let aux = self.aux_logits(g, y);
        match task {
            TaskId::Syntax => (aux, None),
            TaskId::Origin => {
                let gate = g.sigmoid(aux);
                let w = self.p(g, self.layout.pri_w);
                let b = self.p(g, self.layout.pri_b);
                let z = g.matmul(y, w);
                let z = g.add_row(z, b);
                (g.mul(z, gate), Some(gate))
            }
        }
    }

    /// Encoder hidden states, shape `(n_soft + len) × d_model`.
    pub fn encode(&self, ids: &[u32]) -> Result<Mat> {
        let mut g = Graph::new();
        let x = self.encoder_graph(&mut g, ids)?;
        Ok(g.value(x).clone())
    }

    /// Logits for the token following `prefix` (which must start with bos).
    pub fn decode_step(&self, enc: &Mat, prefix: &[u32], task: TaskId) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Argument("decoder prefix must contain bos".into()));
        }
        if prefix.len() > self.config.max_output_len {
            return Err(Error::Length {
                len: prefix.len(),
                max: self.config.max_output_len,
            });
        }
        if enc.ncols() != self.config.d_model {
            return Err(Error::Dimension(format!(
                "encoder states have width {}, model has {}",
                enc.ncols(),
                self.config.d_model
            )));
        }
        let mut g = Graph::new();
        let e = g.constant(enc.clone());
        let y = self.decoder_graph(&mut g, e, prefix)?;
        let (logits, _) = self.head_graph(&mut g, y, task);
        let l = g.value(logits);
        Ok(l.row(l.nrows() - 1).to_vec())
    }

    /// Decoder states for a full teacher-forced input (bos + target prefix).
    pub fn decoder_states(&self, enc: &Mat, dec_in: &[u32]) -> Result<Mat> {
        let mut g = Graph::new();
        let e = g.constant(enc.clone());
        let y = self.decoder_graph(&mut g, e, dec_in)?;
        Ok(g.value(y).clone())
    }

    /// GLU gate values `σ(Y·W_aux + b_aux)` for every position and vocab entry.
    pub fn gate_values(&self, enc: &Mat, dec_in: &[u32]) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let e = g.constant(enc.clone());
        let y = self.decoder_graph(&mut g, e, dec_in)?;
        let (_, gate) = self.head_graph(&mut g, y, TaskId::Origin);
        Ok(g.value(gate.expect("primary head has a gate")).clone())
    }
}
