use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autograd::Mat;
use super::ModelConfig;

/// Every learned tensor of the model, addressed by index or by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    names: Vec<String>,
    tensors: Vec<Mat>,
    index: HashMap<String, usize>,
}

/// Parameter indices of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub rel: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIds {
    pub ln_attn: NormIds,
    pub attn: AttnIds,
    pub ln_out: NormIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerIds {
    pub ln_self: NormIds,
    pub self_attn: AttnIds,
    pub ln_cross: NormIds,
    pub cross_attn: AttnIds,
    pub ln_out: NormIds,
    pub ffn: FfnIds,
}

/// Index map from architectural role to parameter slot.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: usize,
    pub soft_prompt: Option<usize>,
    pub encoder: Vec<EncoderLayerIds>,
    pub decoder: Vec<DecoderLayerIds>,
    pub aux_w: usize,
    pub aux_b: usize,
    pub pri_w: usize,
    pub pri_b: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.add(format!("{prefix}.gain"), (1, d), Init::Ones),
            bias: self.add(format!("{prefix}.bias"), (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, cfg: &ModelConfig, shared_rel: Option<usize>) -> AttnIds {
        let d = cfg.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let rel = match shared_rel {
            Some(r) => r,
            None => self.add(
                format!("{prefix}.rel"),
                (2 * cfg.max_rel_distance + 1, cfg.head_dim()),
                Init::Normal(0.02),
            ),
        };
        AttnIds {
            wq: self.add(format!("{prefix}.wq"), (d, d), Init::Normal(std)),
            wk: self.add(format!("{prefix}.wk"), (d, d), Init::Normal(std)),
            wv: self.add(format!("{prefix}.wv"), (d, d), Init::Normal(std)),
            wo: self.add(format!("{prefix}.wo"), (d, d), Init::Normal(std)),
            rel,
        }
    }

    fn ffn(&mut self, prefix: &str, cfg: &ModelConfig) -> FfnIds {
        let d = cfg.d_model;
        let h = cfg.ffn_dim();
        FfnIds {
            w1: self.add(format!("{prefix}.w1"), (d, h), Init::Normal(1.0 / (d as f64).sqrt())),
            b1: self.add(format!("{prefix}.b1"), (1, h), Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), (h, d), Init::Normal(1.0 / (h as f64).sqrt())),
            b2: self.add(format!("{prefix}.b2"), (1, d), Init::Zeros),
        }
    }
}

impl Layout {
    fn build(cfg: &ModelConfig) -> (Layout, Builder) {
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
        };
        let d = cfg.d_model;
        let embed = b.add("embed".into(), (cfg.vocab_size, d), Init::Normal(1.0));
        let soft_prompt = (cfg.n_soft > 0).then(|| b.add("soft_prompt".into(), (cfg.n_soft, d), Init::Normal(1.0)));
        let shared = |b: &mut Builder, name: &str| {
            cfg.share_relative.then(|| {
                b.add(
                    name.to_string(),
                    (2 * cfg.max_rel_distance + 1, cfg.head_dim()),
                    Init::Normal(0.02),
                )
            })
        };
        let enc_rel = shared(&mut b, "encoder.rel");
        let dec_self_rel = shared(&mut b, "decoder.self_rel");
        let dec_cross_rel = shared(&mut b, "decoder.cross_rel");
        let encoder = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIds {
                    ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                    attn: b.attn(&format!("{p}.attn"), cfg, enc_rel),
                    ln_out: b.norm(&format!("{p}.ln_out"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), cfg),
                }
            })
            .collect();
        let decoder = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIds {
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), cfg, dec_self_rel),
                    ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), cfg, dec_cross_rel),
                    ln_out: b.norm(&format!("{p}.ln_out"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), cfg),
                }
            })
            .collect();
        let std = 1.0 / (d as f64).sqrt();
        let aux_w = b.add("head.aux.weight".into(), (d, cfg.vocab_size), Init::Normal(std));
        let aux_b = b.add("head.aux.bias".into(), (1, cfg.vocab_size), Init::Zeros);
        let pri_w = b.add("head.pri.weight".into(), (d, cfg.vocab_size), Init::Normal(std));
        let pri_b = b.add("head.pri.bias".into(), (1, cfg.vocab_size), Init::Zeros);
        (
            Layout {
                embed,
                soft_prompt,
                encoder,
                decoder,
                aux_w,
                aux_b,
                pri_w,
                pri_b,
            },
            b,
        )
    }

    pub fn for_config(cfg: &ModelConfig) -> Layout {
        Self::build(cfg).0
    }
}

impl ParameterBundle {
    /// Random initialization from `seed`: scaled normals for weights, unit
    /// gains and zero biases for normalization layers.
    pub fn init(cfg: &ModelConfig, seed: u64) -> (Self, Layout) {
        let (layout, b) = Layout::build(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&shape, init)| match *init {
                Init::Ones => Mat::ones(shape),
                Init::Zeros => Mat::zeros(shape),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std * cfg.init_scale).expect("finite std");
                    Mat::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                }
            })
            .collect();
        (Self::from_parts(b.names, tensors), layout)
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(cfg: &ModelConfig) -> (Self, Layout) {
        let (layout, b) = Layout::build(cfg);
        let tensors = b.shapes.iter().map(|&s| Mat::zeros(s)).collect();
        (Self::from_parts(b.names, tensors), layout)
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Mat>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Mat {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect()
    }
}

/// Serialized tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}
