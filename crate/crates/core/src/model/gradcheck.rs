//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::train::{joint_gradients, joint_loss, relu_margin, task_loss, TaskBatch};
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::prompt::TaskId;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;
/// Minimum |ReLU input| required before differencing. Closer than this
/// and a perturbation can cross the kink, where the derivative is undefined.
pub const KINK_MARGIN: f64 = 1e-2;
const MAX_REDRAWS: u64 = 64;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst_param: String,
    pub entries_checked: usize,
    /// Largest |∂ primary loss / ∂ W_aux| measured by finite differences.
    pub gate_path_grad: f64,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(REL_FLOOR)
}

fn random_batch(rng: &mut ChaCha8Rng, task: TaskId, vocab: usize, rows: usize) -> TaskBatch {
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..rows)
        .map(|_| {
            let src_len = rng.gen_range(1..=4);
            let tgt_len = rng.gen_range(1..=4);
            let mut draw = |n| (0..n).map(|_| rng.gen_range(3..vocab as u32)).collect();
            (draw(src_len), draw(tgt_len))
        })
        .collect();
    TaskBatch::new(task, &pairs)
}

/// Random tiny model with every tensor perturbed away from its structured
/// initialization, so biases and gains are exercised too.
pub fn random_tiny_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let mut model = Model::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..model.params().len() {
        model
            .params_mut()
            .tensor_mut(i)
            .mapv_inplace(|x| x + rng.gen_range(-0.3..0.3));
    }
    Ok(model)
}

/// Compares analytic joint-loss gradients with central finite differences
/// over every parameter entry of a tiny model.
pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    if config.d_model > 8 || config.n_layers != 1 || config.vocab_size > 10 {
        return Err(Error::Argument(
            "gradient check needs d_model <= 8, one layer and vocab <= 10".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    for redraw in 0..MAX_REDRAWS {
        let model = random_tiny_model(config, seed.wrapping_add(redraw << 32))?;
        let pri = random_batch(&mut rng, TaskId::Origin, config.vocab_size, 2);
        let aux = random_batch(&mut rng, TaskId::Syntax, config.vocab_size, 2);
        if relu_margin(&model, &pri)?.min(relu_margin(&model, &aux)?) >= KINK_MARGIN {
            return check_model(&model, &pri, &aux);
        }
    }
    Err(Error::Argument(format!(
        "no draw in {MAX_REDRAWS} kept every ReLU input {KINK_MARGIN} away from zero"
    )))
}

pub fn check_model(model: &Model, pri: &TaskBatch, aux: &TaskBatch) -> Result<GradCheckReport> {
    let (_, grads) = joint_gradients(model, pri, aux)?;
    let mut probe = model.clone();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let aux_w = model.layout().aux_w;
    let mut gate_path_grad = 0.0f64;
    for p in 0..model.params().len() {
        let n = model.params().tensor(p).len();
        for e in 0..n {
            let orig = model.params().tensor(p).as_slice().expect("contiguous")[e];
            let eval = |x: f64, probe: &mut Model| -> Result<(f64, f64)> {
                probe.params_mut().tensor_mut(p).as_slice_mut().expect("contiguous")[e] = x;
                let l = joint_loss(probe, pri, aux)?;
                Ok((l.total, l.primary))
            };
            let (plus, plus_pri) = eval(orig + FD_STEP, &mut probe)?;
            let (minus, minus_pri) = eval(orig - FD_STEP, &mut probe)?;
            eval(orig, &mut probe)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[p].as_ref().map_or(0.0, |g| g.as_slice().expect("contiguous")[e]);
            let rel = relative_error(analytic, numeric);
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel.max(worst.0), model.params().names()[p].clone());
            }
            if p == aux_w {
                gate_path_grad = gate_path_grad.max(((plus_pri - minus_pri) / (2.0 * FD_STEP)).abs());
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        entries_checked: checked,
        gate_path_grad,
    })
}

/// Analytic gradient of the primary loss alone with respect to `W_aux`.
pub fn primary_grad_into_aux_head(model: &Model, pri: &TaskBatch) -> Result<f64> {
    let (_, g) = task_loss(model, pri, true)?;
    let g = g.expect("gradients requested");
    Ok(g[model.layout().aux_w]
        .as_ref()
        .map_or(0.0, |m| m.iter().fold(0.0f64, |a, x| a.max(x.abs()))))
}
