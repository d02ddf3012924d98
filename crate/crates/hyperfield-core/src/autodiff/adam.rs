//! Parameter storage and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::math;

/// Named, ordered collection of trainable tensors.
///
/// Order is insertion order and is part of the determinism contract: leaves
/// enter tapes, gradients come back, and optimizer moments all line up by
/// position.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter tensor; the tensor is marked trainable.
    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(CoreError::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let i = self.tensors.len();
        self.index.insert(name.to_string(), i);
        self.names.push(name.to_string());
        self.tensors.push(tensor.trainable());
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.index_of(name)?;
        Some(&mut self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

/// Optimizer state: step counter, hyperparameters, and per-parameter moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    ///
    /// Defaults: `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-15`.
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros = |_: ()| {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            first_moment: zeros(()),
            second_moment: zeros(()),
        }
    }
}

/// One Adam update with bias correction.
///
/// `grads` is aligned with `params`; `None` entries are exact zero gradients
/// (moments still decay, so a block with momentum keeps moving — and a block
/// whose moments are zero stays put).
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(CoreError::InvalidArgument(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if grads.len() != params.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let t = state.step_count + 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - math::powi(b1, t as i32);
    let bc2 = 1.0 - math::powi(b2, t as i32);
    for i in 0..params.len() {
        if let Some(g) = &grads[i] {
            if g.shape() != params.tensor(i).shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "adam_step",
                    lhs: params.tensor(i).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let p = params.tensors[i].data_mut();
        match &grads[i] {
            Some(g) => {
                for (j, &gv) in g.data().iter().enumerate() {
                    if !gv.is_finite() {
                        return Err(CoreError::NonFinite(format!(
                            "gradient of parameter {:?}",
                            params.names[i]
                        )));
                    }
                    m[j] = b1 * m[j] + (1.0 - b1) * gv;
                    v[j] = b2 * v[j] + (1.0 - b2) * gv * gv;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    p[j] -= lr * mhat / (math::sqrt(vhat) + state.epsilon);
                }
            }
            None => {
                for j in 0..p.len() {
                    m[j] *= b1;
                    v[j] *= b2;
                    if m[j] != 0.0 || v[j] != 0.0 {
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= lr * mhat / (math::sqrt(vhat) + state.epsilon);
                    }
                }
            }
        }
    }
    state.step_count = t;
    state.learning_rate = lr;
    Ok(())
}

/// Exponential learning-rate decay, constant after `decay_steps`:
/// `base_lr · (final_lr/base_lr)^(min(step, decay_steps)/decay_steps)`.
pub fn lr_schedule(step: u64, base_lr: f64, final_lr: f64, decay_steps: u64) -> f64 {
    let s = step.min(decay_steps) as f64 / decay_steps as f64;
    base_lr * math::powf(final_lr / base_lr, s)
}
