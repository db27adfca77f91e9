//! Named parameter storage and the Adam optimiser.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a tensor and returns its slot index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places every parameter on the tape without copying.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.leaf_shared(Arc::clone(v), requires_grad))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |p: &ParamSet<T>| (0..p.len()).map(|i| vec![T::zero(); p.get(i).len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients collected on `tape` for the
    /// leaves in `vars` (as returned by [`ParamSet::register`]).
    pub fn step(&mut self, params: &mut ParamSet<T>, tape: &Tape<T>, vars: &[Var]) {
        let grads: Vec<Option<&[T]>> = vars.iter().map(|&v| tape.grad(v)).collect();
        self.apply(params, &grads);
    }

    pub fn apply(&mut self, params: &mut ParamSet<T>, grads: &[Option<&[T]>]) {
        self.step += 1;
        let cfg = self.config;
        let mut scale = T::one();
        if cfg.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.iter())
                .map(|&x| x * x)
                .sum::<T>()
                .sqrt();
            if norm > c(cfg.clip_norm) {
                scale = c::<T>(cfg.clip_norm) / norm;
            }
        }
        let (b1, b2): (T, T) = (c(cfg.beta1), c(cfg.beta2));
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr: T = c(cfg.lr);
        let eps: T = c(cfg.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
