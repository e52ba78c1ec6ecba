//! AMSGrad with bias correction.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Tape};
use crate::encoders::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment buffers of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub v_max: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            v_max: vec![T::zero(); len],
        }
    }
}

/// One AMSGrad update of `param` in place, `step` being the 1-based
/// iteration count after this update.
pub fn amsgrad_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut Moments<T>,
    step: u64,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(Error::shape(format!(
            "amsgrad: param {} / grad {} / state {} lengths differ",
            param.len(),
            grad.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let bc1 = T::one() - b1.powi(step as i32);
    let bc2 = T::one() - b2.powi(step as i32);
    let step_size = T::lit(lr) / bc1;
    let bc2_sqrt = bc2.sqrt();
    let eps = T::lit(EPSILON);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        if state.v[i] > state.v_max[i] {
            state.v_max[i] = state.v[i];
        }
        let denom = state.v_max[i].sqrt() / bc2_sqrt + eps;
        param[i] -= step_size * state.m[i] / denom;
    }
    Ok(())
}

/// Optimizer state for a set of named parameters.
#[derive(Debug, Clone)]
pub struct AmsGrad<T> {
    pub lr: f64,
    pub step: u64,
    state: HashMap<String, Moments<T>>,
}

impl<T: Scalar> AmsGrad<T> {
    pub fn new(lr: f64) -> Result<Self> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            step: 0,
            state: HashMap::new(),
        })
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.state.get(name)
    }

    /// Updates every trainable tape parameter found in `stores`. Frozen
    /// parameters and names not present in any store are left alone.
    pub fn step(&mut self, stores: &mut [&mut ParamStore<T>], grads: &Gradients<T>, tape: &Tape<T>) -> Result<()> {
        self.step += 1;
        for (name, var) in tape.params() {
            if !tape.requires_grad(*var) {
                continue;
            }
            let Some(param) = stores.iter_mut().find_map(|s| s.get_mut(name)) else {
                continue;
            };
            let grad = grads.get_or_zeros(*var, param.shape());
            let state = self
                .state
                .entry(name.clone())
                .or_insert_with(|| Moments::new(param.numel()));
            amsgrad_update(param.data_mut(), grad.data(), state, self.step, self.lr)?;
        }
        Ok(())
    }

    /// Single-tensor convenience used in tests and small experiments.
    pub fn step_tensor(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(format!("{:?} vs {:?}", param.shape(), grad.shape())));
        }
        self.step += 1;
        let state = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| Moments::new(param.numel()));
        amsgrad_update(param.data_mut(), grad.data(), state, self.step, self.lr)
    }
}
