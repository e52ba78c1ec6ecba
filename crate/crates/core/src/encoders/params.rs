//! Named parameter and batch-norm buffer storage.

use std::collections::HashMap;

use rand::Rng;

use super::arch::{ArchitectureSpec, Layer};
use crate::autodiff::{BatchNormState, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
    bn: Vec<(String, BatchNormState<T>)>,
    bn_index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            bn: Vec::new(),
            bn_index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.params[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.params.len());
                self.params.push((name, value));
            }
        }
    }

    pub fn insert_bn(&mut self, name: impl Into<String>, state: BatchNormState<T>) {
        let name = name.into();
        match self.bn_index.get(&name) {
            Some(&i) => self.bn[i].1 = state,
            None => {
                self.bn_index.insert(name.clone(), self.bn.len());
                self.bn.push((name, state));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].1)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.params[i].1)
    }

    pub fn bn_state(&self, name: &str) -> Option<&BatchNormState<T>> {
        self.bn_index.get(name).map(|&i| &self.bn[i].1)
    }

    pub fn bn_state_mut(&mut self, name: &str) -> Result<&mut BatchNormState<T>> {
        match self.bn_index.get(name) {
            Some(&i) => Ok(&mut self.bn[i].1),
            None => Err(Error::invalid(format!("missing batch-norm state `{name}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn bn_states(&self) -> impl Iterator<Item = (&str, &BatchNormState<T>)> {
        self.bn.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Puts a parameter on the tape, trainable or held fixed.
    pub fn bind(&self, tape: &mut Tape<T>, name: &str, frozen: bool) -> Result<Var> {
        let value = self.get(name)?.clone();
        Ok(if frozen {
            tape.frozen_param(name, value)
        } else {
            tape.param(name, value)
        })
    }

    /// Copies every parameter and buffer of `other` in, keeping its names.
    pub fn extend(&mut self, other: &ParamStore<T>) {
        for (n, t) in other.iter() {
            self.insert(n, t.clone());
        }
        for (n, s) in other.bn_states() {
            self.insert_bn(n, s.clone());
        }
    }

    /// Fraction of trainable scalars with magnitude below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let total = self.numel();
        if total == 0 {
            return 0.0;
        }
        let small = self
            .params
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .filter(|v| v.as_f64().abs() < threshold)
            .count();
        small as f64 / total as f64
    }
}

/// Kaiming fan-in normal weights, zero biases, unit/zero batch-norm affine.
pub fn kaiming_conv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    rng: &mut R,
) {
    let fan_in = in_ch * kernel * kernel * kernel;
    let std = (2.0 / fan_in as f64).sqrt();
    store.insert(
        format!("{name}.weight"),
        Tensor::randn(&[out_ch, in_ch, kernel, kernel, kernel], std, rng),
    );
    store.insert(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
}

pub fn kaiming_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    in_features: usize,
    out_features: usize,
    rng: &mut R,
) {
    let std = (2.0 / in_features as f64).sqrt();
    store.insert(
        format!("{name}.weight"),
        Tensor::randn(&[out_features, in_features], std, rng),
    );
    store.insert(format!("{name}.bias"), Tensor::zeros(&[out_features]));
}

pub fn init_bn<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) {
    store.insert(format!("{name}.gamma"), Tensor::ones(&[channels]));
    store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]));
    store.insert_bn(name, BatchNormState::new(channels));
}

/// Fresh parameters for every layer of `spec`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(spec: &ArchitectureSpec, rng: &mut R) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for layer in &spec.layers {
        match layer {
            Layer::Conv { name, in_ch, out_ch, kernel, .. } => {
                kaiming_conv(&mut store, name, *in_ch, *out_ch, *kernel, rng)
            }
            Layer::BatchNorm { name, channels } => init_bn(&mut store, name, *channels),
            Layer::Linear { name, in_features, out_features } => {
                kaiming_linear(&mut store, name, *in_features, *out_features, rng)
            }
            Layer::Residual { name, in_ch, out_ch, stride } => {
                kaiming_conv(&mut store, &format!("{name}.conv1"), *in_ch, *out_ch, 3, rng);
                init_bn(&mut store, &format!("{name}.bn1"), *out_ch);
                kaiming_conv(&mut store, &format!("{name}.conv2"), *out_ch, *out_ch, 3, rng);
                init_bn(&mut store, &format!("{name}.bn2"), *out_ch);
                if Layer::has_downsample(*in_ch, *out_ch, *stride) {
                    kaiming_conv(&mut store, &format!("{name}.down"), *in_ch, *out_ch, 3, rng);
                    init_bn(&mut store, &format!("{name}.down_bn"), *out_ch);
                }
            }
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten | Layer::Tap(_) => {}
        }
    }
    store
}
