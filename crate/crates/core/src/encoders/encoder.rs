use rand::Rng;

use super::arch::{ArchitectureSpec, Layer, Tap};
use super::params::{init_params, ParamStore};
use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// register parameters without gradients
    pub frozen: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            frozen: false,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            frozen: true,
        }
    }
}

/// Tape handles of the encoder output and its intermediate taps.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// logits for classification presets, the representation Z otherwise
    pub output: Var,
    pub local_map: Option<Var>,
    pub conv_features: Option<Var>,
    pub fc_features: Option<Var>,
}

impl EncoderOutput {
    pub fn tap(&self, tap: Tap) -> Result<Var> {
        let v = match tap {
            Tap::Local => self.local_map,
            Tap::Conv => self.conv_features,
            Tap::Fc => self.fc_features,
            Tap::Z => Some(self.output),
        };
        v.ok_or_else(|| Error::invalid(format!("tap {tap} unavailable")))
    }
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub spec: ArchitectureSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(spec: ArchitectureSpec, rng: &mut R) -> Self {
        let params = init_params(&spec, rng);
        Self { spec, params }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, opts: ForwardOptions) -> Result<EncoderOutput> {
        forward_with_taps(&self.spec, &mut self.params, tape, input, opts)
    }

    /// Eval-mode tap features of `batch`, flattened to `[B, features]`.
    pub fn features(&mut self, batch: &Tensor<T>, tap: Tap) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let out = self.forward(&mut tape, x, ForwardOptions::eval())?;
        let v = out.tap(tap)?;
        let value = tape.value(v);
        let b = value.shape()[0];
        value.clone().reshape(&[b, value.numel() / b])
    }
}

fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    name: &str,
    stride: usize,
    padding: usize,
    frozen: bool,
) -> Result<Var> {
    let w = store.bind(tape, &format!("{name}.weight"), frozen)?;
    let b = store.bind(tape, &format!("{name}.bias"), frozen)?;
    tape.conv3d(x, w, b, stride, padding)
}

fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    x: Var,
    name: &str,
    opts: ForwardOptions,
) -> Result<Var> {
    let g = store.bind(tape, &format!("{name}.gamma"), opts.frozen)?;
    let b = store.bind(tape, &format!("{name}.beta"), opts.frozen)?;
    let state = store.bn_state_mut(name)?;
    tape.batch_norm(x, g, b, state, opts.mode)
}

pub(crate) fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    name: &str,
    frozen: bool,
) -> Result<Var> {
    let w = store.bind(tape, &format!("{name}.weight"), frozen)?;
    let b = store.bind(tape, &format!("{name}.bias"), frozen)?;
    tape.linear(x, w, b)
}

/// Runs `spec` on `input: [B,1,S,S,S]`, recording the feature taps.
pub fn forward_with_taps<T: Scalar>(
    spec: &ArchitectureSpec,
    store: &mut ParamStore<T>,
    tape: &mut Tape<T>,
    input: Var,
    opts: ForwardOptions,
) -> Result<EncoderOutput> {
    let shape = tape.shape(input);
    let s = spec.input_side;
    if shape.len() != 5 || shape[1] != 1 || shape[2..] != [s, s, s] {
        return Err(Error::shape(format!(
            "encoder {} expects [B,1,{s},{s},{s}], got {shape:?}",
            spec.preset
        )));
    }
    let frozen = opts.frozen;
    let mut x = input;
    let (mut local_map, mut conv_features, mut fc_features) = (None, None, None);
    for layer in &spec.layers {
        x = match layer {
            Layer::Conv { name, stride, padding, .. } => conv(tape, store, x, name, *stride, *padding, frozen)?,
            Layer::BatchNorm { name, .. } => batch_norm(tape, store, x, name, opts)?,
            Layer::Relu => tape.relu(x)?,
            Layer::MaxPool { kernel, stride } => tape.maxpool3d(x, *kernel, *stride)?,
            Layer::Flatten => tape.flatten(x)?,
            Layer::Linear { name, .. } => linear(tape, store, x, name, frozen)?,
            Layer::Residual { name, in_ch, out_ch, stride } => {
                let h = conv(tape, store, x, &format!("{name}.conv1"), *stride, 1, frozen)?;
                let h = batch_norm(tape, store, h, &format!("{name}.bn1"), opts)?;
                let h = tape.relu(h)?;
                let h = conv(tape, store, h, &format!("{name}.conv2"), 1, 1, frozen)?;
                let h = batch_norm(tape, store, h, &format!("{name}.bn2"), opts)?;
                let shortcut = if Layer::has_downsample(*in_ch, *out_ch, *stride) {
                    let d = conv(tape, store, x, &format!("{name}.down"), *stride, 1, frozen)?;
                    batch_norm(tape, store, d, &format!("{name}.down_bn"), opts)?
                } else {
                    x
                };
                let sum = tape.add(h, shortcut)?;
                tape.relu(sum)?
            }
            Layer::Tap(tap) => {
                match tap {
                    Tap::Local => local_map = Some(x),
                    Tap::Conv => conv_features = Some(x),
                    Tap::Fc => fc_features = Some(x),
                    Tap::Z => {}
                }
                x
            }
        };
    }
    Ok(EncoderOutput {
        output: x,
        local_map,
        conv_features,
        fc_features,
    })
}
