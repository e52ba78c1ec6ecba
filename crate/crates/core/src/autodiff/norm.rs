//! Batch normalization over the channel axis (axis 1) of rank ≥ 2 inputs.

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

struct BatchNorm<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// batch statistics participate in the gradient only in train mode
    train: bool,
}

/// (batch, channels, spatial) view of a rank ≥ 2 shape.
fn layout(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

impl<T: Scalar> Backward<T> for BatchNorm<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let shape = ctx.value(self.input).shape();
        let (batch, channels, spatial) = layout(shape);
        let gamma = ctx.value(self.gamma).data();
        let n = T::lit((batch * spatial) as f64);

        let mut sum_g = vec![T::zero(); channels];
        let mut sum_gx = vec![T::zero(); channels];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    sum_g[c] += g.data()[i];
                    sum_gx[c] += g.data()[i] * self.xhat[i];
                }
            }
        }

        let gx = ctx.needs_grad(self.input).then(|| {
            let mut gx = vec![T::zero(); g.numel()];
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * spatial;
                    let k = gamma[c] * self.inv_std[c];
                    for i in off..off + spatial {
                        gx[i] = if self.train {
                            k * (g.data()[i] - sum_g[c] / n - self.xhat[i] * sum_gx[c] / n)
                        } else {
                            k * g.data()[i]
                        };
                    }
                }
            }
            Tensor::new(shape, gx).expect("shape")
        });
        let ggamma = ctx
            .needs_grad(self.gamma)
            .then(|| Tensor::new(&[channels], sum_gx.clone()).expect("shape"));
        let gbeta = ctx
            .needs_grad(self.beta)
            .then(|| Tensor::new(&[channels], sum_g.clone()).expect("shape"));
        vec![gx, ggamma, gbeta]
    }
}

impl<T: Scalar> Tape<T> {
    /// Train mode normalizes by batch statistics and folds them into the
    /// running averages (unbiased variance); eval mode uses the running
    /// averages only.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("batch_norm needs rank ≥ 2, got {shape:?}")));
        }
        let (batch, channels, spatial) = layout(&shape);
        if self.shape(gamma) != [channels]
            || self.shape(beta) != [channels]
            || state.channels() != channels
        {
            return Err(Error::shape(format!(
                "batch_norm over {channels} channels with gamma {:?}, beta {:?}, state {}",
                self.shape(gamma),
                self.shape(beta),
                state.channels()
            )));
        }
        let train = mode == Mode::Train;
        if train && batch < 2 {
            return Err(Error::invalid(
                "batch_norm in train mode needs batch size ≥ 2 (variance undefined)",
            ));
        }
        let eps = T::lit(state.epsilon);
        let x = self.value(input).data();
        let (mean, var) = if train {
            let n = T::lit((batch * spatial) as f64);
            let mut mean = vec![T::zero(); channels];
            for b in 0..batch {
                for (c, m) in mean.iter_mut().enumerate() {
                    let off = (b * channels + c) * spatial;
                    *m += x[off..off + spatial].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); channels];
            for b in 0..batch {
                for (c, v) in var.iter_mut().enumerate() {
                    let off = (b * channels + c) * spatial;
                    *v += x[off..off + spatial]
                        .iter()
                        .map(|&xi| (xi - mean[c]) * (xi - mean[c]))
                        .sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);

            let momentum = T::lit(state.momentum);
            let unbias = n / (n - T::one());
            for c in 0..channels {
                state.running_mean[c] =
                    (T::one() - momentum) * state.running_mean[c] + momentum * mean[c];
                state.running_var[c] =
                    (T::one() - momentum) * state.running_var[c] + momentum * var[c] * unbias;
            }
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma_v = self.value(gamma).data();
        let beta_v = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                    out[i] = gamma_v[c] * xhat[i] + beta_v[c];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push_op(
            "batch_norm",
            value,
            Box::new(BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            }),
        )
    }
}
