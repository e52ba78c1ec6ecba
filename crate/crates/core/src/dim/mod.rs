//! Mutual-information objectives for Deep InfoMax training.
//!
//! Local features `C(X)` (one vector per feature-map location) and the
//! global representation `Z = E(X)` are embedded by two small statistics
//! networks and scored by dot product. All estimators are returned as
//! quantities to maximize; [`local_dim_loss`] negates them for descent.

mod mine;
mod scores;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use mine::{DvMlp, DvTrainConfig};
pub use scores::ScoreTensor;

use crate::autodiff::{Tape, Var};
use crate::encoders::{kaiming_conv, kaiming_linear, Encoder, EncoderOutput, ForwardOptions, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Jsd,
    Nce,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Jsd => "jsd",
            Estimator::Nce => "nce",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsd" => Ok(Estimator::Jsd),
            "nce" => Ok(Estimator::Nce),
            other => Err(Error::invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

pub const EMBED_DIM: usize = 512;
/// Multiplier on the Kaiming draw of the last layer of each map.
pub const FINAL_INIT_SCALE: f64 = 0.1;

/// Encode-and-dot statistics networks.
///
/// `local_map`: 1×1×1 conv(C→E) → relu → 1×1×1 conv(E→E), so spatial layout
/// is preserved. `global_map`: linear(Z→E) → relu → linear(E→E).
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticsNetworks<T> {
    pub local_channels: usize,
    pub z_dim: usize,
    pub embed_dim: usize,
    pub params: ParamStore<T>,
}

impl<T: Scalar> StatisticsNetworks<T> {
    pub fn new<R: Rng + ?Sized>(local_channels: usize, z_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        kaiming_conv(&mut params, "stats.local1", local_channels, embed_dim, 1, rng);
        kaiming_conv(&mut params, "stats.local2", embed_dim, embed_dim, 1, rng);
        kaiming_linear(&mut params, "stats.global1", z_dim, embed_dim, rng);
        kaiming_linear(&mut params, "stats.global2", embed_dim, embed_dim, rng);
        // keep initial scores O(1) so the objectives start near their
        // constant-critic values instead of saturating the softplus
        for name in ["stats.local2.weight", "stats.global2.weight"] {
            if let Some(w) = params.get_mut(name) {
                *w = w.map(|x| x * T::lit(FINAL_INIT_SCALE));
            }
        }
        Self {
            local_channels,
            z_dim,
            embed_dim,
            params,
        }
    }

    /// Embeds `[B,C,d,h,w]` local features into `[B,E,L]`.
    pub fn embed_local(&self, tape: &mut Tape<T>, local_map: Var) -> Result<Var> {
        let shape = tape.shape(local_map).to_vec();
        if shape.len() != 5 || shape[1] != self.local_channels {
            return Err(Error::shape(format!(
                "local map must be [B,{},d,h,w], got {shape:?}",
                self.local_channels
            )));
        }
        let p = &self.params;
        let (w1, b1) = (p.bind(tape, "stats.local1.weight", false)?, p.bind(tape, "stats.local1.bias", false)?);
        let (w2, b2) = (p.bind(tape, "stats.local2.weight", false)?, p.bind(tape, "stats.local2.bias", false)?);
        let h = tape.conv3d(local_map, w1, b1, 1, 0)?;
        let h = tape.relu(h)?;
        let h = tape.conv3d(h, w2, b2, 1, 0)?;
        let locations = shape[2..].iter().product();
        tape.reshape(h, &[shape[0], self.embed_dim, locations])
    }

    /// Embeds `[B,Z]` representations into `[B,E]`.
    pub fn embed_global(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let p = &self.params;
        let (w1, b1) = (p.bind(tape, "stats.global1.weight", false)?, p.bind(tape, "stats.global1.bias", false)?);
        let (w2, b2) = (p.bind(tape, "stats.global2.weight", false)?, p.bind(tape, "stats.global2.bias", false)?);
        let h = tape.linear(z, w1, b1)?;
        let h = tape.relu(h)?;
        tape.linear(h, w2, b2)
    }
}

/// Full `B×B×L` score tensor between embedded local features and
/// embedded representations.
pub fn compute_scores<T: Scalar>(
    tape: &mut Tape<T>,
    nets: &StatisticsNetworks<T>,
    local_map: Var,
    z: Var,
) -> Result<ScoreTensor> {
    if tape.shape(local_map)[0] < 2 {
        return Err(Error::invalid("scores need a batch of at least 2 to form negatives"));
    }
    let local = nets.embed_local(tape, local_map)?;
    let global = nets.embed_global(tape, z)?;
    tape.pair_scores(local, global)
}

pub fn objective<T: Scalar>(tape: &mut Tape<T>, scores: ScoreTensor, estimator: Estimator) -> Result<Var> {
    match estimator {
        Estimator::Jsd => tape.jsd_objective(scores),
        Estimator::Nce => tape.nce_objective(scores),
    }
}

/// One forward pass of the local objective.
#[derive(Debug, Clone, Copy)]
pub struct DimStep {
    /// negated objective, to minimize
    pub loss: Var,
    pub objective: Var,
    pub scores: ScoreTensor,
    pub encoder: EncoderOutput,
}

/// Negated local DIM objective of `batch`, averaged over every
/// location of the third-conv feature map.
pub fn local_dim_loss<T: Scalar>(
    tape: &mut Tape<T>,
    encoder: &mut Encoder<T>,
    nets: &StatisticsNetworks<T>,
    batch: Var,
    estimator: Estimator,
    opts: ForwardOptions,
) -> Result<DimStep> {
    if tape.shape(batch)[0] < 2 {
        return Err(Error::invalid("local DIM needs a batch of at least 2"));
    }
    let out = encoder.forward(tape, batch, opts)?;
    let local = out.tap(crate::encoders::Tap::Local)?;
    let scores = compute_scores(tape, nets, local, out.output)?;
    let objective = objective(tape, scores, estimator)?;
    let loss = tape.neg(objective)?;
    Ok(DimStep {
        loss,
        objective,
        scores,
        encoder: out,
    })
}

/// `λ Σ|ω|` over every trainable parameter registered on the tape.
pub fn l1_penalty<T: Scalar>(tape: &mut Tape<T>, lambda: f64) -> Result<Var> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("L1 coefficient must be ≥ 0, got {lambda}")));
    }
    let params: Vec<Var> = tape
        .params()
        .iter()
        .map(|(_, v)| *v)
        .filter(|&v| tape.requires_grad(v))
        .collect();
    let mut terms = Vec::with_capacity(params.len());
    for v in params {
        let a = tape.abs(v)?;
        terms.push(tape.sum(a)?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(crate::Tensor::scalar(T::zero())));
    }
    let total = tape.add_all(&terms)?;
    tape.scale(total, lambda)
}

/// `λ Σ|ω|` over a parameter store, for logging.
pub fn l1_value<T: Scalar>(stores: &[&ParamStore<T>], lambda: f64) -> f64 {
    lambda
        * stores
            .iter()
            .flat_map(|s| s.iter())
            .map(|(_, t)| t.abs_sum().as_f64())
            .sum::<f64>()
}
