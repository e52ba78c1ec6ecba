//! Pairwise local/global scores and the estimators defined on them.

use crate::autodiff::{log_sum_exp, sigmoid, softplus, Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `scores[i, j, l] = ⟨local[i, :, l], global[j, :]⟩`, shape `[B, B, L]`.
///
/// Diagonal entries `i == j` pair a location with the representation of
/// its own sample (positives); every off-diagonal entry is a negative.
#[derive(Debug, Clone, Copy)]
pub struct ScoreTensor {
    pub scores: Var,
    pub batch: usize,
    pub locations: usize,
}

struct PairScores {
    local: Var,
    global: Var,
    batch: usize,
    embed: usize,
    locations: usize,
}

impl<T: Scalar> Backward<T> for PairScores {
    fn inputs(&self) -> Vec<Var> {
        vec![self.local, self.global]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (b, e, l) = (self.batch, self.embed, self.locations);
        let local = ctx.value(self.local);
        let global = ctx.value(self.global);
        let want_local = ctx.needs_grad(self.local);
        let want_global = ctx.needs_grad(self.global);
        let mut g_local = want_local.then(|| vec![T::zero(); b * e * l]);
        let mut g_global = want_global.then(|| vec![T::zero(); b * e]);
        for i in 0..b {
            let gi = &g.data()[i * b * l..(i + 1) * b * l];
            let li = &local.data()[i * e * l..(i + 1) * e * l];
            if let Some(gl) = g_local.as_mut() {
                T::gemm(e, b, l, global.data(), true, gi, false, &mut gl[i * e * l..(i + 1) * e * l], false);
            }
            if let Some(gg) = g_global.as_mut() {
                T::gemm(b, l, e, gi, false, li, true, gg, true);
            }
        }
        vec![
            g_local.map(|d| Tensor::new(&[b, e, l], d).expect("shape")),
            g_global.map(|d| Tensor::new(&[b, e], d).expect("shape")),
        ]
    }
}

struct Jsd {
    scores: Var,
    batch: usize,
    locations: usize,
}

impl<T: Scalar> Backward<T> for Jsd {
    fn inputs(&self) -> Vec<Var> {
        vec![self.scores]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (b, l) = (self.batch, self.locations);
        let s = ctx.value(self.scores).data();
        let g0 = g.data()[0];
        let n_pos = T::lit((b * l) as f64);
        let n_neg = T::lit((b * (b - 1) * l) as f64);
        let mut out = vec![T::zero(); s.len()];
        for i in 0..b {
            for j in 0..b {
                for k in 0..l {
                    let idx = (i * b + j) * l + k;
                    out[idx] = if i == j {
                        g0 * sigmoid(-s[idx]) / n_pos
                    } else {
                        -g0 * sigmoid(s[idx]) / n_neg
                    };
                }
            }
        }
        vec![Some(Tensor::new(&[b, b, l], out).expect("shape"))]
    }
}

struct Nce<T> {
    scores: Var,
    batch: usize,
    locations: usize,
    /// softmax over the local-sample index, per (representation, location)
    probs: Vec<T>,
}

impl<T: Scalar> Backward<T> for Nce<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.scores]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (b, l) = (self.batch, self.locations);
        let scale = g.data()[0] / T::lit((b * l) as f64);
        let mut out = vec![T::zero(); b * b * l];
        for i in 0..b {
            for j in 0..b {
                for k in 0..l {
                    let idx = (i * b + j) * l + k;
                    let delta = if i == j { T::one() } else { T::zero() };
                    out[idx] = scale * (delta - self.probs[idx]);
                }
            }
        }
        vec![Some(Tensor::new(&[b, b, l], out).expect("shape"))]
    }
}

struct Dv<T> {
    pos: Var,
    neg: Var,
    neg_softmax: Vec<T>,
}

impl<T: Scalar> Backward<T> for Dv<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.pos, self.neg]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g0 = g.data()[0];
        let pos = ctx.value(self.pos);
        let n = T::lit(pos.numel() as f64);
        let gp = ctx
            .needs_grad(self.pos)
            .then(|| Tensor::full(pos.shape(), g0 / n));
        let gn = ctx.needs_grad(self.neg).then(|| {
            let data = self.neg_softmax.iter().map(|&p| -g0 * p).collect();
            Tensor::new(ctx.value(self.neg).shape(), data).expect("shape")
        });
        vec![gp, gn]
    }
}

impl<T: Scalar> Tape<T> {
    /// Dot products of every (local location, global representation) pair.
    pub fn pair_scores(&mut self, local: Var, global: Var) -> Result<ScoreTensor> {
        let ls = self.shape(local).to_vec();
        let gs = self.shape(global).to_vec();
        if ls.len() != 3 || gs.len() != 2 || ls[0] != gs[0] || ls[1] != gs[1] {
            return Err(Error::shape(format!(
                "pair_scores: local {ls:?} must be [B,E,L] and global {gs:?} [B,E]"
            )));
        }
        let (b, e, l) = (ls[0], ls[1], ls[2]);
        if b < 2 {
            return Err(Error::invalid("scores need a batch of at least 2 to form negatives"));
        }
        let mut out = vec![T::zero(); b * b * l];
        {
            let lv = self.value(local).data();
            let gv = self.value(global).data();
            for i in 0..b {
                T::gemm(
                    b,
                    e,
                    l,
                    gv,
                    false,
                    &lv[i * e * l..(i + 1) * e * l],
                    false,
                    &mut out[i * b * l..(i + 1) * b * l],
                    false,
                );
            }
        }
        let value = Tensor::new(&[b, b, l], out)?;
        let scores = self.push_op(
            "pair_scores",
            value,
            Box::new(PairScores {
                local,
                global,
                batch: b,
                embed: e,
                locations: l,
            }),
        )?;
        Ok(ScoreTensor {
            scores,
            batch: b,
            locations: l,
        })
    }

    /// Wraps an existing `[B,B,L]` tensor as scores.
    pub fn as_scores(&self, scores: Var) -> Result<ScoreTensor> {
        let s = self.shape(scores);
        if s.len() != 3 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::shape(format!("scores must be [B,B,L] with B ≥ 2, got {s:?}")));
        }
        Ok(ScoreTensor {
            scores,
            batch: s[0],
            locations: s[2],
        })
    }

    /// Jensen-Shannon estimate: `E_pos[-sp(-s)] - E_neg[sp(s)]`.
    pub fn jsd_objective(&mut self, st: ScoreTensor) -> Result<Var> {
        let (b, l) = (st.batch, st.locations);
        let s = self.value(st.scores).data();
        // accumulate in f64 so long sums stay exact to f32 rounding
        let (mut pos, mut neg) = (0.0, 0.0);
        for i in 0..b {
            for j in 0..b {
                for k in 0..l {
                    let v = s[(i * b + j) * l + k];
                    if i == j {
                        pos -= softplus(-v).as_f64();
                    } else {
                        neg += softplus(v).as_f64();
                    }
                }
            }
        }
        let value = T::lit(pos / (b * l) as f64 - neg / (b * (b - 1) * l) as f64);
        self.push_op(
            "jsd_objective",
            Tensor::scalar(value),
            Box::new(Jsd {
                scores: st.scores,
                batch: b,
                locations: l,
            }),
        )
    }

    /// Noise-contrastive estimate. For each representation `j` and location
    /// `l` the candidate set is the `l`-th local feature of every sample in
    /// the batch, exactly one of which (sample `j`) is positive:
    /// `mean_{j,l} [ s[j,j,l] - ln Σ_i exp s[i,j,l] ]`. Always ≤ 0; adding
    /// `ln B` gives the mutual-information estimate, which is ≤ `ln B`.
    pub fn nce_objective(&mut self, st: ScoreTensor) -> Result<Var> {
        let (b, l) = (st.batch, st.locations);
        let s = self.value(st.scores).data();
        let mut probs = vec![T::zero(); s.len()];
        let mut total = 0.0;
        for j in 0..b {
            for k in 0..l {
                let column = (0..b).map(|i| s[(i * b + j) * l + k]);
                let lse = log_sum_exp(column);
                total += (s[(j * b + j) * l + k] - lse).as_f64();
                for i in 0..b {
                    let idx = (i * b + j) * l + k;
                    probs[idx] = (s[idx] - lse).exp();
                }
            }
        }
        let value = T::lit(total / (b * l) as f64);
        self.push_op(
            "nce_objective",
            Tensor::scalar(value),
            Box::new(Nce {
                scores: st.scores,
                batch: b,
                locations: l,
                probs,
            }),
        )
    }

    /// Donsker-Varadhan bound `mean(pos) - ln mean(exp(neg))`.
    pub fn dv_estimate(&mut self, pos: Var, neg: Var) -> Result<Var> {
        let p = self.value(pos);
        let n = self.value(neg);
        if p.numel() == 0 || n.numel() == 0 {
            return Err(Error::Empty("dv_estimate scores"));
        }
        let mean_pos = p.sum() / T::lit(p.numel() as f64);
        let lse = log_sum_exp(n.data().iter().copied());
        let log_mean_exp = lse - T::lit(n.numel() as f64).ln();
        let neg_softmax = n.data().iter().map(|&v| (v - lse).exp()).collect();
        let value = mean_pos - log_mean_exp;
        self.push_op("dv_estimate", Tensor::scalar(value), Box::new(Dv { pos, neg, neg_softmax }))
    }
}
