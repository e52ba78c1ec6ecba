//! Donsker-Varadhan estimation with a small fully connected statistics
//! network over paired samples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::{kaiming_linear, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::AmsGrad;

#[derive(Debug, Clone)]
pub struct DvTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DvTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 100,
            batch_size: 500,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// `T(x, y)`: linear(2,H) → relu → linear(H,H) → relu → linear(H,1).
#[derive(Debug, Clone)]
pub struct DvMlp<T> {
    pub params: ParamStore<T>,
}

impl<T: Scalar> DvMlp<T> {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        kaiming_linear(&mut params, "dv.l1", 2, hidden, rng);
        kaiming_linear(&mut params, "dv.l2", hidden, hidden, rng);
        kaiming_linear(&mut params, "dv.l3", hidden, 1, rng);
        Self { params }
    }

    fn score(&self, tape: &mut Tape<T>, bound: &[Var; 6], pairs: Var) -> Result<Var> {
        let h = tape.linear(pairs, bound[0], bound[1])?;
        let h = tape.relu(h)?;
        let h = tape.linear(h, bound[2], bound[3])?;
        let h = tape.relu(h)?;
        tape.linear(h, bound[4], bound[5])
    }

    fn bind(&self, tape: &mut Tape<T>, frozen: bool) -> Result<[Var; 6]> {
        let mut out = [Var(0); 6];
        for (i, name) in ["dv.l1", "dv.l2", "dv.l3"].iter().enumerate() {
            out[2 * i] = self.params.bind(tape, &format!("{name}.weight"), frozen)?;
            out[2 * i + 1] = self.params.bind(tape, &format!("{name}.bias"), frozen)?;
        }
        Ok(out)
    }

    fn pairs(x: &[f64], y: &[f64], idx: &[usize], partner: impl Fn(usize) -> usize) -> Tensor<T> {
        let data = idx
            .iter()
            .enumerate()
            .flat_map(|(k, &i)| [T::lit(x[i]), T::lit(y[partner(k)])])
            .collect();
        Tensor::new(&[idx.len(), 2], data).expect("shape")
    }

    fn dv_on(&self, tape: &mut Tape<T>, bound: &[Var; 6], joint: Tensor<T>, marginal: Tensor<T>) -> Result<Var> {
        let j = tape.constant(joint);
        let m = tape.constant(marginal);
        let pos = self.score(tape, bound, j)?;
        let neg = self.score(tape, bound, m)?;
        tape.dv_estimate(pos, neg)
    }

    /// Maximizes the DV bound on `(x_i, y_i)` joint pairs against pairs
    /// re-matched by a fresh in-batch shuffle. Returns the per-epoch mean
    /// training estimate.
    pub fn train(&mut self, x: &[f64], y: &[f64], cfg: &DvTrainConfig) -> Result<Vec<f64>> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::invalid("need at least two paired samples"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut opt = AmsGrad::new(cfg.learning_rate)?;
        let mut order: Vec<usize> = (0..x.len()).collect();
        let bs = cfg.batch_size.clamp(2, x.len());
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks_exact(bs) {
                let mut partner: Vec<usize> = chunk.to_vec();
                partner.shuffle(&mut rng);
                let joint = Self::pairs(x, y, chunk, |k| chunk[k]);
                let marginal = Self::pairs(x, y, chunk, |k| partner[k]);
                let mut tape = Tape::new();
                let bound = self.bind(&mut tape, false)?;
                let est = self.dv_on(&mut tape, &bound, joint, marginal)?;
                sum += tape.value(est).item()?.as_f64();
                batches += 1;
                let loss = tape.neg(est)?;
                let grads = tape.backward(loss)?;
                opt.step(&mut [&mut self.params], &grads, &tape)?;
            }
            history.push(sum / batches as f64);
        }
        Ok(history)
    }

    /// DV bound on `(x, y)` with negatives from `shifts` cyclic re-pairings.
    pub fn estimate(&self, x: &[f64], y: &[f64], shifts: usize) -> Result<f64> {
        let n = x.len();
        if n != y.len() || n < 2 || shifts == 0 {
            return Err(Error::invalid("need paired samples and at least one shift"));
        }
        let idx: Vec<usize> = (0..n).collect();
        let joint = Self::pairs(x, y, &idx, |k| k);
        let marginal_parts: Vec<Tensor<T>> = (1..=shifts)
            .map(|s| Self::pairs(x, y, &idx, |k| (k + s) % n))
            .collect();
        let refs: Vec<&Tensor<T>> = marginal_parts.iter().collect();
        let marginal = Tensor::stack_outer(&refs)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true)?;
        let est = self.dv_on(&mut tape, &bound, joint, marginal)?;
        Ok(tape.value(est).item()?.as_f64())
    }
}
