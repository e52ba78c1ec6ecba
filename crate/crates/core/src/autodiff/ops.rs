//! Elementwise, affine, reduction and loss operations.

use rand::Rng;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerically stable `ln(1 + e^z)`.
pub fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Stable `ln Σ exp(x_i)`.
pub fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.map(|x| (x - max).exp()).sum();
    max + s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
}

struct Binary {
    a: Var,
    b: Var,
    kind: BinaryKind,
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Backward<T> for Binary {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let ga = ctx.needs_grad(self.a).then(|| match self.kind {
            BinaryKind::Add | BinaryKind::Sub => g.clone(),
            BinaryKind::Mul => zip_map(g, ctx.value(self.b), |g, b| g * b),
        });
        let gb = ctx.needs_grad(self.b).then(|| match self.kind {
            BinaryKind::Add => g.clone(),
            BinaryKind::Sub => g.map(|v| -v),
            BinaryKind::Mul => zip_map(g, ctx.value(self.a), |g, a| g * a),
        });
        vec![ga, gb]
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

struct Unary {
    input: Var,
    kind: UnaryKind,
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Scale(f64),
    Abs,
    Relu,
    Softplus,
    Square,
}

impl<T: Scalar> Backward<T> for Unary {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.input);
        let out = match self.kind {
            UnaryKind::Scale(c) => {
                let c = T::lit(c);
                g.map(|v| v * c)
            }
            UnaryKind::Abs => zip_map(g, x, |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
            UnaryKind::Relu => zip_map(g, x, |g, x| if x > T::zero() { g } else { T::zero() }),
            UnaryKind::Softplus => zip_map(g, x, |g, x| g * sigmoid(x)),
            UnaryKind::Square => zip_map(g, x, |g, x| T::lit(2.0) * g * x),
        };
        vec![Some(out)]
    }
}

struct SumAll {
    input: Var,
    scale: f64,
}

impl<T: Scalar> Backward<T> for SumAll {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let g = g.data()[0] * T::lit(self.scale);
        vec![Some(Tensor::full(ctx.value(self.input).shape(), g))]
    }
}

struct Reshape {
    input: Var,
}

impl<T: Scalar> Backward<T> for Reshape {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let shape = ctx.value(self.input).shape();
        vec![Some(g.clone().reshape(shape).expect("numel preserved"))]
    }
}

struct Linear {
    input: Var,
    weight: Var,
    bias: Var,
}

impl<T: Scalar> Backward<T> for Linear {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.weight, self.bias]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.input);
        let w = ctx.value(self.weight);
        let (batch, n) = (x.shape()[0], x.shape()[1]);
        let m = w.shape()[0];
        let gx = ctx.needs_grad(self.input).then(|| {
            let mut out = vec![T::zero(); batch * n];
            T::gemm(batch, m, n, g.data(), false, w.data(), false, &mut out, false);
            Tensor::new(&[batch, n], out).expect("shape")
        });
        let gw = ctx.needs_grad(self.weight).then(|| {
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, batch, n, g.data(), true, x.data(), false, &mut out, false);
            Tensor::new(&[m, n], out).expect("shape")
        });
        let gb = ctx.needs_grad(self.bias).then(|| {
            let mut out = vec![T::zero(); m];
            for row in g.data().chunks(m) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Tensor::new(&[m], out).expect("shape")
        });
        vec![gx, gw, gb]
    }
}

struct Dropout<T> {
    input: Var,
    mask: Vec<T>,
}

impl<T: Scalar> Backward<T> for Dropout<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let data = g.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        vec![Some(Tensor::new(g.shape(), data).expect("shape"))]
    }
}

struct CrossEntropy<T> {
    logits: Var,
    labels: Vec<usize>,
    probs: Vec<T>,
}

impl<T: Scalar> Backward<T> for CrossEntropy<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let shape = ctx.value(self.logits).shape();
        let (batch, k) = (shape[0], shape[1]);
        let scale = g.data()[0] / T::lit(batch as f64);
        let mut out = self.probs.clone();
        for (row, &label) in out.chunks_mut(k).zip(&self.labels) {
            row[label] -= T::one();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        vec![Some(Tensor::new(shape, out).expect("shape"))]
    }
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, name: &'static str) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        });
        self.push_op(name, value, Box::new(Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    fn unary(&mut self, input: Var, kind: UnaryKind, name: &'static str) -> Result<Var> {
        let value = self.value(input).map(|x| match kind {
            UnaryKind::Scale(c) => x * T::lit(c),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Relu => x.max(T::zero()),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Square => x * x,
        });
        self.push_op(name, value, Box::new(Unary { input, kind }))
    }

    pub fn scale(&mut self, input: Var, c: f64) -> Result<Var> {
        self.unary(input, UnaryKind::Scale(c), "scale")
    }

    pub fn neg(&mut self, input: Var) -> Result<Var> {
        self.scale(input, -1.0)
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Abs, "abs")
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        self.unary(input, UnaryKind::Square, "square")
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.unary(input, UnaryKind::Relu, "relu"),
            Activation::Softplus => self.unary(input, UnaryKind::Softplus, "softplus"),
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn softplus(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Softplus)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push_op("sum", value, Box::new(SumAll { input, scale: 1.0 }))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).numel() as f64;
        let value = Tensor::scalar(self.value(input).sum() / T::lit(n));
        self.push_op("mean", value, Box::new(SumAll { input, scale: 1.0 / n }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push_op("reshape", value, Box::new(Reshape { input }))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let batch = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, &[batch, rest])
    }

    /// `input[B,n] · weight[m,n]ᵀ + bias[m]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(Error::dim(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (batch, n, m) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); batch * m];
        let bias_data = self.value(bias).data();
        for row in out.chunks_mut(m) {
            row.copy_from_slice(bias_data);
        }
        T::gemm(
            batch,
            n,
            m,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            true,
        );
        let value = Tensor::new(&[batch, m], out)?;
        self.push_op(
            "linear",
            value,
            Box::new(Linear {
                input,
                weight,
                bias,
            }),
        )
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so eval mode is
    /// the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} not in [0,1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(input).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let x = self.value(input);
        let data = x.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push_op("dropout", value, Box::new(Dropout { input, mask }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy: logits {shape:?} with {} labels",
                labels.len()
            )));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range [0,{k})")));
        }
        let mut probs = Vec::with_capacity(labels.len() * k);
        let mut total = T::zero();
        for (row, &label) in self.value(logits).data().chunks(k).zip(labels) {
            let lse = log_sum_exp(row.iter().copied());
            total += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let value = Tensor::scalar(total / T::lit(labels.len() as f64));
        self.push_op(
            "cross_entropy",
            value,
            Box::new(CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            }),
        )
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or(Error::Empty("add_all"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }
}
