use super::conv::conv_out_dim;
use super::tape::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct MaxPool3d {
    input: Var,
    /// flat input index of the selected element, per output element
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPool3d {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.input);
        let mut gx = vec![T::zero(); x.numel()];
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            gx[src] += gv;
        }
        vec![Some(Tensor::new(x.shape(), gx).expect("shape"))]
    }
}

impl<T: Scalar> Tape<T> {
    /// Max over cubic windows. Ties go to the first element in window
    /// (depth, height, width) order.
    pub fn maxpool3d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 5 {
            return Err(Error::shape(format!("maxpool3d expects rank 5, got {xs:?}")));
        }
        let mut out = [0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            *o = conv_out_dim(xs[2 + axis], kernel, stride, 0).ok_or_else(|| {
                Error::dim(format!(
                    "maxpool3d kernel {kernel} exceeds input size {} along axis {}",
                    xs[2 + axis],
                    axis + 2
                ))
            })?;
        }
        let (d, h, w) = (xs[2], xs[3], xs[4]);
        let [od, oh, ow] = out;
        let planes = xs[0] * xs[1];
        let x = self.value(input).data();
        let mut values = Vec::with_capacity(planes * od * oh * ow);
        let mut argmax = Vec::with_capacity(values.capacity());
        for plane in 0..planes {
            let base = plane * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut best = base + (z * stride * h + y * stride) * w + xo * stride;
                        let mut best_v = x[best];
                        for a in 0..kernel {
                            for b in 0..kernel {
                                let row = base + ((z * stride + a) * h + y * stride + b) * w;
                                for c in 0..kernel {
                                    let i = row + xo * stride + c;
                                    if x[i] > best_v {
                                        best_v = x[i];
                                        best = i;
                                    }
                                }
                            }
                        }
                        values.push(best_v);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(&[xs[0], xs[1], od, oh, ow], values)?;
        self.push_op("maxpool3d", value, Box::new(MaxPool3d { input, argmax }))
    }
}
