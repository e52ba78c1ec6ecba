//! 3D convolution via im2col and a dense matrix product.

use super::tape::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a strided, padded window sweep.
pub fn conv_out_dim(dim: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = dim + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    dims: [usize; 3],
    out: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn in_volume(&self) -> usize {
        self.dims.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    /// For kernel offset `kk` along an axis of length `dim`, the range of
    /// output positions that read inside the input, as (first, end).
    fn valid_range(&self, kk: usize, dim: usize, out: usize) -> (usize, usize) {
        // input = o*stride + kk - pad must lie in [0, dim)
        let first = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let end = if dim + self.pad > kk {
            ((dim + self.pad - kk - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (first.min(end), end)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let k = g.k;
    let p = g.out_volume();
    cols.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            let (d0, d1) = g.valid_range(kd, d, od);
            for kh in 0..k {
                let (h0, h1) = g.valid_range(kh, h, oh);
                for kw in 0..k {
                    let (w0, w1) = g.valid_range(kw, w, ow);
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for z in d0..d1 {
                        let iz = z * g.stride + kd - g.pad;
                        for y in h0..h1 {
                            let iy = y * g.stride + kh - g.pad;
                            let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let base = (z * oh + y) * ow;
                            if g.stride == 1 {
                                let ix0 = w0 + kw - g.pad;
                                dst[base + w0..base + w1]
                                    .copy_from_slice(&src[ix0..ix0 + (w1 - w0)]);
                            } else {
                                for xo in w0..w1 {
                                    dst[base + xo] = src[xo * g.stride + kw - g.pad];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let k = g.k;
    let p = g.out_volume();
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            let (d0, d1) = g.valid_range(kd, d, od);
            for kh in 0..k {
                let (h0, h1) = g.valid_range(kh, h, oh);
                for kw in 0..k {
                    let (w0, w1) = g.valid_range(kw, w, ow);
                    let src = &cols[row * p..(row + 1) * p];
                    for z in d0..d1 {
                        let iz = z * g.stride + kd - g.pad;
                        for y in h0..h1 {
                            let iy = y * g.stride + kh - g.pad;
                            let base = (z * oh + y) * ow;
                            let line = (iz * h + iy) * w;
                            for xo in w0..w1 {
                                dxc[line + xo * g.stride + kw - g.pad] += src[base + xo];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

struct Conv3d {
    input: Var,
    weight: Var,
    bias: Var,
    geom: Geom,
}

impl<T: Scalar> Backward<T> for Conv3d {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.weight, self.bias]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = ctx.value(self.input);
        let w = ctx.value(self.weight);
        let geom = &self.geom;
        let batch = x.shape()[0];
        let cout = w.shape()[0];
        let (kp, p) = (geom.patch(), geom.out_volume());
        let in_len = geom.cin * geom.in_volume();

        let want_x = ctx.needs_grad(self.input);
        let want_w = ctx.needs_grad(self.weight);
        let mut gx = want_x.then(|| vec![T::zero(); x.numel()]);
        let mut gw = want_w.then(|| vec![T::zero(); w.numel()]);
        let gb = ctx.needs_grad(self.bias).then(|| {
            let mut gb = vec![T::zero(); cout];
            for gb_chunk in g.data().chunks(cout * p) {
                for (o, plane) in gb.iter_mut().zip(gb_chunk.chunks(p)) {
                    *o += plane.iter().copied().sum::<T>();
                }
            }
            Tensor::new(&[cout], gb).expect("shape")
        });

        let mut cols = vec![T::zero(); kp * p];
        for b in 0..batch {
            let gout = &g.data()[b * cout * p..(b + 1) * cout * p];
            if let Some(gw) = gw.as_mut() {
                im2col(&x.data()[b * in_len..(b + 1) * in_len], geom, &mut cols);
                T::gemm(cout, p, kp, gout, false, &cols, true, gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(kp, cout, p, w.data(), true, gout, false, &mut cols, false);
                col2im(&cols, geom, &mut gx[b * in_len..(b + 1) * in_len]);
            }
        }
        vec![
            gx.map(|d| Tensor::new(x.shape(), d).expect("shape")),
            gw.map(|d| Tensor::new(w.shape(), d).expect("shape")),
            gb,
        ]
    }
}

impl<T: Scalar> Tape<T> {
    /// `input[B,Cin,D,H,W] ⋆ weight[Cout,Cin,k,k,k] + bias[Cout]` with
    /// zero padding.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 5 || ws.len() != 5 {
            return Err(Error::shape(format!(
                "conv3d expects rank-5 input and weight, got {xs:?} and {ws:?}"
            )));
        }
        let (batch, cin) = (xs[0], xs[1]);
        let (cout, k) = (ws[0], ws[2]);
        if ws[1] != cin || ws[3] != k || ws[4] != k {
            return Err(Error::shape(format!(
                "conv3d weight {ws:?} incompatible with input channels {cin}"
            )));
        }
        if bs != [cout] {
            return Err(Error::shape(format!("conv3d bias {bs:?}, expected [{cout}]")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv3d stride must be positive"));
        }
        let mut out = [0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            *o = conv_out_dim(xs[2 + axis], k, stride, padding).ok_or_else(|| {
                Error::dim(format!(
                    "conv3d kernel {k} exceeds padded input along axis {} (size {} + 2*{padding})",
                    axis + 2,
                    xs[2 + axis]
                ))
            })?;
        }
        let geom = Geom {
            cin,
            dims: [xs[2], xs[3], xs[4]],
            out,
            k,
            stride,
            pad: padding,
        };
        let (kp, p) = (geom.patch(), geom.out_volume());
        let in_len = cin * geom.in_volume();
        let mut result = vec![T::zero(); batch * cout * p];
        let mut cols = vec![T::zero(); kp * p];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let bias_data = self.value(bias).data();
            for b in 0..batch {
                let dst = &mut result[b * cout * p..(b + 1) * cout * p];
                for (plane, &bv) in dst.chunks_mut(p).zip(bias_data) {
                    plane.iter_mut().for_each(|v| *v = bv);
                }
                im2col(&x[b * in_len..(b + 1) * in_len], &geom, &mut cols);
                T::gemm(cout, kp, p, w, false, &cols, false, dst, true);
            }
        }
        let value = Tensor::new(&[batch, cout, out[0], out[1], out[2]], result)?;
        self.push_op(
            "conv3d",
            value,
            Box::new(Conv3d {
                input,
                weight,
                bias,
                geom,
            }),
        )
    }
}
