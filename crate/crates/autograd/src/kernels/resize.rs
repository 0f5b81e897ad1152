//! Bilinear resampling with the corner-aligned convention: output pixel `i`
//! of `out` samples input coordinate `i * (in - 1) / (out - 1)`, so the four
//! corner pixels map onto each other exactly and a same-size resize is an
//! exact identity.

use crate::parallel::{for_each_chunk, Exec};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w1: T,
}

fn taps<T: Real>(input: usize, output: usize) -> Vec<Tap<T>> {
    (0..output)
        .map(|i| {
            if output == 1 || input == 1 {
                return Tap {
                    i0: 0,
                    i1: 0,
                    w1: T::zero(),
                };
            }
            let num = i * (input - 1);
            let den = output - 1;
            let i0 = num / den;
            let i1 = (i0 + 1).min(input - 1);
            let frac = T::lit((num - i0 * den) as f64) / T::lit(den as f64);
            Tap { i0, i1, w1: frac }
        })
        .collect()
}

/// Resizes the two trailing axes of `x` (any leading axes are planes).
pub fn resize_bilinear<T: Real>(exec: Exec, x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    assert!(x.rank() >= 2, "resize needs at least two axes");
    let (h, w) = (x.dim(x.rank() - 2), x.dim(x.rank() - 1));
    if h == out_h && w == out_w {
        return x.clone();
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let planes = x.numel() / (h * w);
    let src = x.data();
    let mut out = vec![T::zero(); planes * out_h * out_w];
    for_each_chunk(exec, &mut out, out_h * out_w, |p, dst| {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            let r0 = &plane[ty.i0 * w..(ty.i0 + 1) * w];
            let r1 = &plane[ty.i1 * w..(ty.i1 + 1) * w];
            let wy0 = T::one() - ty.w1;
            for (ox, tx) in tx.iter().enumerate() {
                let wx0 = T::one() - tx.w1;
                let top = r0[tx.i0] * wx0 + r0[tx.i1] * tx.w1;
                let bot = r1[tx.i0] * wx0 + r1[tx.i1] * tx.w1;
                dst[oy * out_w + ox] = top * wy0 + bot * ty.w1;
            }
        }
    });
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    Tensor::from_vec(shape, out)
}

/// Adjoint of [`resize_bilinear`]: scatters `grad` back onto an `h x w` grid.
pub fn resize_bilinear_backward<T: Real>(exec: Exec, grad: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (oh, ow) = (grad.dim(grad.rank() - 2), grad.dim(grad.rank() - 1));
    if oh == h && ow == w {
        return grad.clone();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let planes = grad.numel() / (oh * ow);
    let g = grad.data();
    let mut out = vec![T::zero(); planes * h * w];
    for_each_chunk(exec, &mut out, h * w, |p, dst| {
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        for (oy, ty) in ty.iter().enumerate() {
            let wy0 = T::one() - ty.w1;
            for (ox, tx) in tx.iter().enumerate() {
                let v = gp[oy * ow + ox];
                let wx0 = T::one() - tx.w1;
                dst[ty.i0 * w + tx.i0] += v * wy0 * wx0;
                dst[ty.i0 * w + tx.i1] += v * wy0 * tx.w1;
                dst[ty.i1 * w + tx.i0] += v * ty.w1 * wx0;
                dst[ty.i1 * w + tx.i1] += v * ty.w1 * tx.w1;
            }
        }
    });
    let mut shape = grad.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::from_vec(shape, out)
}
