use crate::kernels::gemm::gemm_into;
use crate::parallel::{for_each_chunk, map_indexed, Exec};
use crate::real::Real;
use crate::tensor::Tensor;

/// Stride / zero-padding / group configuration of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn grouped(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new(x: &[usize], weight: &[usize], spec: ConvSpec) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be NCHW, got {x:?}");
        assert_eq!(weight.len(), 4, "conv2d weight must be OIHW, got {weight:?}");
        let (n, cin, h, w) = (x[0], x[1], x[2], x[3]);
        let (cout, cig, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        let g = spec.groups;
        assert!(g >= 1 && cin % g == 0 && cout % g == 0, "bad groups {g}");
        assert_eq!(cig * g, cin, "weight {weight:?} does not match {cin} input channels");
        assert!(spec.stride >= 1);
        assert!(
            h + 2 * spec.padding >= kh && w + 2 * spec.padding >= kw,
            "kernel larger than padded input"
        );
        let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - kw) / spec.stride + 1;
        Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho,
            wo,
            spec,
        }
    }

    fn cig(&self) -> usize {
        self.cin / self.spec.groups
    }

    fn cog(&self) -> usize {
        self.cout / self.spec.groups
    }

    fn patch(&self) -> usize {
        self.cig() * self.kh * self.kw
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    pub fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cin == self.cout && self.spec.groups > 1
    }
}

/// Unfolds `channels` planes of `x` into a `[channels*kh*kw, ho*wo]` matrix.
fn im2col<T: Real>(x: &[T], channels: usize, g: &ConvGeom, cols: &mut [T]) {
    let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
    let hw = g.ho * g.wo;
    for c in 0..channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into image planes.
fn col2im<T: Real>(cols: &[T], channels: usize, g: &ConvGeom, x: &mut [T]) {
    let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
    let hw = g.ho * g.wo;
    for c in 0..channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Per-sample unfolded inputs kept from the forward pass for the backward.
pub struct ConvCache<T> {
    cols: Option<Vec<Vec<T>>>,
}

pub fn conv2d_forward<T: Real>(
    exec: Exec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> (Tensor<T>, ConvCache<T>) {
    let g = ConvGeom::new(x.shape(), weight.shape(), spec);
    if let Some(b) = bias {
        assert_eq!(b.numel(), g.cout, "conv bias length");
    }
    let out_hw = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.cout * out_hw];
    let xd = x.data();
    let wd = weight.data();
    let in_sample = g.cin * g.h * g.w;

    if g.is_depthwise() {
        let k = g.kh * g.kw;
        let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
        for_each_chunk(exec, &mut out, out_hw, |plane, dst| {
            let c = plane % g.cout;
            let src = &xd[plane * g.h * g.w..(plane + 1) * g.h * g.w];
            let wk = &wd[c * k..(c + 1) * k];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = T::zero();
                    for ki in 0..g.kh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                acc += wk[ki * g.kw + kj] * src[iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                    dst[oy * g.wo + ox] = acc;
                }
            }
        });
        add_bias(&mut out, bias, g.cout, out_hw);
        return (
            Tensor::from_vec([g.n, g.cout, g.ho, g.wo], out),
            ConvCache { cols: None },
        );
    }

    let (cig, cog, patch) = (g.cig(), g.cog(), g.patch());
    let cols: Option<Vec<Vec<T>>> = if g.is_pointwise() {
        None
    } else {
        Some(map_indexed(exec, g.n, |n| {
            let mut c = vec![T::zero(); g.spec.groups * patch * out_hw];
            let xs = &xd[n * in_sample..(n + 1) * in_sample];
            for grp in 0..g.spec.groups {
                im2col(
                    &xs[grp * cig * g.h * g.w..],
                    cig,
                    &g,
                    &mut c[grp * patch * out_hw..(grp + 1) * patch * out_hw],
                );
            }
            c
        }))
    };
    for_each_chunk(exec, &mut out, g.cout * out_hw, |n, dst| {
        for grp in 0..g.spec.groups {
            let b: &[T] = match &cols {
                Some(c) => &c[n][grp * patch * out_hw..(grp + 1) * patch * out_hw],
                None => &xd[n * in_sample + grp * cig * out_hw..n * in_sample + (grp + 1) * cig * out_hw],
            };
            gemm_into(
                &wd[grp * cog * patch..(grp + 1) * cog * patch],
                patch,
                false,
                b,
                out_hw,
                false,
                cog,
                patch,
                out_hw,
                T::zero(),
                &mut dst[grp * cog * out_hw..(grp + 1) * cog * out_hw],
            );
        }
    });
    add_bias(&mut out, bias, g.cout, out_hw);
    (
        Tensor::from_vec([g.n, g.cout, g.ho, g.wo], out),
        ConvCache { cols },
    )
}

fn add_bias<T: Real>(out: &mut [T], bias: Option<&Tensor<T>>, cout: usize, hw: usize) {
    if let Some(b) = bias {
        let bd = b.data();
        for (i, plane) in out.chunks_mut(hw).enumerate() {
            let v = bd[i % cout];
            plane.iter_mut().for_each(|x| *x += v);
        }
    }
}

/// Gradients of a convolution with respect to input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    exec: Exec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    cache: &ConvCache<T>,
    spec: ConvSpec,
    grad: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let g = ConvGeom::new(x.shape(), weight.shape(), spec);
    let out_hw = g.ho * g.wo;
    let gd = grad.data();
    let xd = x.data();
    let wd = weight.data();
    let in_sample = g.cin * g.h * g.w;

    let mut gbias = vec![T::zero(); g.cout];
    for (i, plane) in gd.chunks(out_hw).enumerate() {
        gbias[i % g.cout] += plane.iter().copied().sum::<T>();
    }

    if g.is_depthwise() {
        let k = g.kh * g.kw;
        let (s, p) = (g.spec.stride as isize, g.spec.padding as isize);
        let plane_grads: Vec<(Vec<T>, Vec<T>)> = map_indexed(exec, g.n * g.cin, |plane| {
            let c = plane % g.cin;
            let src = &xd[plane * g.h * g.w..(plane + 1) * g.h * g.w];
            let gp = &gd[plane * out_hw..(plane + 1) * out_hw];
            let wk = &wd[c * k..(c + 1) * k];
            let mut dw = vec![T::zero(); k];
            let mut dx = if need_input {
                vec![T::zero(); g.h * g.w]
            } else {
                Vec::new()
            };
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = gp[oy * g.wo + ox];
                    for ki in 0..g.kh {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                let at = iy as usize * g.w + ix as usize;
                                dw[ki * g.kw + kj] += go * src[at];
                                if need_input {
                                    dx[at] += go * wk[ki * g.kw + kj];
                                }
                            }
                        }
                    }
                }
            }
            (dw, dx)
        });
        let mut gw = vec![T::zero(); g.cout * k];
        let mut gx = Vec::with_capacity(if need_input { xd.len() } else { 0 });
        for (plane, (dw, dx)) in plane_grads.into_iter().enumerate() {
            let c = plane % g.cin;
            for (a, b) in gw[c * k..(c + 1) * k].iter_mut().zip(dw) {
                *a += b;
            }
            gx.extend(dx);
        }
        return ConvGrads {
            input: if need_input {
                Tensor::from_vec(x.shape().to_vec(), gx)
            } else {
                Tensor::zeros(x.shape().to_vec())
            },
            weight: Tensor::from_vec(weight.shape().to_vec(), gw),
            bias: Tensor::from_vec([g.cout], gbias),
        };
    }

    let (cig, cog, patch) = (g.cig(), g.cog(), g.patch());
    let wsize = g.cout * patch;
    // per-sample weight gradients, summed in sample order afterwards
    let partials: Vec<Vec<T>> = map_indexed(exec, g.n, |n| {
        let mut dw = vec![T::zero(); wsize];
        let gs = &gd[n * g.cout * out_hw..(n + 1) * g.cout * out_hw];
        for grp in 0..g.spec.groups {
            let b: &[T] = match &cache.cols {
                Some(c) => &c[n][grp * patch * out_hw..(grp + 1) * patch * out_hw],
                None => &xd[n * in_sample + grp * cig * out_hw..n * in_sample + (grp + 1) * cig * out_hw],
            };
            gemm_into(
                &gs[grp * cog * out_hw..(grp + 1) * cog * out_hw],
                out_hw,
                false,
                b,
                out_hw,
                true,
                cog,
                out_hw,
                patch,
                T::zero(),
                &mut dw[grp * cog * patch..(grp + 1) * cog * patch],
            );
        }
        dw
    });
    let mut gw = vec![T::zero(); wsize];
    for part in partials {
        for (a, b) in gw.iter_mut().zip(part) {
            *a += b;
        }
    }

    let mut gx = vec![T::zero(); if need_input { xd.len() } else { 0 }];
    if need_input {
        for_each_chunk(exec, &mut gx, in_sample, |n, dst| {
            let gs = &gd[n * g.cout * out_hw..(n + 1) * g.cout * out_hw];
            let mut dcols = vec![T::zero(); patch * out_hw];
            for grp in 0..g.spec.groups {
                let gslice = &gs[grp * cog * out_hw..(grp + 1) * cog * out_hw];
                let wslice = &wd[grp * cog * patch..(grp + 1) * cog * patch];
                if g.is_pointwise() {
                    gemm_into(
                        wslice,
                        patch,
                        true,
                        gslice,
                        out_hw,
                        false,
                        patch,
                        cog,
                        out_hw,
                        T::zero(),
                        &mut dst[grp * cig * out_hw..(grp + 1) * cig * out_hw],
                    );
                } else {
                    gemm_into(
                        wslice, patch, true, gslice, out_hw, false, patch, cog, out_hw,
                        T::zero(), &mut dcols,
                    );
                    col2im(&dcols, cig, &g, &mut dst[grp * cig * g.h * g.w..]);
                }
            }
        });
    }
    ConvGrads {
        input: if need_input {
            Tensor::from_vec(x.shape().to_vec(), gx)
        } else {
            Tensor::zeros(x.shape().to_vec())
        },
        weight: Tensor::from_vec(weight.shape().to_vec(), gw),
        bias: Tensor::from_vec([g.cout], gbias),
    }
}
