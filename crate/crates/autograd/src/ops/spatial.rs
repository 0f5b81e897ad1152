use crate::graph::Var;
use crate::kernels::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::kernels::resize::{resize_bilinear, resize_bilinear_backward};
use crate::real::Real;

impl<'g, T: Real> Var<'g, T> {
    /// 2-D convolution, `self: [N, Cin, H, W]`, `w: [Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(self, w: Var<'g, T>, bias: Option<Var<'g, T>>, spec: ConvSpec) -> Var<'g, T> {
        let exec = self.exec();
        let (x, wv) = (self.value(), w.value());
        let bv = bias.map(|b| b.value());
        let (out, cache) = conv2d_forward(exec, &x, &wv, bv.as_ref(), spec);
        let need_input = self.requires_grad();
        let mut parents = vec![self, w];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.g.push_op(
            out,
            &parents,
            Box::new(move |g| {
                let grads = conv2d_backward(exec, &x, &wv, &cache, spec, g, need_input);
                let mut v = vec![need_input.then_some(grads.input), Some(grads.weight)];
                if has_bias {
                    v.push(Some(grads.bias));
                }
                v
            }),
        )
    }

    /// Bilinear resize of the two trailing axes (corner-aligned).
    pub fn resize_bilinear(self, h: usize, w: usize) -> Var<'g, T> {
        let exec = self.exec();
        let x = self.value();
        let (ih, iw) = (x.dim(x.rank() - 2), x.dim(x.rank() - 1));
        if ih == h && iw == w {
            return self;
        }
        let out = resize_bilinear(exec, &x, h, w);
        self.op1(out, move |g| Some(resize_bilinear_backward(exec, g, ih, iw)))
    }
}
