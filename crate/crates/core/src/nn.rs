//! Parameterized layers over the autograd graph.
//!
//! Layers hold only [`ParamId`]s; values live in a [`ParamStore`]. A forward
//! pass borrows both through a [`Ctx`].

use std::cell::RefCell;

use fryshort_autograd::{ConvSpec, Graph, NormStats, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct BnUpdate<T> {
    mean: ParamId,
    var: ParamId,
    stats: NormStats<T>,
    count: usize,
}

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'g, T: Real> {
    pub g: &'g Graph<T>,
    pub store: &'g ParamStore<T>,
    pub mode: Mode,
    dropout: RefCell<ChaCha8Rng>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
}

impl<'g, T: Real> Ctx<'g, T> {
    pub fn new(g: &'g Graph<T>, store: &'g ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            g,
            store,
            mode,
            dropout: RefCell::new(seed::rng(seed, Stream::Dropout)),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn p(&self, id: ParamId) -> Var<'g, T> {
        self.g.param(self.store, id)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'g, T> {
        self.g.constant(t)
    }

    /// Batch statistics recorded by training-mode batch norms in this pass.
    pub fn take_running_stats(&self) -> RunningStats<T> {
        RunningStats(std::mem::take(&mut *self.bn_updates.borrow_mut()))
    }
}

/// Pending running-statistic updates, applied after the graph is dropped.
pub struct RunningStats<T>(Vec<BnUpdate<T>>);

impl<T: Real> RunningStats<T> {
    /// Exponential average with `momentum`; the variance is stored unbiased.
    pub fn apply(self, store: &mut ParamStore<T>, momentum: f64) {
        let m = T::lit(momentum);
        for u in self.0 {
            let unbias = if u.count > 1 {
                T::lit(u.count as f64 / (u.count as f64 - 1.0))
            } else {
                T::one()
            };
            let rm = store.get_mut(u.mean).data_mut();
            for (r, &b) in rm.iter_mut().zip(&u.stats.mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            let rv = store.get_mut(u.var).data_mut();
            for (r, &b) in rv.iter_mut().zip(&u.stats.var) {
                *r = (T::one() - m) * *r + m * b * unbias;
            }
        }
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
    /// He-normal over fan-out, for convolutions followed by nonlinearities.
    KaimingOut,
    Constant(f64),
}

/// Registers parameters with deterministic initial values.
pub struct Builder<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: seed::rng(seed, Stream::Init),
        }
    }

    pub fn tensor(&mut self, shape: &[usize], init: Init, fan_in: usize, fan_out: usize) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let z: f64 = self.rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect(),
            Init::FanIn => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            Init::KaimingOut => {
                let std = (2.0 / fan_out.max(1) as f64).sqrt();
                (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect()
            }
            Init::Constant(c) => vec![c; n],
        };
        Tensor::from_f64(shape.to_vec(), &data)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, fan_in: usize, fan_out: usize) -> ParamId {
        let t = self.tensor(shape, init, fan_in, fan_out);
        self.store.trainable(name, t)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.store.buffer(name, value)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, din: usize, dout: usize, init: Init) -> Self {
        let w = b.param(&format!("{name}.weight"), &[din, dout], init, din, dout);
        let bias = b.param(&format!("{name}.bias"), &[dout], Init::Constant(0.0), din, dout);
        Self {
            w,
            b: Some(bias),
            din,
            dout,
        }
    }

    /// Weight and bias both zero.
    pub fn zeros<T: Real>(b: &mut Builder<T>, name: &str, din: usize, dout: usize) -> Self {
        Self::new(b, name, din, dout, Init::Constant(0.0))
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.linear(cx.p(self.w), self.b.map(|b| cx.p(b)))
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        b: &mut Builder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
    ) -> Self {
        let cig = cin / spec.groups;
        let fan_in = cig * k * k;
        let fan_out = cout / spec.groups * k * k;
        let w = b.param(&format!("{name}.weight"), &[cout, cig, k, k], init, fan_in, fan_out);
        let bias = bias.then(|| {
            let bound_init = match init {
                Init::Constant(c) => Init::Constant(c),
                _ => Init::Constant(0.0),
            };
            b.param(&format!("{name}.bias"), &[cout], bound_init, fan_in, fan_out)
        });
        Self { w, b: bias, spec }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv2d(cx.p(self.w), self.b.map(|b| cx.p(b)), self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: b.param(&format!("{name}.weight"), &[dim], Init::Constant(1.0), dim, dim),
            beta: b.param(&format!("{name}.bias"), &[dim], Init::Constant(0.0), dim, dim),
            eps: 1e-6,
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.layer_norm(cx.p(self.gamma), cx.p(self.beta), T::lit(self.eps))
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, groups: usize, channels: usize) -> Self {
        Self {
            groups,
            gamma: b.param(&format!("{name}.weight"), &[channels], Init::Constant(1.0), channels, channels),
            beta: b.param(&format!("{name}.bias"), &[channels], Init::Constant(0.0), channels, channels),
            eps: 1e-5,
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.group_norm(self.groups, cx.p(self.gamma), cx.p(self.beta), T::lit(self.eps))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: b.param(&format!("{name}.weight"), &[channels], Init::Constant(1.0), channels, channels),
            beta: b.param(&format!("{name}.bias"), &[channels], Init::Constant(0.0), channels, channels),
            running_mean: b.buffer(&format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: b.buffer(&format!("{name}.running_var"), Tensor::ones([channels])),
            eps: 1e-5,
        }
    }

    /// Batch statistics in training mode, running statistics otherwise.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        if cx.train() {
            self.forward_batch_stats(cx, x)
        } else {
            x.batch_norm_eval(
                cx.p(self.gamma),
                cx.p(self.beta),
                cx.store.get(self.running_mean),
                cx.store.get(self.running_var),
                T::lit(self.eps),
            )
        }
    }

    /// Always normalizes with the batch's own statistics; the running
    /// buffers are updated only in training mode.
    pub fn forward_batch_stats<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let s = x.shape();
        let count = s[0] * s[2..].iter().product::<usize>();
        let (y, stats) = x.batch_norm_train(cx.p(self.gamma), cx.p(self.beta), T::lit(self.eps));
        if cx.train() {
            cx.bn_updates.borrow_mut().push(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                stats,
                count,
            });
        }
        y
    }
}

/// Inverted dropout; identity outside training mode.
pub fn dropout<'g, T: Real>(cx: &Ctx<'g, T>, x: Var<'g, T>, p: f64) -> Var<'g, T> {
    if !cx.train() || p <= 0.0 {
        return x;
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let mut rng = cx.dropout.borrow_mut();
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen_bool(p) { 0.0 } else { keep }).collect();
    x.mul_const(&Tensor::from_f64(shape, &mask))
}

/// Multi-head self-attention over `[N, L, C]` tokens. With `sr > 1` keys and
/// values come from a strided-conv reduction of the token grid.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub kv: Linear,
    pub proj: Linear,
    pub sr: Option<(Conv2d, LayerNorm)>,
}

impl Attention {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, dim: usize, heads: usize, sr: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{dim} channels not divisible into {heads} heads");
        let init = Init::TruncNormal(0.02);
        let sr = (sr > 1).then(|| {
            (
                Conv2d::new(b, &format!("{name}.sr"), dim, dim, sr, ConvSpec::new(sr, 0), true, Init::KaimingOut),
                LayerNorm::new(b, &format!("{name}.sr_norm"), dim),
            )
        });
        Self {
            heads,
            q: Linear::new(b, &format!("{name}.q"), dim, dim, init),
            kv: Linear::new(b, &format!("{name}.kv"), dim, 2 * dim, init),
            proj: Linear::new(b, &format!("{name}.proj"), dim, dim, init),
            sr,
        }
    }

    /// `grid` is the `(h, w)` layout of the tokens; required only when a
    /// spatial reduction is configured.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>, grid: (usize, usize)) -> Var<'g, T> {
        let s = x.shape();
        let (n, l, c) = (s[0], s[1], s[2]);
        let dh = c / self.heads;
        let q = split_heads(self.q.forward(cx, x), self.heads);
        let src = match &self.sr {
            Some((conv, norm)) => {
                let m = conv.forward(cx, x.from_tokens(grid.0, grid.1));
                norm.forward(cx, m.to_tokens())
            }
            None => x,
        };
        let kv = self.kv.forward(cx, src);
        let k = split_heads(kv.narrow(2, 0, c), self.heads);
        let v = split_heads(kv.narrow(2, c, c), self.heads);
        let attn = q.matmul_nt(k).scale(T::lit(1.0 / (dh as f64).sqrt())).softmax();
        let out = merge_heads(attn.matmul(v), n, l, self.heads);
        self.proj.forward(cx, out)
    }
}

/// `[N, L, C] -> [N*heads, L, C/heads]`
pub fn split_heads<'g, T: Real>(x: Var<'g, T>, heads: usize) -> Var<'g, T> {
    let s = x.shape();
    let (n, l, c) = (s[0], s[1], s[2]);
    x.reshape([n, l, heads, c / heads])
        .permute(&[0, 2, 1, 3])
        .reshape([n * heads, l, c / heads])
}

/// Inverse of [`split_heads`].
pub fn merge_heads<'g, T: Real>(x: Var<'g, T>, n: usize, l: usize, heads: usize) -> Var<'g, T> {
    let dh = x.dim(2);
    x.reshape([n, heads, l, dh]).permute(&[0, 2, 1, 3]).reshape([n, l, heads * dh])
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, din: usize, hidden: usize, dout: usize) -> Self {
        let init = Init::TruncNormal(0.02);
        Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), din, hidden, init),
            fc2: Linear::new(b, &format!("{name}.fc2"), hidden, dout, init),
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.fc2.forward(cx, self.fc1.forward(cx, x).gelu())
    }
}
