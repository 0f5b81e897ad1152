use crate::graph::Var;
use crate::kernels::broadcast::{binary, sum_to_shape};
use crate::real::Real;
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    fn binary_op(
        self,
        other: Var<'g, T>,
        f: impl Fn(T, T) -> T,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>) + 'static,
    ) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let out = binary(&a, &b, f);
        self.g.push_op(
            out,
            &[self, other],
            Box::new(move |g| {
                let (ga, gb) = backward(g, &a, &b);
                vec![
                    ga.map(|t| sum_to_shape(&t, a.shape())),
                    gb.map(|t| sum_to_shape(&t, b.shape())),
                ]
            }),
        )
    }

    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        self.binary_op(other, |x, y| x + y, |g, _, _| (Some(g.clone()), Some(g.clone())))
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        self.binary_op(
            other,
            |x, y| x - y,
            |g, _, _| (Some(g.clone()), Some(g.map(|v| -v))),
        )
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        self.binary_op(
            other,
            |x, y| x * y,
            |g, a, b| {
                (
                    Some(binary(g, b, |u, v| u * v)),
                    Some(binary(g, a, |u, v| u * v)),
                )
            },
        )
    }

    pub fn div(self, other: Var<'g, T>) -> Var<'g, T> {
        self.binary_op(
            other,
            |x, y| x / y,
            |g, a, b| {
                let ga = binary(g, b, |u, v| u / v);
                let q = binary(a, b, |x, y| x / (y * y));
                let gb = binary(g, &q, |u, v| -u * v);
                (Some(ga), Some(gb))
            },
        )
    }

    /// Elementwise product with a fixed tensor (broadcast onto `self`).
    pub fn mul_const(self, c: &Tensor<T>) -> Var<'g, T> {
        let k = self.g.constant(c.clone());
        self.mul(k)
    }

    pub fn add_const(self, c: &Tensor<T>) -> Var<'g, T> {
        let k = self.g.constant(c.clone());
        self.add(k)
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        let out = self.value().map(|x| x * c);
        self.op1(out, move |g| Some(g.map(|v| v * c)))
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        let out = self.value().map(|x| x + c);
        self.op1(out, |g| Some(g.clone()))
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    /// `f` applied elementwise; `df(x, y)` is the local derivative at input
    /// `x` with output `y`.
    pub fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'g, T> {
        let x = self.value();
        let y = x.map(f);
        let yc = y.clone();
        self.op1(y, move |g| {
            let d: Vec<T> = g
                .data()
                .iter()
                .zip(x.data().iter().zip(yc.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            Some(Tensor::from_vec(g.shape().to_vec(), d))
        })
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g, T> {
        let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
        let k = T::lit(0.044715);
        let half = T::lit(0.5);
        let three = T::lit(3.0);
        self.unary(
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
            },
        )
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'g, T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn abs(self) -> Var<'g, T> {
        self.unary(|x| x.abs(), |x, _| x.signum() * if x == T::zero() { T::zero() } else { T::one() })
    }

    pub fn sqr(self) -> Var<'g, T> {
        let two = T::lit(2.0);
        self.unary(|x| x * x, move |x, _| two * x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        let half = T::lit(0.5);
        self.unary(|x| x.sqrt(), move |_, y| half / y)
    }
}
