//! Elementwise arithmetic, reductions and reshaping.

use super::{numel_of, GradFn, Real, Tensor, TensorResult};
use crate::error::TensorError;

/// Smallest divisor magnitude accepted by [`Tensor::div`].
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Numpy-style right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid over `out`, zero on broadcast axes.
fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let offset = out.len() - shape.len();
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Visit every output position with the matching operand offsets.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel_of(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

struct Binary<T: Real> {
    op: BinOp,
    inputs: [Tensor<T>; 2],
    out_shape: Vec<usize>,
}

impl<T: Real> GradFn<T> for Binary<T> {
    fn name(&self) -> &'static str {
        self.op.name()
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let [a, b] = &self.inputs;
        let (ad, bd) = (a.data(), b.data());
        let sa = strides_in(a.shape(), &self.out_shape);
        let sb = strides_in(b.shape(), &self.out_shape);
        let mut ga = a.requires_grad().then(|| vec![T::zero(); a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![T::zero(); b.numel()]);
        for_each_broadcast(&self.out_shape, &sa, &sb, |o, ia, ib| {
            let go = g[o];
            let (da, db) = match self.op {
                BinOp::Add => (go, go),
                BinOp::Sub => (go, -go),
                BinOp::Mul => (go * bd[ib], go * ad[ia]),
                BinOp::Div => {
                    let inv = T::one() / bd[ib];
                    (go * inv, -go * ad[ia] * inv * inv)
                }
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += db;
            }
        });
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Neg,
    Sqrt,
    Square,
    Abs,
    Tanh,
    Sigmoid,
    Softplus,
    Log2,
    Exp,
    ClampMin(T),
    Scale(T),
    Shift(T),
}

/// Logistic function without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large positive x.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Unary<T> {
    fn name(&self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Abs => "abs",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Log2 => "log2",
            Unary::Exp => "exp",
            Unary::ClampMin(_) => "clamp_min",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
        }
    }

    #[inline]
    fn forward(&self, x: T) -> T {
        match *self {
            Unary::Neg => -x,
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Log2 => x.log2(),
            Unary::Exp => x.exp(),
            Unary::ClampMin(floor) => x.max(floor),
            Unary::Scale(c) => x * c,
            Unary::Shift(c) => x + c,
        }
    }

    /// d(out)/d(in) from input `x` and output `y`.
    #[inline]
    fn derivative(&self, x: T, y: T) -> T {
        let one = T::one();
        match *self {
            Unary::Neg => -one,
            Unary::Sqrt => one / (y + y),
            Unary::Square => x + x,
            Unary::Abs => {
                if x > T::zero() {
                    one
                } else if x < T::zero() {
                    -one
                } else {
                    T::zero()
                }
            }
            Unary::Tanh => one - y * y,
            Unary::Sigmoid => y * (one - y),
            Unary::Softplus => sigmoid(x),
            Unary::Log2 => one / (x * T::lit(std::f64::consts::LN_2)),
            Unary::Exp => y,
            Unary::ClampMin(floor) => {
                if x >= floor {
                    one
                } else {
                    T::zero()
                }
            }
            Unary::Scale(c) => c,
            Unary::Shift(_) => one,
        }
    }
}

struct UnaryFn<T: Real> {
    op: Unary<T>,
    inputs: [Tensor<T>; 1],
    output: Vec<T>,
}

impl<T: Real> GradFn<T> for UnaryFn<T> {
    fn name(&self) -> &'static str {
        self.op.name()
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = self.inputs[0].data();
        let gi = g
            .iter()
            .zip(x)
            .zip(&self.output)
            .map(|((&g, &x), &y)| g * self.op.derivative(x, y))
            .collect();
        vec![Some(gi)]
    }
}

struct Reduce<T: Real> {
    mean: bool,
    inputs: [Tensor<T>; 1],
}

impl<T: Real> GradFn<T> for Reduce<T> {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = self.inputs[0].numel();
        let v = if self.mean { g[0] / T::from_usize(n).unwrap() } else { g[0] };
        vec![Some(vec![v; n])]
    }
}

struct Reshape<T: Real> {
    inputs: [Tensor<T>; 1],
}

impl<T: Real> GradFn<T> for Reshape<T> {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

impl<T: Real> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: BinOp) -> TensorResult<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| {
            TensorError::dim(op.name(), format!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()))
        })?;
        if op == BinOp::Div {
            let guard = T::lit(DIV_GUARD);
            if let Some(bad) = other.data().iter().find(|v| !(v.abs() >= guard)) {
                return Err(TensorError::guard("div", format!("divisor {bad} below {DIV_GUARD:e}")));
            }
        }
        let (a, b) = (self.data(), other.data());
        let data = if self.shape() == other.shape() {
            a.iter().zip(b).map(|(&x, &y)| op.apply(x, y)).collect()
        } else {
            let sa = strides_in(self.shape(), &out_shape);
            let sb = strides_in(other.shape(), &out_shape);
            let mut out = vec![T::zero(); numel_of(&out_shape)];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = op.apply(a[ia], b[ib]));
            out
        };
        Ok(Tensor::from_op(
            out_shape.clone(),
            data,
            Binary { op, inputs: [self.clone(), other.clone()], out_shape },
        ))
    }

    fn unary(&self, op: Unary<T>) -> Tensor<T> {
        let output: Vec<T> = self.data().iter().map(|&x| op.forward(x)).collect();
        let data = output.clone();
        Tensor::from_op(self.shape().to_vec(), data, UnaryFn { op, inputs: [self.clone()], output })
    }

    fn require_positive(&self, op: &'static str) -> TensorResult<()> {
        match self.data().iter().find(|v| !(**v > T::zero())) {
            Some(bad) => Err(TensorError::guard(op, format!("operand {bad} is not strictly positive"))),
            None => Ok(()),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, BinOp::Mul)
    }

    /// Elementwise quotient; every divisor must satisfy `|b| >= 1e-12`.
    pub fn div(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        self.binary(other, BinOp::Div)
    }

    pub fn neg(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Neg))
    }

    pub fn sqrt(&self) -> TensorResult<Tensor<T>> {
        self.require_positive("sqrt")?;
        Ok(self.unary(Unary::Sqrt))
    }

    pub fn square(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Square))
    }

    pub fn abs(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Abs))
    }

    pub fn tanh(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Tanh))
    }

    pub fn sigmoid(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Sigmoid))
    }

    pub fn softplus(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Softplus))
    }

    pub fn log2(&self) -> TensorResult<Tensor<T>> {
        self.require_positive("log2")?;
        Ok(self.unary(Unary::Log2))
    }

    pub fn exp(&self) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Exp))
    }

    /// `max(x, floor)`; the gradient is passed where `x >= floor`.
    pub fn clamp_min(&self, floor: T) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::ClampMin(floor)))
    }

    pub fn mul_scalar(&self, c: T) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Scale(c)))
    }

    pub fn add_scalar(&self, c: T) -> TensorResult<Tensor<T>> {
        Ok(self.unary(Unary::Shift(c)))
    }

    pub fn sum(&self) -> TensorResult<Tensor<T>> {
        self.reduce(false)
    }

    pub fn mean(&self) -> TensorResult<Tensor<T>> {
        self.reduce(true)
    }

    fn reduce(&self, mean: bool) -> TensorResult<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::Empty(if mean { "mean" } else { "sum" }));
        }
        let s: T = self.data().iter().copied().sum();
        let v = if mean { s / T::from_usize(n).unwrap() } else { s };
        Ok(Tensor::from_op(Vec::new(), vec![v], Reduce { mean, inputs: [self.clone()] }))
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::dim(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Reshape { inputs: [self.clone()] }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn p(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::parameter(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(t(&[1], &[0.0]).sigmoid().unwrap().item(), 0.5);
        let sp = t(&[1], &[0.0]).softplus().unwrap().item();
        assert!((sp - std::f64::consts::LN_2).abs() < 1e-15);
        // overflow-safe branches
        assert_eq!(softplus(1000.0_f64), 1000.0);
        assert!(softplus(-1000.0_f64) >= 0.0);
        assert_eq!(sigmoid(-1000.0_f64), 0.0);
        assert_eq!(t(&[4], &[1.0, 2.0, 3.0, 6.0]).mean().unwrap().item(), 3.0);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let x = p(&[1], &[0.0]);
        x.tanh().unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn reduction_gradients() {
        let x = p(&[4], &[1.0, 2.0, 3.0, 6.0]);
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        let y = p(&[4], &[1.0, 2.0, 3.0, 6.0]);
        y.mean().unwrap().backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![0.25; 4]);
        let z = p(&[2], &[1.0, -2.0]);
        z.square().unwrap().mean().unwrap().backward().unwrap();
        assert_eq!(z.grad().unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn linear_loss_gradient_is_the_constant() {
        let x = p(&[3], &[0.3, -1.0, 4.0]);
        let c = t(&[3], &[2.5, 2.5, 2.5]);
        c.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.5; 3]);
    }

    #[test]
    fn empty_reduction_is_an_error() {
        let e = Tensor::<f64>::from_vec(&[0], vec![]).unwrap();
        assert_eq!(e.sum().unwrap_err(), TensorError::Empty("sum"));
        assert_eq!(e.mean().unwrap_err(), TensorError::Empty("mean"));
    }

    #[test]
    fn guards_on_nonpositive_operands() {
        let z = t(&[2], &[1.0, 0.0]);
        assert!(matches!(t(&[2], &[1.0, 1.0]).div(&z), Err(TensorError::NumericGuard { .. })));
        assert!(matches!(t(&[1], &[-1.0]).sqrt(), Err(TensorError::NumericGuard { .. })));
        assert!(matches!(t(&[1], &[0.0]).log2(), Err(TensorError::NumericGuard { .. })));
        assert!(t(&[1], &[1e-13]).clamp_min(1e-12).unwrap().log2().is_ok());
    }

    #[test]
    fn incompatible_broadcast_is_dimension_error() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2], &[0.0; 2]);
        assert!(matches!(a.add(&b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn per_channel_broadcast_matches_explicit_loops() {
        // x: [B=2, C=3, H=2, W=2], w: [1, C, 1, 1]
        let xs: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let ws = [0.5, -1.5, 2.0];
        let x = p(&[2, 3, 2, 2], &xs);
        let w = p(&[1, 3, 1, 1], &ws);
        let y = x.mul(&w).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for s in 0..4 {
                    let i = (b * 3 + c) * 4 + s;
                    assert_eq!(y.data()[i], xs[i] * ws[c]);
                }
            }
        }
        y.sum().unwrap().backward().unwrap();
        let gw = w.grad().unwrap();
        for c in 0..3 {
            let mut want = 0.0;
            for b in 0..2 {
                for s in 0..4 {
                    want += xs[(b * 3 + c) * 4 + s];
                }
            }
            assert!((gw[c] - want).abs() < 1e-12);
        }
        let gx = x.grad().unwrap();
        for (i, g) in gx.iter().enumerate() {
            assert_eq!(*g, ws[(i / 4) % 3]);
        }
    }

    fn check(f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>, inputs: &[(&[usize], Vec<f64>)]) -> GradCheck {
        let params: Vec<_> = inputs.iter().map(|(s, v)| p(s, v)).collect();
        check_gradients(&params, f, 1e-5)
    }

    fn positive(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        (0..n).map(|_| 0.5 + 2.0 * rng.uniform()).collect()
    }

    fn signed(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::Rng::new(seed);
        (0..n).map(|_| 4.0 * rng.uniform() - 2.0).collect()
    }

    #[test]
    fn finite_differences_agree_for_every_op() {
        let s: &[usize] = &[2, 3];
        type F = fn(&Tensor<f64>) -> TensorResult<Tensor<f64>>;
        let unary: [(&str, F, bool); 9] = [
            ("neg", |x| x.neg(), false),
            ("sqrt", |x| x.sqrt(), true),
            ("square", |x| x.square(), false),
            ("abs", |x| x.abs(), false),
            ("tanh", |x| x.tanh(), false),
            ("sigmoid", |x| x.sigmoid(), false),
            ("softplus", |x| x.softplus(), false),
            ("log2", |x| x.log2(), true),
            ("exp", |x| x.exp(), false),
        ];
        let weights = t(&[2, 3], &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
        for (i, (name, f, pos)) in unary.iter().enumerate() {
            let data = if *pos { positive(6, i as u64) } else { signed(6, i as u64) };
            let r = check(|ps| f(&ps[0]).unwrap().mul(&weights).unwrap().sum().unwrap(), &[(s, data)]);
            assert!(r.max_rel_err <= 1e-4, "{name}: {r:?}");
        }
        let r = check(
            |ps| ps[0].clamp_min(0.25).unwrap().mul(&weights).unwrap().sum().unwrap(),
            &[(s, vec![0.5, 1.0, -0.3, 2.0, 0.1, -1.0])],
        );
        assert!(r.max_rel_err <= 1e-4, "clamp_min: {r:?}");
        let r = check(
            |ps| ps[0].mul_scalar(-3.0).unwrap().add_scalar(2.0).unwrap().square().unwrap().mean().unwrap(),
            &[(s, signed(6, 11))],
        );
        assert!(r.max_rel_err <= 1e-4, "scalar ops: {r:?}");

        let bshape: &[usize] = &[1, 3];
        type B = fn(&Tensor<f64>, &Tensor<f64>) -> TensorResult<Tensor<f64>>;
        let binary: [(&str, B); 4] = [
            ("add", |a, b| a.add(b)),
            ("sub", |a, b| a.sub(b)),
            ("mul", |a, b| a.mul(b)),
            ("div", |a, b| a.div(b)),
        ];
        for (i, (name, f)) in binary.iter().enumerate() {
            let r = check(
                |ps| f(&ps[0], &ps[1]).unwrap().square().unwrap().sum().unwrap(),
                &[(s, signed(6, 20 + i as u64)), (bshape, positive(3, 30 + i as u64))],
            );
            assert!(r.max_rel_err <= 1e-4, "{name}: {r:?}");
        }
        let r = check(
            |ps| ps[0].reshape(&[3, 2]).unwrap().mul(&weights.reshape(&[3, 2]).unwrap()).unwrap().sum().unwrap(),
            &[(s, signed(6, 40))],
        );
        assert!(r.max_rel_err <= 1e-4, "reshape: {r:?}");
    }
}
