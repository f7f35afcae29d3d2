//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Completed updates.
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One Adam update of every parameter from its accumulated gradient.
///
/// Parameters without a gradient are treated as having zero gradient. If any
/// gradient is non-finite nothing is modified, the step counter stays put and
/// the first offending parameter is named in the error.
pub fn adam_step<T: Real>(params: &mut [(String, &mut Tensor<T>)], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    assert_eq!(params.len(), state.m.len(), "optimizer state built for a different parameter list");
    let grads: Vec<Option<Vec<T>>> = params.iter().map(|(_, p)| p.grad()).collect();
    for ((name, _), g) in params.iter().zip(&grads) {
        if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient { param: name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let c1 = T::lit(1.0 - BETA1.powi(t));
    let c2 = T::lit(1.0 - BETA2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(EPSILON));
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut data = p.to_vec();
        for j in 0..data.len() {
            let gj = g.as_ref().map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        **p = Tensor::parameter(p.shape(), data).expect("same shape");
    }
    Ok(())
}
