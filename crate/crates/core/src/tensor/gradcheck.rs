//! Central finite-difference gradient checker.
//!
//! Only evaluates the forward function; the analytic side comes from
//! [`Tensor::backward`]. Used by unit, integration and acceptance tests.

use super::Tensor;

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(parameter index, element index)` of the largest relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Magnitude below which gradients are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Finite-difference formula for the numeric side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    Central,
    /// Five-point central difference, error `O(h^4)`. Allows a larger `h`,
    /// which keeps round-off small when the loss is large next to a gradient entry.
    FourthOrder,
}

/// Compare analytic and central-difference gradients of `f` w.r.t. every element of `params`.
///
/// `f` must be deterministic and return a single-element tensor.
pub fn check_gradients(
    params: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>,
    eps: f64,
) -> GradCheck {
    check_gradients_with(params, f, eps, Stencil::Central)
}

/// [`check_gradients`] with an explicit stencil.
pub fn check_gradients_with(
    params: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>,
    eps: f64,
    stencil: Stencil,
) -> GradCheck {
    let leaves: Vec<Tensor<f64>> = params.iter().map(Tensor::detach_parameter).collect();
    f(&leaves).backward().expect("scalar loss");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let consts: Vec<Tensor<f64>> = params.iter().map(Tensor::detach).collect();
    let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0 };
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let eval = |delta: f64| {
                let mut data = p.to_vec();
                data[j] += delta;
                let mut args = consts.clone();
                args[pi] = Tensor::from_vec(p.shape(), data).expect("same shape");
                f(&args).item()
            };
            let numeric = match stencil {
                Stencil::Central => (eval(eps) - eval(-eps)) / (2.0 * eps),
                Stencil::FourthOrder => {
                    (8.0 * (eval(eps) - eval(-eps)) - (eval(2.0 * eps) - eval(-2.0 * eps))) / (12.0 * eps)
                }
            };
            let a = analytic[pi][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (pi, j);
            }
        }
    }
    report
}
