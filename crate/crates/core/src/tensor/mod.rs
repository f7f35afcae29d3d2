//! Dense row-major tensors with reverse-mode differentiation.
//!
//! Every operation returns a fresh immutable [`Tensor`]. When at least one
//! operand requires a gradient the result keeps a [`GradFn`] pointing back at
//! its operands, forming a DAG that [`Tensor::backward`] walks in reverse
//! topological order. Leaf tensors accumulate `grad += dloss/dleaf`;
//! intermediate gradients live only for the duration of one backward pass.
//!
//! 4-D activations follow the `batch x channels x height x width` layout.

mod blob;
pub mod gradcheck;
mod conv;
mod ops;
mod real;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

pub use blob::{read_blob, write_blob, ByteReader};
pub use ops::{sigmoid, softplus, DIV_GUARD};
pub use conv::{conv2d, conv_transpose2d, conv_output_extent, conv_transpose_output_extent};
pub use real::Real;
pub(crate) use real::{gemm, MatRef};

use crate::error::TensorError;

pub type TensorResult<T> = std::result::Result<T, TensorError>;

/// Backward rule of a recorded operation.
///
/// `backward` receives `dloss/doutput` and returns one optional gradient per
/// entry of `inputs()`, each shaped like that input. Returning `None` for an
/// input that does not require a gradient is always allowed.
pub trait GradFn<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> &[Tensor<T>];
    fn backward(&self, grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<Box<dyn GradFn<T>>>,
}

/// Reference-counted tensor handle. Cloning is cheap and shares the node.
pub struct Tensor<T: Real = f64> {
    node: Arc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self { node: Arc::clone(&self.node) }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape).field("requires_grad", &self.node.requires_grad);
        if let Some(op) = &self.node.grad_fn {
            s.field("op", &op.name());
        }
        if self.numel() <= 16 {
            s.field("data", &self.node.data);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> TensorResult<Self> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::dim(
                "from_vec",
                format!("shape {shape:?} holds {} elements, got {}", numel_of(shape), data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), Arc::new(data), false))
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> TensorResult<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::leaf(t.node.shape.clone(), Arc::clone(&t.node.data), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), Arc::new(vec![value; numel_of(shape)]), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    fn leaf(shape: Vec<usize>, data: Arc<Vec<T>>, requires_grad: bool) -> Self {
        Self {
            node: Arc::new(Node { shape, data, requires_grad, grad: Mutex::new(None), grad_fn: None }),
        }
    }

    /// Wrap the result of an operation. The backward rule is kept only if an
    /// input requires a gradient.
    pub fn from_op(shape: Vec<usize>, data: Vec<T>, op: impl GradFn<T> + 'static) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = op.inputs().iter().any(Tensor::requires_grad);
        let grad_fn: Option<Box<dyn GradFn<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        Self {
            node: Arc::new(Node {
                shape,
                data: Arc::new(data),
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Accumulated gradient, if any backward pass reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    /// Reset the accumulator to exact zeros (keeps it allocated).
    pub fn zero_grad(&self) {
        let mut g = self.node.grad.lock().expect("grad lock");
        if let Some(g) = g.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Same data, cut from the graph and not tracking gradients.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), Arc::clone(&self.node.data), false)
    }

    /// Same data as a fresh trainable leaf.
    pub fn detach_parameter(&self) -> Self {
        Self::leaf(self.node.shape.clone(), Arc::clone(&self.node.data), true)
    }

    /// Convert to another precision (constant, or trainable leaf if `self` is one).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data: Vec<U> = self.data().iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::leaf(self.node.shape.clone(), Arc::new(data), self.requires_grad() && self.is_leaf())
    }

    fn id(&self) -> *const Node<T> {
        Arc::as_ptr(&self.node)
    }

    fn accumulate(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode pass from a single-element loss.
    ///
    /// Every reachable trainable leaf receives `grad += dloss/dleaf`.
    pub fn backward(&self) -> TensorResult<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS; reversed it is a topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashMap<*const Node<T>, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.id(), ());
        while let Some((t, next)) = stack.pop() {
            let inputs = t.node.grad_fn.as_ref().map(|f| f.inputs()).unwrap_or(&[]);
            if let Some(child) = inputs[next..].iter().position(|c| c.requires_grad() && !seen.contains_key(&c.id())) {
                let idx = next + child;
                let c = inputs[idx].clone();
                stack.push((t, idx + 1));
                seen.insert(c.id(), ());
                stack.push((c, 0));
            } else {
                order.push(t);
            }
        }

        let mut grads: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else { continue };
            match &t.node.grad_fn {
                None => t.accumulate(&g),
                Some(f) => {
                    let parent_grads = f.backward(&g);
                    debug_assert_eq!(parent_grads.len(), f.inputs().len(), "{} grad arity", f.name());
                    for (input, pg) in f.inputs().iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), input.numel(), "{} grad shape", f.name());
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(input.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_length_must_agree() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(Tensor::<f64>::scalar(2.0).numel(), 1);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.square().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::Contract(_))));
    }

    #[test]
    fn zero_grad_gives_exact_zeros() {
        let x = Tensor::<f64>::parameter(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        x.square().unwrap().sum().unwrap().backward().unwrap();
        assert!(x.grad().unwrap().iter().any(|v| *v != 0.0));
        x.zero_grad();
        assert!(x.grad().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, -2.0]).unwrap();
        let loss = x.square().unwrap().mean().unwrap();
        loss.backward().unwrap();
        let once = x.grad().unwrap();
        loss.backward().unwrap();
        let twice = x.grad().unwrap();
        assert_eq!(once, vec![1.0, -2.0]);
        assert_eq!(twice, vec![2.0, -4.0]);
    }

    #[test]
    fn shared_subexpression_gets_both_contributions() {
        // loss = sum(x*x + x) -> 2x + 1
        let x = Tensor::<f64>::parameter(&[2], vec![3.0, -1.0]).unwrap();
        let loss = x.mul(&x).unwrap().add(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let x = Tensor::<f64>::parameter(&[2], vec![3.0, -1.0]).unwrap();
        let y = x.detach().mul(&x).unwrap().sum().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, -1.0]);
    }
}
