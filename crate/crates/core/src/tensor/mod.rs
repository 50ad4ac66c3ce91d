//! Dense `f32` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a reference-counted node. Operations that consume at least
//! one tensor with `requires_grad` record a [`Backward`] rule together with
//! their inputs, so the graph is built implicitly during the forward pass and
//! torn down when the last handle to the root is dropped.
//!
//! ```
//! use cxray::tensor::{ops, Tensor};
//!
//! let x = Tensor::leaf(vec![3], vec![1.0, -2.0, 3.0], true).unwrap();
//! let y = ops::sum(&ops::relu(&x));
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 1.0]);
//! ```

pub mod gemm;
pub mod gradcheck;
pub mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the gradient of the operation's output and returns one
/// entry per input, in the order of [`Backward::inputs`]. Entries for inputs
/// that do not require gradients may be `None`.
pub trait Backward: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> &[Tensor];
    fn backward(&self, grad_output: &[f32]) -> Vec<Option<Vec<f32>>>;
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    grad: Mutex<Option<Vec<f32>>>,
    requires_grad: bool,
    retain_grad: AtomicBool,
    grad_fn: Option<Box<dyn Backward>>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.grad_fn.as_ref().map(|g| g.name()))
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn Backward>>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                retain_grad: AtomicBool::new(false),
                grad_fn,
            }),
        }
    }

    /// Creates a leaf tensor.
    pub fn leaf(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(Error::shape(format!("zero-sized dim in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor::build(shape, data, requires_grad, None))
    }

    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        Tensor::leaf(shape, data, false)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Tensor {
        let n = numel(&shape);
        Tensor::build(shape, vec![value; n], false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::build(vec![1], vec![value], false, None)
    }

    /// Result of an operation. The backward rule is kept only when gradient
    /// recording is enabled and some input requires gradients.
    pub fn from_op(shape: Vec<usize>, data: Vec<f32>, grad_fn: Box<dyn Backward>) -> Tensor {
        let track = grad_enabled() && grad_fn.inputs().iter().any(|t| t.requires_grad());
        if track {
            Tensor::build(shape, data, true, Some(grad_fn))
        } else {
            Tensor::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.grad_fn.as_ref().map(|g| g.name())
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Write access to the values. Intended for parameter updates and running
    /// statistics; shapes cannot change.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f32>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut data = self.data_mut();
        if data.len() != values.len() {
            return Err(Error::shape(format!(
                "cannot assign {} values to tensor of shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        let data = self.data();
        if data.len() != 1 {
            return Err(Error::usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(data[0])
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Keeps the gradient of a non-leaf tensor after [`Tensor::backward`].
    pub fn retain_grad(&self) {
        self.inner.retain_grad.store(true, Ordering::Relaxed);
    }

    /// New leaf holding a copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// New leaf holding a copy of the values with the given gradient flag.
    pub fn detach_with_grad(&self, requires_grad: bool) -> Tensor {
        Tensor::build(self.shape().to_vec(), self.to_vec(), requires_grad, None)
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into
    /// leaves that require them; repeated calls add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::usage(
                "backward root is not connected to any tensor requiring gradients",
            ));
        }
        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.inner.grad_fn {
                None => node.accumulate_grad(&g),
                Some(rule) => {
                    if node.inner.retain_grad.load(Ordering::Relaxed) {
                        node.accumulate_grad(&g);
                    }
                    let input_grads = rule.backward(&g);
                    debug_assert_eq!(input_grads.len(), rule.inputs().len());
                    for (input, ig) in rule.inputs().iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", rule.name());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients; every node appears once.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((node, child)) = stack.pop() {
            let inputs: &[Tensor] = match &node.inner.grad_fn {
                Some(rule) => rule.inputs(),
                None => &[],
            };
            if child < inputs.len() {
                let next = inputs[child].clone();
                stack.push((node, child + 1));
                if next.requires_grad() && visited.insert(next.id()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_validates_shape() {
        assert!(Tensor::leaf(vec![2, 3], vec![0.0; 5], false).is_err());
        let t = Tensor::leaf(vec![2, 3], vec![0.0; 6], true).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.is_leaf());
    }

    #[test]
    fn sum_backward_gives_ones() {
        let x = Tensor::leaf(vec![4], vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
        ops::sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::leaf(vec![3], vec![0.5, -1.0, 2.0], true).unwrap();
        let y = ops::sum(&ops::sigmoid(&x));
        y.backward().unwrap();
        let once = x.grad().unwrap();
        y.backward().unwrap();
        let twice = x.grad().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_root_is_usage_error() {
        let x = Tensor::leaf(vec![2], vec![1.0, 2.0], true).unwrap();
        let y = ops::relu(&x);
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn untracked_leaves_stay_untouched() {
        let x = Tensor::leaf(vec![2], vec![1.0, 2.0], true).unwrap();
        let c = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        ops::sum(&ops::mul(&x, &c).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 4.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn shared_input_visited_once_and_summed() {
        // y = sum(x + x) -> dy/dx = 2
        let x = Tensor::leaf(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        ops::sum(&ops::add(&x, &x).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::leaf(vec![2], vec![1.0, 2.0], true).unwrap();
        let y = no_grad(|| ops::relu(&x));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn retained_intermediate_gradient() {
        let x = Tensor::leaf(vec![2], vec![1.0, -1.0], true).unwrap();
        let h = ops::scale(&x, 3.0);
        h.retain_grad();
        ops::sum(&ops::relu(&h)).backward().unwrap();
        assert_eq!(h.grad().unwrap(), vec![1.0, 0.0]);
        assert_eq!(x.grad().unwrap(), vec![3.0, 0.0]);
    }
}
