//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted n-dimensional array in
//! row-major order. Operations whose inputs require gradients record a
//! backward rule on the output; the recorded graph is the tape. Calling
//! [`Tensor::backward`] on a scalar walks the tape in reverse topological
//! order, visiting every node exactly once, deposits `d loss / d leaf` into
//! each gradient-tracking leaf and then releases the tape.
//!
//! Every operation checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of propagating them.

mod attention;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod nn;
mod shape_ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use nn::LAYER_NORM_EPS;
pub use attention::{merge_heads, multi_head_attention, multi_head_attention_output, scaled_dot_product_attention, split_heads, Attention};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Mutex<Option<Node>>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables tape recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        Tensor::build_shared(shape, Arc::new(data), requires_grad, node)
    }

    fn build_shared(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool, node: Option<Node>) -> Tensor {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: Mutex::new(node),
        }))
    }

    /// Constant tensor. Non-finite entries are allowed in constants (e.g. additive
    /// `-inf` masks); operations reject non-finite outputs.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("new", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "new",
                format!("shape {shape:?} needs {} elements, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// Gradient-tracking leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Ok(Tensor::new(shape, data)?.requires_grad_(true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![1], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Tensor::build(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    /// `n x n` identity.
    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::build(vec![n, n], data, false, None)
    }

    /// Fresh leaf sharing this tensor's values.
    pub fn detach(&self) -> Tensor {
        Tensor::build_shared(self.shape().to_vec(), self.0.data.clone(), false, None)
    }

    /// Untracked constant over already-shared storage.
    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor::build_shared(shape, data, false, None)
    }

    /// Fresh leaf with the same values and the given tracking flag.
    pub fn requires_grad_(self, flag: bool) -> Tensor {
        if self.requires_grad() == flag && self.is_leaf() {
            return self;
        }
        Tensor::build_shared(self.shape().to_vec(), self.0.data.clone(), flag, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.lock().expect("node lock").is_none()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.ndim());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(self.shape()).enumerate() {
            assert!(x < d, "index {x} out of range for axis {i} of extent {d}");
            off = off * d + x;
        }
        self.0.data[off]
    }

    /// Accumulated gradient, if any reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    /// Accumulated gradient, zeros if the leaf was disconnected from the loss.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Records an operation output. `backward` is only invoked when some parent
    /// tracks gradients and recording is enabled.
    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: FnOnce() -> BackwardFn,
    {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| Node {
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: backward(),
        });
        Ok(Tensor::build(shape, data, track, node))
    }

    /// Like [`Tensor::from_op`] for outputs that reuse the storage of `src`
    /// (already known to be finite).
    pub(crate) fn view_op<F>(src: &Tensor, shape: Vec<usize>, backward: F) -> Tensor
    where
        F: FnOnce() -> BackwardFn,
    {
        debug_assert_eq!(numel(&shape), src.numel());
        let track = grad_enabled() && src.requires_grad();
        let node = track.then(|| Node {
            parents: vec![src.clone()],
            backward: backward(),
        });
        Tensor::build_shared(shape, src.0.data.clone(), track, node)
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients accumulate into leaves (call [`Tensor::zero_grad`] to reset).
    /// The recorded graph is consumed, so a second sweep from the same loss
    /// reaches no leaves.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Backward("loss does not depend on any tracked tensor".into()));
        }
        let order = self.topological_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let g = grads.remove(&t.id());
            let node = t.0.node.lock().expect("node lock").take();
            match node {
                Some(node) => {
                    let Some(g) = g else { continue };
                    let pgrads = (node.backward)(&g);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(pgrads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    if let Some(g) = g {
                        let mut slot = t.0.grad.lock().expect("grad lock");
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracked ancestors of `self` (inclusive), parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            let parents: Vec<Tensor> = t
                .0
                .node
                .lock()
                .expect("node lock")
                .as_ref()
                .map(|n| n.parents.clone())
                .unwrap_or_default();
            stack.push((t, true));
            for p in parents.into_iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

/// Normalizes a possibly negative axis.
pub(crate) fn resolve_axis(op: &'static str, axis: isize, ndim: usize) -> Result<usize> {
    let a = if axis < 0 { axis + ndim as isize } else { axis };
    if a < 0 || a as usize >= ndim {
        return Err(Error::invalid(op, format!("axis {axis} out of range for {ndim} dims")));
    }
    Ok(a as usize)
}

/// `(outer, len, inner)` decomposition around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_square_gives_two_x() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = Tensor::param(&[4], vals.clone()).unwrap();
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        let expect: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(x.grad().unwrap(), expect);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0).unwrap();
        assert!(matches!(y.backward(), Err(Error::Backward(_))));
    }

    #[test]
    fn disconnected_leaf_has_zero_grad() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::param(&[3], vec![1.0; 3]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(unused.grad_or_zeros(), vec![0.0; 3]);
        assert!(unused.grad().is_none());
    }

    #[test]
    fn tape_is_cleared_after_backward() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        // the recorded rules are gone, so a second sweep deposits nothing new
        x.zero_grad();
        loss.backward().unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = x*x used twice: d/dx sum(y + y) = 4x
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.add(&y).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0, 12.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = {
            let _g = no_grad();
            x.scale(3.0).unwrap()
        };
        assert!(!y.requires_grad());
        let z = x.scale(3.0).unwrap();
        assert!(z.requires_grad());
    }

    #[test]
    fn op_output_must_be_finite() {
        let x = Tensor::new(&[2], vec![1e308, 1e308]).unwrap();
        assert!(matches!(x.add(&x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
    }
}
