//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to an immutable value plus an
//! optional gradient accumulator. Operations on tensors that require
//! gradients record a backward closure and their parents; calling
//! [`Tensor::backward`] on a scalar walks that graph in reverse topological
//! order and accumulates `d loss / d leaf` into every leaf that requires
//! gradients. Intermediate gradients are dropped as soon as they have been
//! propagated.
//!
//! Leaf values may be overwritten in place (optimizer updates); everything
//! else is write-once.

mod linalg;
mod nn_ops;
mod ops;
mod spectral;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

pub use nn_ops::RunningStats;
pub use spectral::{dft_axis, dft_complex_axis, dft_matrices, idft_axis, idft_complex_axis, ComplexTensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Gradient of each parent, `None` where the parent takes no gradient.
pub(crate) type ParentGrads = Vec<Option<Vec<f64>>>;

type BackwardFn = dyn Fn(&[Tensor], &[f64], &[f64]) -> ParentGrads + Send + Sync;

struct GradFn {
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("values", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn variable(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::build(t.0.shape.clone(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Builds the result of an operation. The backward closure is kept only
    /// when recording is enabled and some parent takes gradients.
    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&[Tensor], &[f64], &[f64]) -> ParentGrads + Send + Sync + 'static,
    {
        debug_assert!(
            data.iter().all(|v| v.is_finite()) || parents.iter().any(|p| p.data().iter().any(|v| !v.is_finite())),
            "non-finite output from finite inputs"
        );
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::build(
                shape,
                data,
                true,
                Some(GradFn {
                    parents,
                    backward: Box::new(backward),
                }),
            )
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.read().len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.ndim());
        let mut flat = 0;
        for (i, (&ix, &n)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < n, "index {ix} out of range on axis {i}");
            flat = flat * n + ix;
        }
        self.data()[flat]
    }

    /// Same values, detached from any graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Overwrites a leaf's values in place.
    pub fn set_data(&self, values: Vec<f64>) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Contract("set_data on a non-leaf tensor".into()));
        }
        let mut d = self.0.data.write();
        if d.len() != values.len() {
            return Err(Error::shape("set_data", &[d.len()], &[values.len()]));
        }
        *d = values;
        Ok(())
    }

    /// In-place update of a leaf's values together with its gradient.
    pub fn update_with_grad(&self, f: impl FnOnce(&mut [f64], Option<&[f64]>)) {
        assert!(self.is_leaf(), "update_with_grad on a non-leaf tensor");
        let grad = self.0.grad.lock();
        let mut d = self.0.data.write();
        f(&mut d, grad.as_deref());
    }

    /// Back-propagates from a scalar, accumulating into every leaf that
    /// requires gradients. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut acc = node.0.grad.lock();
                    match acc.as_mut() {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *acc = Some(g),
                    }
                }
                Some(gf) => {
                    let parent_grads = {
                        let out = node.data();
                        (gf.backward)(&gf.parents, &out, &g)
                    };
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(a) => a.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through gradient-tracking edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
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
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
