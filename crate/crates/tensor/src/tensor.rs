use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autograd::Op;
use crate::{Real, Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node<F: Real> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<F>>,
    pub(crate) grad: RefCell<Option<Vec<F>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<F>,
}

/// A dense row-major array that participates in reverse-mode differentiation.
///
/// Cloning is cheap and aliases the same storage: a parameter shared between
/// two modules is one tensor, so an optimizer update is seen by both.
pub struct Tensor<F: Real = f64> {
    pub(crate) node: Rc<Node<F>>,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    fn build(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, op: Op<F>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Result of an operation; keeps the graph edge only when some input
    /// needs a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<F>, op: Op<F>) -> Self {
        if op.any_parent_requires_grad() {
            Self::build(shape, data, true, op)
        } else {
            Self::build(shape, data, false, Op::Leaf)
        }
    }

    fn checked(shape: &[usize], data: Vec<F>, requires_grad: bool) -> Result<Self> {
        let expected = numel_of(shape);
        if shape.contains(&0) || expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn full(shape: &[usize], value: F) -> Result<Self> {
        Self::new(shape, vec![value; numel_of(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, F::one())
    }

    pub fn scalar(value: F) -> Self {
        Self::build(vec![1], vec![value], false, Op::Leaf)
    }

    /// Same values, marked as a trainable leaf.
    pub fn into_parameter(self) -> Self {
        let data = self.to_vec();
        Self::build(self.node.shape.clone(), data, true, Op::Leaf)
    }

    /// Copy of the values cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.node.shape.clone(), self.to_vec(), false, Op::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.node.op, Op::Leaf)
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        self.node.data.borrow()[0]
    }

    pub fn at(&self, index: &[usize]) -> F {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.node.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range on axis {i}");
            flat = flat * dim + ix;
        }
        self.node.data.borrow()[flat]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite the values in place. Intended for optimizer updates and
    /// checkpoint loading; any graph built from the old values is stale.
    pub fn set_data(&self, data: Vec<F>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                shape: self.node.shape.clone(),
                expected: self.numel(),
                actual: data.len(),
            });
        }
        *self.node.data.borrow_mut() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [F])) {
        f(&mut self.node.data.borrow_mut());
    }

    /// Identity of the underlying storage.
    pub fn same_storage(&self, other: &Tensor<F>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.node.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: other.to_vec(),
            }),
        }
    }

    /// Accumulate `grad` into this tensor's gradient buffer.
    pub(crate) fn accumulate_grad(&self, grad: Vec<F>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => existing.iter_mut().zip(&grad).for_each(|(e, g)| *e += *g),
            None => *slot = Some(grad),
        }
    }

    /// Nodes that need a gradient and are reachable from `self`, in reverse
    /// creation order. Inputs are always created before their outputs, so
    /// this is a valid reverse topological order.
    pub(crate) fn reverse_topo(&self) -> Vec<Tensor<F>> {
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        let mut out = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            for p in t.node.op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            out.push(t);
        }
        out.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));
        out
    }
}
