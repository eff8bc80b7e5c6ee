use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{contract_err, dim_err, Result};
use crate::shape::{numel, Shape};
use crate::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording any operations on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a> {
    pub inputs: &'a [Tensor],
    pub output: &'a Tensor,
    /// Gradient of the root with respect to `output`, same layout as its data.
    pub grad: &'a [Real],
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

/// Maps the output gradient to one optional gradient per input. `None`
/// means "no contribution" and is allowed for inputs that do not require
/// gradients.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Result<Vec<Option<Vec<Real>>>> + Send + Sync>;

pub(crate) struct OpRecord {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub backward: BackwardFn,
}

pub(crate) struct Node {
    pub id: u64,
    pub data: Vec<Real>,
    pub shape: Shape,
    pub requires_grad: bool,
    pub grad: Mutex<Option<Vec<Real>>>,
    pub op: Option<OpRecord>,
}

impl Drop for Node {
    // Long op chains would otherwise drop recursively and can exhaust the stack.
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = match self.op.take() {
            Some(op) => op.inputs,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(op) = node.op.take() {
                    stack.extend(op.inputs);
                }
            }
        }
    }
}

/// A dense row-major tensor, cheap to clone (shared, immutable data).
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

impl Tensor {
    fn from_node(data: Vec<Real>, shape: Shape, requires_grad: bool, op: Option<OpRecord>) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data,
            shape,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    pub fn new(data: Vec<Real>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            ));
        }
        Ok(Self::from_node(data, shape.to_vec(), false, None))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<Real>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requires_grad_())
    }

    pub fn scalar(x: Real) -> Self {
        Self::from_node(vec![x], vec![], false, None)
    }

    pub fn full(shape: &[usize], x: Real) -> Self {
        Self::from_node(vec![x; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&x| x as Real).collect(), shape)
    }

    /// Fresh leaf with the same data that participates in gradient tracking.
    pub fn requires_grad_(self) -> Self {
        Self::from_node(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Fresh constant leaf with the same data, cut from any graph.
    pub fn detach(&self) -> Self {
        Self::from_node(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Builds the output of a custom differentiable operation. The backward
    /// closure is recorded only when some input requires gradients.
    pub fn from_op(
        name: &'static str,
        data: Vec<Real>,
        shape: &[usize],
        inputs: &[&Tensor],
        backward: BackwardFn,
    ) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(dim_err!(
                "{name}: shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            ));
        }
        let tracked = !NO_GRAD.with(|c| c.get()) && inputs.iter().any(|t| t.requires_grad());
        let op = tracked.then(|| OpRecord {
            name,
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward,
        });
        Ok(Self::from_node(data, shape.to_vec(), tracked, op))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<Real> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<Real> {
        if self.numel() != 1 {
            return Err(contract_err!(
                "item() on tensor of shape {:?}",
                self.shape()
            ));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<Real>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor> {
        self.grad()
            .map(|g| Tensor::new(g, self.shape()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[Real]) {
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|x| x.is_finite())
    }

    /// Bitwise equality of shape and data.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.numel().min(8);
        write!(
            f,
            "Tensor(shape={:?}, grad={}, data={:?}{})",
            self.shape(),
            self.requires_grad(),
            &self.data()[..n],
            if self.numel() > n { ", .." } else { "" }
        )
    }
}
