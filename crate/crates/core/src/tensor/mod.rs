//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable handle (`Arc`) to its data. Operations on
//! tensors that require gradients record a node with the parents and a
//! backward closure; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates gradients into tracked leaves.
//!
//! Backward closures never capture parent tensors directly. Parents are
//! handed to the closure at backward time, which keeps every edge of the
//! graph in one place and lets deep graphs be torn down iteratively.

mod autograd;
mod element;
mod gemm;
pub mod ops;

use std::fmt;
use std::sync::{Arc, Mutex};

pub use element::{DType, Float};
pub(crate) use gemm::{gemm, MatLayout};
pub use ops::conv::ConvSpec;

use crate::error::{shape_err, Error, Result};

/// Arguments handed to a backward closure.
pub(crate) struct BackwardCtx<'a, T: Float> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [T],
    /// Forward output of this node.
    pub output: &'a [T],
    pub parents: &'a [Tensor<T>],
    /// Whether each parent needs a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> =
    Box<dyn for<'a> Fn(&BackwardCtx<'a, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Float> {
    pub name: &'static str,
    pub parents: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
}

pub(crate) struct Inner<T: Float> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
    grad: Mutex<Option<Vec<T>>>,
}

impl<T: Float> Drop for Inner<T> {
    fn drop(&mut self) {
        // Unlink the graph iteratively; recursive drops overflow the stack on
        // long unrolled refinement loops.
        let mut stack = match self.grad_fn.take() {
            Some(f) => f.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.inner) {
                if let Some(f) = inner.grad_fn.take() {
                    stack.extend(f.parents);
                }
            }
        }
    }
}

/// An n-dimensional array of `f32` or `f64` values.
pub struct Tensor<T: Float = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.inner.requires_grad);
        if let Some(g) = &self.inner.grad_fn {
            s.field("op", &g.name);
        }
        if self.numel() <= 16 {
            s.field("data", &self.inner.data);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn leaf(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Self {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad_fn: None,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Builds a tensor from row-major data.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("new", format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(shape_err(
                "new",
                format!(
                    "shape {shape:?} holds {} values, got {}",
                    numel_of(shape),
                    data.len()
                ),
            ));
        }
        Ok(Self::leaf(Arc::new(data), shape.to_vec(), false))
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(Arc::new(vec![value; numel_of(shape)]), shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    /// Fills a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let data: Vec<T> = (0..numel_of(shape)).map(f).collect();
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    /// Records an op output. When no parent is tracked the backward closure
    /// is dropped and the result is a plain constant.
    pub(crate) fn from_op<F>(
        name: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: for<'a> Fn(&BackwardCtx<'a, T>) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        Self::from_op_shared(name, Arc::new(data), shape, parents, backward)
    }

    pub(crate) fn from_op_shared<F>(
        name: &'static str,
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: F,
    ) -> Self
    where
        F: for<'a> Fn(&BackwardCtx<'a, T>) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel_of(&shape), data.len());
        if !parents.iter().any(Tensor::requires_grad) {
            return Self::leaf(data, shape, false);
        }
        Self {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad: true,
                grad_fn: Some(GradFn {
                    name,
                    parents,
                    backward: Box::new(backward),
                }),
                grad: Mutex::new(None),
            }),
        }
    }

    /// Returns a tracked leaf sharing this tensor's data.
    pub fn requires_grad_(self) -> Self {
        Self::leaf(Arc::clone(&self.inner.data), self.inner.shape.clone(), true)
    }

    /// Returns an untracked tensor sharing this tensor's data.
    pub fn detach(&self) -> Self {
        Self::leaf(Arc::clone(&self.inner.data), self.inner.shape.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    /// Extent of axis `axis`; negative values count from the end.
    pub fn dim(&self, axis: isize) -> usize {
        self.inner.shape[self.axis(axis)]
    }

    pub(crate) fn axis(&self, axis: isize) -> usize {
        let n = self.ndim() as isize;
        let a = if axis < 0 { axis + n } else { axis };
        assert!((0..n).contains(&a), "axis {axis} out of range for rank {n}");
        a as usize
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(shape_err("item", format!("shape {:?} is not a scalar", self.shape())));
        }
        Ok(self.inner.data[0])
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.ndim(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(self.shape()) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape());
            flat = flat * d + i;
        }
        self.inner.data[flat]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Fails if any value is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Converts the data to another precision. Not differentiable.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect();
        Tensor::leaf(Arc::new(data), self.shape().to_vec(), false)
    }

    /// Node identity within the autodiff graph.
    pub(crate) fn key(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<T>> {
        self.inner.grad_fn.as_ref()
    }

    pub(crate) fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            None => *slot = Some(g),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape() == shape {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!("expected shape {shape:?}, got {:?}", self.shape()),
            ))
        }
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.ndim() == rank {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape()),
            ))
        }
    }
}
