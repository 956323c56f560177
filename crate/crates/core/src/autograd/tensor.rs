use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense row-major `f32` array.
///
/// The value buffer is shared (`Arc`) so that registering a tensor on a
/// [`Tape`](super::Tape) does not copy it. The optional gradient buffer is
/// owned and present iff the tensor requires a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    grad: Option<Vec<f32>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            grad: None,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
            grad: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Vec::new(), value)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Tensor {
            shape,
            data: Arc::new(data),
            grad: None,
        }
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<f32>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<f32>> {
        &self.data
    }

    /// Mutable access to the values. Clones the buffer if it is currently
    /// shared with a live tape.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<f32> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::invalid(format!(
                "item() needs a one-element tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        match (on, self.grad.is_some()) {
            (true, false) => self.grad = Some(vec![0.0; self.data.len()]),
            (false, true) => self.grad = None,
            _ => {}
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    /// Simultaneous access to values and gradient, used by optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f32], Option<&mut [f32]>) {
        let data = Arc::make_mut(&mut self.data).as_mut_slice();
        (data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer, enabling it if needed.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[delta.len()]));
        }
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in g.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Same values under a new shape, without gradient.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor::from_arc(shape, Arc::clone(&self.data)))
    }

    /// Value-only copy that shares the buffer and drops the gradient.
    pub fn detach(&self) -> Tensor {
        Tensor::from_arc(self.shape.clone(), Arc::clone(&self.data))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        if len == 0 {
            return Err(Error::invalid(format!(
                "reduction over empty axis {axis} of shape {:?}",
                self.shape
            )));
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        Ok((outer, len, inner))
    }

    fn reduced_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        s.remove(axis);
        s
    }

    /// Maximum along `axis` (forward only).
    pub fn max(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.axis_split(axis)?;
        let mut out = vec![f32::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &self.data[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    if v > *dst {
                        *dst = v;
                    }
                }
            }
        }
        Tensor::new(self.reduced_shape(axis), out)
    }

    /// Index of the maximum along `axis`, first occurrence on ties
    /// (forward only). Indices are laid out row-major over the remaining axes.
    pub fn argmax(&self, axis: usize) -> Result<Vec<usize>> {
        let (outer, len, inner) = self.axis_split(axis)?;
        let mut best = vec![f32::NEG_INFINITY; outer * inner];
        let mut idx = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &self.data[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (j, &v) in row.iter().enumerate() {
                    let slot = o * inner + j;
                    if k == 0 || v > best[slot] {
                        best[slot] = v;
                        idx[slot] = k;
                    }
                }
            }
        }
        Ok(idx)
    }
}
