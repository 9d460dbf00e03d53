use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::NodeId;

/// Dense row-major tensor.
///
/// The buffer is shared between clones. A tensor is *tracked* when it carries
/// a node id on some tape; untracked tensors are constants for autodiff.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Rc<Vec<S>>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<Vec<S>>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, Rc::new(vec![value; n]), None)
    }

    pub fn scalar(value: S) -> Self {
        Self::from_parts(vec![1], Rc::new(vec![value]), None)
    }

    /// Builds a tensor from `f64` values, rounding to the element type.
    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_rc(&self) -> &Rc<Vec<S>> {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Mutable access to the buffer. Copies if the buffer is shared.
    ///
    /// Only meaningful for untracked tensors such as stored parameters;
    /// the node id is cleared because the value no longer matches the tape.
    pub fn data_mut(&mut self) -> &mut Vec<S> {
        self.node = None;
        Rc::make_mut(&mut self.data)
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Size of the last axis; rows are everything before it.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel().checked_div(self.last_dim()).unwrap_or(0)
    }

    /// Value-identical untracked copy. Gradients never flow through it.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.shape.clone(), Rc::clone(&self.data), None)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the element type, going through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(
            self.shape.clone(),
            Rc::new(self.data.iter().map(|v| T::of(v.as_f64())).collect()),
            None,
        )
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<S> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { len: 5, .. }));
    }

    #[test]
    fn detach_shares_values_and_drops_node() {
        let t = Tensor::<f32>::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap();
        let d = t.detach();
        assert_eq!(d.data(), t.data());
        assert!(!d.requires_grad());
    }
}
