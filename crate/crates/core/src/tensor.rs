//! Dense row-major tensors and their shapes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Ordered list of positive extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        TensorShape(dims.into())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn num_elements(&self) -> usize {
        self.0.iter().product()
    }

    /// Rank at least one and every extent at least one.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty() && self.0.iter().all(|&d| d >= 1)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Linear offset of an in-bounds index tuple.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.0.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    /// Inverse of [`TensorShape::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.0.len()];
        for i in (0..self.0.len()).rev() {
            index[i] = offset % self.0[i];
            offset /= self.0[i];
        }
        index
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<usize>> for TensorShape {
    fn from(v: Vec<usize>) -> Self {
        TensorShape(v)
    }
}

impl From<&[usize]> for TensorShape {
    fn from(v: &[usize]) -> Self {
        TensorShape(v.to_vec())
    }
}

/// Real-valued tensor stored row-major in f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data` does not match the element count of `shape`.
    pub fn new(shape: impl Into<TensorShape>, data: Vec<f64>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.num_elements(), data.len(), "tensor data length mismatch");
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<TensorShape>) -> Self {
        let shape = shape.into();
        let n = shape.num_elements();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.shape.offset(index).expect("index out of bounds")]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.shape.offset(index).expect("index out of bounds");
        self.data[off] = value;
    }
}
