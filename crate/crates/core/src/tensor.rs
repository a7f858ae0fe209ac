use ndarray::{Array1, Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named dense tensor with a row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    name: String,
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let name = name.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "{name}: shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: shape {shape:?} needs {numel} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); n])
    }

    pub fn from_array2(name: impl Into<String>, a: ArrayView2<'_, T>) -> Self {
        let (r, c) = a.dim();
        Self {
            name: name.into(),
            shape: vec![r, c],
            data: a.iter().copied().collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same name and shape, new buffer.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::new(self.name.clone(), self.shape.clone(), data)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("tensor {:?} at index {i}", self.name))),
        }
    }

    pub fn is_congruent(&self, other: &Tensor<T>) -> bool {
        self.name == other.name && self.shape == other.shape
    }

    pub fn to_array2(&self) -> Result<Array2<T>> {
        match self.shape.as_slice() {
            &[r, c] => Ok(Array2::from_shape_vec((r, c), self.data.clone())
                .expect("shape checked at construction")),
            s => Err(Error::ShapeMismatch(format!(
                "{}: expected a matrix, got shape {s:?}",
                self.name
            ))),
        }
    }

    pub fn to_array1(&self) -> Array1<T> {
        Array1::from(self.data.clone())
    }

    /// Transpose of a 2-D tensor.
    pub fn transposed(&self) -> Result<Self> {
        let a = self.to_array2()?;
        Ok(Self::from_array2(self.name.clone(), a.t()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// SHA-256 over the shape and the `f64` widening of every element.
    ///
    /// The widening makes the fingerprint identical for an `f32` tensor and
    /// its `f64` cast.
    pub fn fingerprint(&self) -> String {
        content_fingerprint(&self.shape, &self.data)
    }
}

pub fn content_fingerprint<T: Scalar>(shape: &[usize], data: &[T]) -> String {
    let mut h = Sha256::new();
    h.update((shape.len() as u64).to_le_bytes());
    for &d in shape {
        h.update((d as u64).to_le_bytes());
    }
    for x in data {
        h.update(x.as_f64().to_le_bytes());
    }
    hex::encode(h.finalize())
}
