//! Dense row-major tensors.

use crate::error::{contract, ensure, Result};
use crate::scalar::Scalar;

/// Contiguous N-dimensional array. Images use the `[batch, channels, height, width]` layout.
///
/// Gradient bookkeeping lives on [`crate::autodiff::Graph`] nodes, not here.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        ensure!(
            shape.iter().all(|&d| d > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            "shape {shape:?} holds {numel} elements but {} were supplied",
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// First element; meaningful for scalar tensors.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Splits a rank-4 shape into `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(contract!("expected a rank-4 tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == self.data.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure!(
            self.shape == other.shape,
            "shape mismatch: {:?} vs {:?}",
            self.shape,
            other.shape
        );
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure!(
            self.shape == other.shape,
            "shape mismatch: {:?} vs {:?}",
            self.shape,
            other.shape
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(contract!(
                "{what} produced non-finite value {} at flat index {i}",
                self.data[i]
            )),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Concatenates equally-shaped tensors along a new leading axis, flattening
    /// a leading unit batch axis if present (`[1,C,H,W]` items give `[N,C,H,W]`).
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| contract!("cannot stack an empty list"))?;
        for t in items {
            ensure!(
                t.shape == first.shape,
                "stack shape mismatch: {:?} vs {:?}",
                t.shape,
                first.shape
            );
        }
        let mut shape = if first.shape.len() == 4 && first.shape[0] == 1 {
            first.shape[1..].to_vec()
        } else {
            first.shape.clone()
        };
        shape.insert(0, items.len());
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }

    /// Slice `index` of the leading axis, keeping it as a unit axis.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let n = self.shape[0];
        ensure!(index < n, "batch index {index} out of range for {n}");
        let per = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[index * per..(index + 1) * per].to_vec(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
