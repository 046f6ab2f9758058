use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::meter;
use crate::Scalar;

struct Storage<T> {
    buf: Vec<T>,
}

impl<T> Storage<T> {
    fn new(buf: Vec<T>) -> Self {
        meter::acquire(buf.len() * std::mem::size_of::<T>());
        Storage { buf }
    }
}

impl<T: Clone> Clone for Storage<T> {
    fn clone(&self) -> Self {
        Storage::new(self.buf.clone())
    }
}

impl<T> Drop for Storage<T> {
    fn drop(&mut self) {
        meter::release(self.buf.len() * std::mem::size_of::<T>());
    }
}

/// Dense row-major array with shared, copy-on-write storage.
#[derive(Clone)]
pub struct NdArray<T> {
    shape: Vec<usize>,
    data: Arc<Storage<T>>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for NdArray<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NdArray")
            .field("shape", &self.shape)
            .field("data", &self.data.buf)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> NdArray<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(invalid(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self::new_unchecked(shape.to_vec(), data))
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        NdArray {
            shape,
            data: Arc::new(Storage::new(data)),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new_unchecked(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn scalar(v: T) -> Self {
        Self::new_unchecked(Vec::new(), vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.buf.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data.buf
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut Arc::make_mut(&mut self.data).buf
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.buf.clone()
    }

    /// Value of a single-element array.
    pub fn item(&self) -> T {
        self.data.buf[0]
    }

    /// Same storage viewed under a different shape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(crate::error::shape_err("reshape", &self.shape, shape));
        }
        Ok(NdArray {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::new_unchecked(self.shape.clone(), self.data().iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> NdArray<U> {
        NdArray::new_unchecked(
            self.shape.clone(),
            self.data().iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
