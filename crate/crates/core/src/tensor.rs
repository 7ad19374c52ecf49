//! Dense rank-N tensors.
//!
//! Row-major storage, immutable once built (graph ops produce new tensors).
//! An element-allocation counter feeds the memory assertions of the linear
//! attention test suite.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;

static ALLOCATED_ELEMS: AtomicU64 = AtomicU64::new(0);

/// Total number of tensor elements allocated since process start (or the last
/// delta baseline the caller recorded). Monotone; callers diff two readings.
pub fn allocated_elems() -> u64 {
    ALLOCATED_ELEMS.load(Ordering::Relaxed)
}

fn count_alloc(n: usize) {
    ALLOCATED_ELEMS.fetch_add(n as u64, Ordering::Relaxed);
}

/// Dense tensor: ordered positive dimensions plus a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
}

impl<E: Real> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        count_alloc(data.len());
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        count_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::ZERO; n],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let n: usize = shape.iter().product();
        count_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: E) -> Self {
        count_alloc(1);
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let n: usize = shape.iter().product();
        count_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn elems(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        count_alloc(self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// Cast between precisions through f64.
    pub fn cast<F: Real>(&self) -> Tensor<F> {
        count_alloc(self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// In-place elementwise add; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    /// Euclidean distance between two equal-shape tensors viewed as vectors.
    pub fn euclidean_distance(&self, other: &Tensor<E>) -> Result<E> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "distance shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut acc = E::ZERO;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = *a - *b;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }
}

/// Debug-build guard: forward ops must not manufacture NaN/Inf from finite
/// inputs. Compiled out of release builds.
#[inline]
pub fn debug_check_finite<E: Real>(t: &Tensor<E>, op: &str) {
    debug_assert!(t.all_finite(), "non-finite forward output in {op}");
    let _ = (t, op);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_enforced() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let ok = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(ok.elems(), 6);
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::<f64>::scalar(4.0);
        assert_eq!(s.shape(), &[] as &[usize]);
        assert!(s.is_scalar());
        assert_eq!(s.item().unwrap(), 4.0);
    }

    #[test]
    fn allocation_counter_advances() {
        let before = allocated_elems();
        let _t = Tensor::<f32>::zeros(&[10, 10]);
        assert!(allocated_elems() - before >= 100);
    }

    #[test]
    fn cast_round_trips_values() {
        let t = Tensor::<f32>::new(vec![2], vec![1.5, -2.25]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[1.5, -2.25]);
    }
}
