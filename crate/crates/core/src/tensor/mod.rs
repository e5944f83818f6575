//! Dense row-major tensors and a tape-based reverse-mode autodiff graph.
//!
//! The engine carries exactly the operations an encoder-only transformer
//! needs. It is generic over [`Float`] so training can run in `f32` while
//! gradient checks run in `f64`.

mod gradcheck;
mod graph;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use thiserror::Error;

pub use gradcheck::{gradient_check, gradient_check_many, gradient_check_sampled, relative_error};
pub use graph::{Graph, Var};
pub(crate) use graph::nll;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("buffer of {len} values does not fit shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for {op} (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
}

/// Scalar types the engine computes in.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    /// `c = a·b + beta·c` for an `m×k` by `k×n` product with arbitrary
    /// element strides (row stride, column stride) on every operand.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a.len() >= span(m, k, a_strides), "gemm: lhs buffer too small");
                assert!(b.len() >= span(k, n, b_strides), "gemm: rhs buffer too small");
                assert!(c.len() >= span(m, n, c_strides), "gemm: output buffer too small");
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0 && b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                // SAFETY: every operand was checked above to cover the full
                // strided extent addressed by an m×k, k×n and m×n access.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), a_strides.0, a_strides.1, b.as_ptr(), b_strides.0,
                        b_strides.1, beta, c.as_mut_ptr(), c_strides.0, c_strides.1,
                    );
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

/// A dense row-major buffer with a shape. Gradient bookkeeping lives in
/// [`Graph`]; a `Tensor` is plain data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadBuffer { shape: shape.to_vec(), len: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    /// Builds from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, values.iter().map(|&v| T::lit(v)).collect())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from(*v).expect("finite cast")).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_must_match_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::<f32>::scalar(3.0).len(), 1);
        assert!(Tensor::<f64>::zeros(&[0, 4]).is_empty());
    }

    #[test]
    fn strided_gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]; aᵀ·b = [[26,30],[38,44]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn strides() {
        assert_eq!(row_major_strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(row_major_strides(&[]), Vec::<usize>::new());
    }
}
