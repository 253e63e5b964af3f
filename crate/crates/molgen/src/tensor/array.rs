//! Dense row-major arrays generic over the scalar type.

use serde::{Deserialize, Serialize};

use super::{Scalar, TensorError};

/// Contiguous row-major array. Most values in the pipeline are rank-2
/// matrices; scalars are single-element arrays of any rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NDArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> NDArray<T> {
    /// Array of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        NDArray {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    /// Array filled with a constant.
    pub fn full(shape: &[usize], value: T) -> Self {
        NDArray {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Wrap existing data; length must equal the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} does not hold {} elements", shape, data.len()),
            });
        }
        Ok(NDArray { shape: shape.to_vec(), data })
    }

    /// Single-element array.
    pub fn scalar(value: T) -> Self {
        NDArray { shape: vec![1], data: vec![value] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True iff the array holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The sole element of a single-element array.
    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a rank-2 array.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 array.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.shape[1] + c]
    }

    /// One row of a rank-2 array as a slice.
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Elementwise map into a new array of the same shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        NDArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Matrix transpose (rank 2).
    pub fn transposed(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = NDArray::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }
}

/// Plain matrix product of rank-2 arrays (used by both the forward pass
/// and the backward pass).
pub fn matmul<T: Scalar>(a: &NDArray<T>, b: &NDArray<T>) -> Result<NDArray<T>, TensorError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = NDArray::zeros(&[n, m]);
    for i in 0..n {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_enforced() {
        assert!(NDArray::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(NDArray::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let eye = NDArray::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = NDArray::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(matmul(&eye, &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_example() {
        let a = NDArray::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = NDArray::from_vec(&[2, 1], vec![5., 6.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = NDArray::<f64>::zeros(&[2, 3]);
        let b = NDArray::<f64>::zeros(&[2, 3]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = NDArray::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(a.transposed().transposed(), a);
        assert_eq!(a.transposed().at(2, 1), 6.0);
    }

    #[test]
    fn generic_over_f32() {
        let a = NDArray::<f32>::full(&[2, 2], 2.0);
        let b = matmul(&a, &a).unwrap();
        assert_eq!(b.data(), &[8.0f32; 4]);
    }
}
