//! Dense row-major f64 tensor. Matrix products go through ndarray so the
//! hot loops use its blocked kernels; everything else is plain slices.

use ndarray::{ArrayView2, ArrayViewMut2};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix ([r, c]) or a row vector ([c] -> 1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            d => panic!("rows() on {d}-d tensor"),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            d => panic!("cols() on {d}-d tensor"),
        }
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows(), self.cols()), &self.data).expect("contiguous")
    }

    fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = (self.rows(), self.cols());
        ArrayViewMut2::from_shape((r, c), &mut self.data).expect("contiguous")
    }

    /// self [n, k] x other [k, m] -> [n, m]
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols(), other.rows(), "matmul shape mismatch");
        let mut out = Tensor::zeros(&[self.rows(), other.cols()]);
        ndarray::linalg::general_mat_mul(1.0, &self.view2(), &other.view2(), 0.0, &mut out.view2_mut());
        out
    }

    /// self [n, k] x other^T where other is [m, k] -> [n, m]
    pub fn matmul_bt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols(), other.cols(), "matmul_bt shape mismatch");
        let mut out = Tensor::zeros(&[self.rows(), other.rows()]);
        ndarray::linalg::general_mat_mul(
            1.0,
            &self.view2(),
            &other.view2().reversed_axes(),
            0.0,
            &mut out.view2_mut(),
        );
        out
    }

    /// self^T x other where self is [k, n], other [k, m] -> [n, m].
    /// Accumulates into `out` with `out += self^T x other`.
    pub fn matmul_at_acc(&self, other: &Tensor, out: &mut Tensor) {
        assert_eq!(self.rows(), other.rows(), "matmul_at shape mismatch");
        assert_eq!(out.rows(), self.cols());
        assert_eq!(out.cols(), other.cols());
        ndarray::linalg::general_mat_mul(
            1.0,
            &self.view2().reversed_axes(),
            &other.view2(),
            1.0,
            &mut out.view2_mut(),
        );
    }

    /// out += self [n, k] x other [k, m]
    pub fn matmul_acc(&self, other: &Tensor, out: &mut Tensor) {
        ndarray::linalg::general_mat_mul(1.0, &self.view2(), &other.view2(), 1.0, &mut out.view2_mut());
    }

    /// out += self [n, k] x other^T, other [m, k]
    pub fn matmul_bt_acc(&self, other: &Tensor, out: &mut Tensor) {
        ndarray::linalg::general_mat_mul(
            1.0,
            &self.view2(),
            &other.view2().reversed_axes(),
            1.0,
            &mut out.view2_mut(),
        );
    }

    pub fn add_in_place(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
