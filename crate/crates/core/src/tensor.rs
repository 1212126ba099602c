//! Row-major dense matrices and affine layers.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(output, input), bias: vec![T::zero(); output] }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Applies the layer to every row of `x`.
    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(x.cols(), self.input_dim());
        let out_dim = self.output_dim();
        let mut y = Matrix::zeros(x.rows(), out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for (o, y_o) in yr.iter_mut().enumerate() {
                let w = self.weight.row(o);
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(xr) {
                    acc += *wi * *xi;
                }
                *y_o = acc;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and, when given, the input
    /// gradient into `dx`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>, dx: Option<&mut Matrix<T>>) {
        debug_assert_eq!(x.rows(), dy.rows());
        let in_dim = self.input_dim();
        for r in 0..x.rows() {
            let xr = x.row(r);
            let dyr = dy.row(r);
            for (o, &g) in dyr.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                grad.bias[o] += g;
                let gw = &mut grad.weight.as_mut_slice()[o * in_dim..(o + 1) * in_dim];
                for (gwi, xi) in gw.iter_mut().zip(xr) {
                    *gwi += g * *xi;
                }
            }
        }
        if let Some(dx) = dx {
            for r in 0..x.rows() {
                let dyr = dy.row(r);
                let dxr = dx.row_mut(r);
                for (o, &g) in dyr.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let w = self.weight.row(o);
                    for (dxi, wi) in dxr.iter_mut().zip(w) {
                        *dxi += g * *wi;
                    }
                }
            }
        }
    }
}
