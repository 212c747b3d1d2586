//! Dense row-major storage and the handful of primitives every layer is built on.
//!
//! [`Matrix`] is the two-dimensional workhorse used for weights, im2col patch
//! matrices and the inverse autocorrelation matrices. [`Tensor`] carries the
//! N-dimensional activations (`M×C×U×V` for convolutional feature maps).
//! Matrix products are delegated to `matrixmultiply`, which splits work only
//! over output blocks, so results are bitwise reproducible for a fixed build.

use std::fmt;

use crate::error::{Error, Result};

/// Element type. `f64` unless the crate is built with the `f32` feature.
#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Float>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Float>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[Float]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: Float) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = scale;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Float) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn column(data: Vec<Float>) -> Self {
        Matrix {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Float {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Float) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Float] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Float] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, s: Float) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Matrix, s: Float) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> Float {
        self.data.iter().map(|v| v * v).sum::<Float>().sqrt()
    }

    /// Largest `|A(i,j) - A(j,i)|`; zero for non-square input is meaningless, so it panics.
    pub fn max_asymmetry(&self) -> Float {
        assert_eq!(self.rows, self.cols, "asymmetry of a non-square matrix");
        let n = self.rows;
        let mut worst: Float = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Vec<Float> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn column_abs_sums(&self) -> Vec<Float> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v.abs();
            }
        }
        sums
    }

    pub fn column_means(&self) -> Vec<Float> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        let n = self.rows as Float;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(keep.len() * self.cols);
        for &i in keep {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: keep.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_cols(&self, keep: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(keep.len() * self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(keep.iter().map(|&j| row[j]));
        }
        Matrix {
            rows: self.rows,
            cols: keep.len(),
            data,
        }
    }

    /// Keeps the principal submatrix over `keep` (rows and columns).
    pub fn select_principal(&self, keep: &[usize]) -> Matrix {
        self.select_rows(keep).select_cols(keep)
    }
}

/// Indices in `0..n` that are not in `removed`.
pub fn complement(n: usize, removed: &[usize]) -> Vec<usize> {
    let mut gone = vec![false; n];
    for &i in removed {
        gone[i] = true;
    }
    (0..n).filter(|&i| !gone[i]).collect()
}

#[cfg(not(feature = "f32"))]
#[allow(clippy::too_many_arguments)]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Float,
    a: *const Float,
    rsa: isize,
    csa: isize,
    b: *const Float,
    rsb: isize,
    csb: isize,
    beta: Float,
    c: *mut Float,
    rsc: isize,
    csc: isize,
) {
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
}

#[cfg(feature = "f32")]
#[allow(clippy::too_many_arguments)]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Float,
    a: *const Float,
    rsa: isize,
    csa: isize,
    b: *const Float,
    rsb: isize,
    csb: isize,
    beta: Float,
    c: *mut Float,
    rsc: isize,
    csc: isize,
) {
    matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
}

/// `op(a) · op(b)` where `op` optionally transposes.
fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Result<Matrix> {
    let (m, ka) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if ka != kb {
        return Err(Error::dim(format!(
            "matmul inner extents differ: {m}x{ka} times {kb}x{n}"
        )));
    }
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || ka == 0 {
        return Ok(out);
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: extents and strides describe exactly the owned buffers above.
    unsafe {
        raw_gemm(
            m,
            ka,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// `A · B`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, false)
}

/// `Aᵀ · B`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, true, b, false)
}

/// `A · Bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, true)
}

pub fn matvec(a: &Matrix, x: &[Float]) -> Result<Vec<Float>> {
    if a.cols != x.len() {
        return Err(Error::dim(format!(
            "matvec: {}x{} matrix times vector of length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    Ok((0..a.rows)
        .map(|i| a.row(i).iter().zip(x).map(|(p, q)| p * q).sum())
        .collect())
}

pub fn dot(a: &[Float], b: &[Float]) -> Float {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Float>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor {:?}", self.shape)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Float>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::dim(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return Err(Error::dim(format!(
                    "index {index:?} out of bounds for {:?}",
                    self.shape
                )));
            }
            off = off * extent + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<Float> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Views the tensor as `shape[0] × (product of the rest)`.
    pub fn to_batch_matrix(&self) -> Matrix {
        let rows = self.shape[0];
        let cols = self.data.len() / rows;
        Matrix {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    pub fn into_batch_matrix(self) -> Matrix {
        let rows = self.shape[0];
        let cols = self.data.len() / rows;
        Matrix {
            rows,
            cols,
            data: self.data,
        }
    }

    pub fn from_matrix(m: Matrix) -> Result<Tensor> {
        Tensor::new(vec![m.rows, m.cols], m.data)
    }
}

/// Row-major linearisation into a column vector.
pub fn flatten(x: &Tensor) -> Matrix {
    Matrix::column(x.data.clone())
}

/// Output extent of a window sliding over `input` with `stride`, without padding.
pub fn window_output_extent(input: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 || window > input || (input - window) % stride != 0 {
        return Err(Error::dim(format!(
            "window {window} with stride {stride} does not tile extent {input}"
        )));
    }
    Ok((input - window) / stride + 1)
}

fn spatial_dims(input: &[usize]) -> Result<[usize; 4]> {
    match *input {
        [m, c, u, v] => Ok([m, c, u, v]),
        _ => Err(Error::dim(format!(
            "expected an M×C×U×V tensor, got shape {input:?}"
        ))),
    }
}

/// im2col: one row per `(m, u, v)` output position holding the `C×H×W`
/// receptive field flattened channel-major, then kernel row, then kernel column.
pub fn extract_receptive_fields(
    input: &Tensor,
    kernel: (usize, usize),
    stride: usize,
) -> Result<Matrix> {
    let [m, c, uin, vin] = spatial_dims(input.shape())?;
    let (kh, kw) = kernel;
    let uout = window_output_extent(uin, kh, stride)?;
    let vout = window_output_extent(vin, kw, stride)?;
    let cols = c * kh * kw;
    let mut out = Vec::with_capacity(m * uout * vout * cols);
    let x = input.data();
    for mi in 0..m {
        for u in 0..uout {
            for v in 0..vout {
                for ci in 0..c {
                    let plane = (mi * c + ci) * uin * vin;
                    for a in 0..kh {
                        let start = plane + (u * stride + a) * vin + v * stride;
                        out.extend_from_slice(&x[start..start + kw]);
                    }
                }
            }
        }
    }
    Matrix::new(m * uout * vout, cols, out)
}

/// Adjoint of [`extract_receptive_fields`]: scatters (accumulating) each patch
/// row back onto an `input_shape` tensor.
pub fn fold_receptive_fields(
    patches: &Matrix,
    input_shape: &[usize],
    kernel: (usize, usize),
    stride: usize,
) -> Result<Tensor> {
    let [m, c, uin, vin] = spatial_dims(input_shape)?;
    let (kh, kw) = kernel;
    let uout = window_output_extent(uin, kh, stride)?;
    let vout = window_output_extent(vin, kw, stride)?;
    if patches.rows() != m * uout * vout || patches.cols() != c * kh * kw {
        return Err(Error::dim(format!(
            "patch matrix {:?} does not match input {input_shape:?} with kernel {kh}x{kw}",
            patches.shape()
        )));
    }
    let mut out = vec![0.0; m * c * uin * vin];
    let mut row = 0;
    for mi in 0..m {
        for u in 0..uout {
            for v in 0..vout {
                let patch = patches.row(row);
                row += 1;
                let mut p = 0;
                for ci in 0..c {
                    let plane = (mi * c + ci) * uin * vin;
                    for a in 0..kh {
                        let start = plane + (u * stride + a) * vin + v * stride;
                        for (dst, src) in out[start..start + kw].iter_mut().zip(&patch[p..p + kw])
                        {
                            *dst += src;
                        }
                        p += kw;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}
