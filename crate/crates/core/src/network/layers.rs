//! Stateless layer kernels.

use super::topology::Activation;
use crate::error::{Error, Result};
use crate::tensor::{extract_receptive_fields, matmul, window_output_extent, Float, Matrix, Tensor};

pub fn activate(z: &[Float], act: Activation) -> Vec<Float> {
    match act {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Linear => z.to_vec(),
    }
}

/// Multiplies `grad` in place by f'(z); relu'(0) is 0.
pub fn activation_backward(grad: &mut [Float], z: &[Float], act: Activation) {
    if act == Activation::Relu {
        for (g, &zv) in grad.iter_mut().zip(z) {
            if zv <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

/// `Z = X·W`, `Y = f(Z)`.
pub fn forward_fc(x: &Matrix, w: &Matrix, act: Activation) -> Result<(Matrix, Matrix)> {
    let z = matmul(x, w)?;
    let y = Matrix::new(z.rows(), z.cols(), activate(z.data(), act))?;
    Ok((z, y))
}

pub struct ConvOutput {
    /// Pre-activation, `M×C×U×V`.
    pub z: Tensor,
    /// Activation output, `M×C×U×V`.
    pub y: Tensor,
    /// im2col patch matrix, `(M·U·V)×(C_in·H·W)`.
    pub patches: Matrix,
}

/// Reorders `(M·U·V)×C` rows into an `M×C×U×V` tensor.
pub fn rows_to_nchw(rows: &Matrix, m: usize, u: usize, v: usize) -> Result<Tensor> {
    let c = rows.cols();
    if rows.rows() != m * u * v {
        return Err(Error::dim(format!(
            "{} rows cannot be laid out as {m}x{u}x{v}",
            rows.rows()
        )));
    }
    let plane = u * v;
    let mut out = vec![0.0; m * c * plane];
    for mi in 0..m {
        for p in 0..plane {
            let src = rows.row(mi * plane + p);
            for (ci, &val) in src.iter().enumerate() {
                out[(mi * c + ci) * plane + p] = val;
            }
        }
    }
    Tensor::new(vec![m, c, u, v], out)
}

/// Inverse of [`rows_to_nchw`].
pub fn nchw_to_rows(t: &Tensor) -> Result<Matrix> {
    let [m, c, u, v] = match *t.shape() {
        [m, c, u, v] => [m, c, u, v],
        _ => return Err(Error::dim(format!("expected 4-d tensor, got {:?}", t.shape()))),
    };
    let plane = u * v;
    let src = t.data();
    let mut out = vec![0.0; m * c * plane];
    for mi in 0..m {
        for ci in 0..c {
            let base = (mi * c + ci) * plane;
            for p in 0..plane {
                out[(mi * plane + p) * c + ci] = src[base + p];
            }
        }
    }
    Matrix::new(m * plane, c, out)
}

/// Valid convolution through im2col: every output position is its
/// receptive-field row times the filter matrix.
pub fn forward_conv(
    input: &Tensor,
    w: &Matrix,
    kernel: (usize, usize),
    stride: usize,
    act: Activation,
) -> Result<ConvOutput> {
    let patches = extract_receptive_fields(input, kernel, stride)?;
    if patches.cols() != w.rows() {
        return Err(Error::dim(format!(
            "conv filter matrix has {} rows but patches have {} columns",
            w.rows(),
            patches.cols()
        )));
    }
    let (m, u, v) = (
        input.shape()[0],
        window_output_extent(input.shape()[2], kernel.0, stride)?,
        window_output_extent(input.shape()[3], kernel.1, stride)?,
    );
    let z_rows = matmul(&patches, w)?;
    let z = rows_to_nchw(&z_rows, m, u, v)?;
    let y = Tensor::new(z.shape().to_vec(), activate(z.data(), act))?;
    Ok(ConvOutput { z, y, patches })
}

/// Per-window maximum. Returns the pooled tensor and, for every output
/// element, the flat input offset it came from (first maximum wins).
pub fn forward_maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [m, c, u, v] = match *input.shape() {
        [m, c, u, v] => [m, c, u, v],
        _ => {
            return Err(Error::dim(format!(
                "maxpool expects M×C×U×V, got {:?}",
                input.shape()
            )))
        }
    };
    let uo = window_output_extent(u, window, stride)?;
    let vo = window_output_extent(v, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(m * c * uo * vo);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..m * c {
        let base = plane * u * v;
        for a in 0..uo {
            for b in 0..vo {
                let mut best_idx = base + a * stride * v + b * stride;
                let mut best = x[best_idx];
                for p in 0..window {
                    for q in 0..window {
                        let idx = base + (a * stride + p) * v + b * stride + q;
                        // flat index increases in this scan, so strict > keeps the smallest on ties
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![m, c, uo, vo], out)?, argmax))
}

/// `J = ‖Z − Y*‖²_F / (2M)`
pub fn mse_loss(z: &Matrix, target: &Matrix) -> Result<Float> {
    if z.shape() != target.shape() {
        return Err(Error::dim(format!(
            "loss: output {:?} vs target {:?}",
            z.shape(),
            target.shape()
        )));
    }
    let sq: Float = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / (2.0 * z.rows() as Float))
}
