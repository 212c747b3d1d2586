//! Recursive-least-squares optimisation.
//!
//! Each learnable layer keeps `P`, an estimate of the inverse autocorrelation
//! of its inputs. Per step the minibatch-mean input `x̄` drives a rank-one
//! Sherman–Morrison style update of `P`, and `P` preconditions a momentum
//! update of the weights:
//!
//! ```text
//! u = P x̄            h = λ + k x̄ᵀu
//! Ψ ← αΨ − (η/h) P ∇W     W ← W + Ψ
//! P ← P/λ − k/(λh) u uᵀ
//! ```
//!
//! The weight update uses `P` from before the step's `P` update.
//! [`classic_rls_step`] is the textbook single-output RLS filter; it shares
//! the same inverse update and serves as a reference.

use crate::error::{Error, Result};
use crate::network::LayerState;
use crate::tensor::{dot, matmul, matmul_nt, matvec, Float, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RlsHyperParams {
    /// Forgetting factor λ ∈ (0, 1].
    pub lambda: Float,
    /// Average scaling factor k > 0.
    pub k: Float,
    /// Momentum factor α ∈ [0, 1).
    pub alpha: Float,
    /// `P₀ = δ⁻¹·I`.
    pub delta: Float,
    /// Floor below which `h` is treated as singular.
    pub eps_h: Float,
}

impl Default for RlsHyperParams {
    fn default() -> Self {
        RlsHyperParams {
            lambda: 1.0,
            k: 0.1,
            alpha: 0.5,
            delta: 1.0,
            eps_h: 1e-8,
        }
    }
}

impl RlsHyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must be in (0, 1]");
        }
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1)");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.eps_h > 0.0) {
            return bad("eps_h must be positive");
        }
        Ok(())
    }
}

/// State of a single-output RLS filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicRlsState {
    pub w: Vec<Float>,
    pub p: Matrix,
}

impl ClassicRlsState {
    pub fn new(dim: usize, delta: Float) -> Self {
        ClassicRlsState {
            w: vec![0.0; dim],
            p: Matrix::scaled_identity(dim, 1.0 / delta),
        }
    }
}

/// One step of exponentially weighted RLS on the sample `(x, y*)`.
pub fn classic_rls_step(
    state: &mut ClassicRlsState,
    x: &[Float],
    y_star: Float,
    lambda: Float,
    eps_h: Float,
) -> Result<()> {
    let n = state.w.len();
    if x.len() != n || state.p.shape() != (n, n) {
        return Err(Error::dim(format!(
            "rls step: input of length {} for a filter of size {n}",
            x.len()
        )));
    }
    let u = matvec(&state.p, x)?;
    let denom = lambda + dot(&u, x);
    if denom <= eps_h {
        return Err(Error::Singularity {
            layer: 0,
            h: denom as f64,
            floor: eps_h as f64,
        });
    }
    let e = dot(&state.w, x) - y_star;
    for i in 0..n {
        let row = state.p.row_mut(i);
        for j in 0..n {
            row[j] = (row[j] - (u[i] * u[j]) / denom) / lambda;
        }
    }
    for (w, ui) in state.w.iter_mut().zip(&u) {
        *w -= ui / denom * e;
    }
    Ok(())
}

/// Mean of the rows of a layer's input matrix. For fc layers the rows are the
/// `M` samples; for conv layers they are the `M·U·V` receptive fields.
pub fn average_input(x: &Matrix) -> Result<Vec<Float>> {
    if x.rows() == 0 {
        return Err(Error::dim("average of an empty batch"));
    }
    Ok(x.column_means())
}

/// The `u`, `h` pair of one `P` update, computed from `P_{t−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PUpdate {
    pub u: Vec<Float>,
    pub h: Float,
}

impl PUpdate {
    pub fn compute(p: &Matrix, xbar: &[Float], lambda: Float, k: Float, eps_h: Float) -> Result<Self> {
        if p.rows() != p.cols() || p.rows() != xbar.len() {
            return Err(Error::dim(format!(
                "P is {:?} but the average input has {} entries",
                p.shape(),
                xbar.len()
            )));
        }
        let u = matvec(p, xbar)?;
        let h = lambda + k * dot(xbar, &u);
        if !(h > eps_h) {
            return Err(Error::Singularity {
                layer: 0,
                h: h as f64,
                floor: eps_h as f64,
            });
        }
        Ok(PUpdate { u, h })
    }

    /// `P ← P/λ − k/(λh)·u uᵀ`, evaluated so that symmetry is preserved exactly.
    pub fn apply(&self, p: &mut Matrix, lambda: Float, k: Float) {
        let c = k / (lambda * self.h);
        let inv_lambda = 1.0 / lambda;
        let n = self.u.len();
        for i in 0..n {
            let ui = self.u[i];
            let row = p.row_mut(i);
            for (j, r) in row.iter_mut().enumerate() {
                *r = *r * inv_lambda - c * (ui * self.u[j]);
            }
        }
        debug_assert_eq!(p.rows(), n);
    }
}

/// Returns `(P', h, u)` without touching the input matrix.
pub fn update_p(
    p: &Matrix,
    xbar: &[Float],
    lambda: Float,
    k: Float,
    eps_h: Float,
) -> Result<(Matrix, Float, Vec<Float>)> {
    let upd = PUpdate::compute(p, xbar, lambda, k, eps_h)?;
    let mut next = p.clone();
    upd.apply(&mut next, lambda, k);
    Ok((next, upd.h, upd.u))
}

/// `P·∇W` where `∇W = Xᵀ·Δ`, associated whichever way is cheaper:
/// `P·(XᵀΔ)` costs `n²·c`, `(P·Xᵀ)·Δ` costs `n²·r` (plus the shared `n·r·c`).
pub fn precondition(p: &Matrix, input: &Matrix, delta: &Matrix) -> Result<Matrix> {
    if input.rows() < delta.cols() {
        let px = matmul_nt(p, input)?;
        matmul(&px, delta)
    } else {
        let grad = crate::tensor::matmul_tn(input, delta)?;
        matmul(p, &grad)
    }
}

/// `Ψ ← αΨ − (η/h)·G`, `W ← W + Ψ` for an already preconditioned gradient `G = P∇`.
pub fn apply_preconditioned_step(
    state: &mut LayerState,
    preconditioned: &Matrix,
    h: Float,
    alpha: Float,
    eta: Float,
) -> Result<()> {
    if preconditioned.shape() != state.weights.shape() {
        return Err(Error::dim(format!(
            "update of shape {:?} for weights {:?}",
            preconditioned.shape(),
            state.weights.shape()
        )));
    }
    let step = eta / h;
    for ((v, w), g) in state
        .velocity
        .data_mut()
        .iter_mut()
        .zip(state.weights.data_mut())
        .zip(preconditioned.data())
    {
        *v = alpha * *v - step * g;
        *w += *v;
    }
    Ok(())
}

/// Momentum update preconditioned by the layer's current (pre-update) `P`.
pub fn update_weights(
    state: &mut LayerState,
    grad: &Matrix,
    h: Float,
    alpha: Float,
    eta: Float,
) -> Result<()> {
    let p = state
        .p
        .as_ref()
        .ok_or_else(|| Error::State("layer has no P matrix".into()))?;
    if grad.shape() != state.weights.shape() {
        return Err(Error::dim(format!(
            "gradient {:?} for weights {:?}",
            grad.shape(),
            state.weights.shape()
        )));
    }
    let pg = matmul(p, grad)?;
    apply_preconditioned_step(state, &pg, h, alpha, eta)
}
