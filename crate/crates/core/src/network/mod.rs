//! Layers, forward propagation, the MSE loss and backpropagation.
//!
//! Weight matrices have one row per input unit and one column per output
//! unit. Convolutional filters are stored as `(C_in·H·W)×C_out` so that each
//! filter is a column and each input channel owns `H·W` consecutive rows.
//! There are no bias terms.

mod layers;
mod topology;

pub use layers::{
    activate, activation_backward, forward_conv, forward_fc, forward_maxpool, mse_loss,
    nchw_to_rows, rows_to_nchw, ConvOutput,
};
pub use topology::{Activation, LayerTopology, NetworkSpec, SampleShape};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{apply_input_mask, InputMask, MaskKind};
use crate::error::{Error, Result};
use crate::tensor::{fold_receptive_fields, matmul_nt, matmul_tn, Float, Matrix, Tensor};

/// Mutable state of one learnable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub weights: Matrix,
    /// Momentum accumulator, same shape as `weights`.
    pub velocity: Matrix,
    /// Inverse input autocorrelation, square over the weight rows. Only
    /// present when training with the RLS optimizer.
    pub p: Option<Matrix>,
}

impl LayerState {
    /// Uniform `(−1/√fan_in, 1/√fan_in)` weights; `fan_in` is the row count.
    pub fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng, p_scale: Option<Float>) -> Self {
        let bound = 1.0 / (rows as Float).sqrt();
        let dist = Uniform::new(-bound, bound);
        let weights = Matrix::from_fn(rows, cols, |_, _| dist.sample(rng));
        LayerState {
            weights,
            velocity: Matrix::zeros(rows, cols),
            p: p_scale.map(|s| Matrix::scaled_identity(rows, s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    /// Parallel to `spec.layers`; `None` for pooling layers.
    pub states: Vec<Option<LayerState>>,
    /// Original input features (fc input) or channels (conv input) still in use.
    pub input_mask: InputMask,
}

/// What a layer recorded during the forward pass.
#[derive(Debug, Clone)]
pub enum LayerTrace {
    Conv {
        input_shape: Vec<usize>,
        /// im2col input matrix `X` of the layer.
        patches: Matrix,
        /// Pre-activation `M×C×U×V`.
        z: Tensor,
    },
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Fc {
        x: Matrix,
        z: Matrix,
    },
}

impl LayerTrace {
    /// Input matrix `X` of a learnable layer (im2col rows for conv).
    pub fn input_matrix(&self) -> Option<&Matrix> {
        match self {
            LayerTrace::Conv { patches, .. } => Some(patches),
            LayerTrace::Fc { x, .. } => Some(x),
            LayerTrace::Pool { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Network output `Z_L` (the output layer is linear, so also `Y_L`).
    pub output: Matrix,
}

impl ForwardTrace {
    /// Activation output `Y` of layer `i`, as a batch-major matrix.
    pub fn activation_output(&self, network: &Network, i: usize) -> Option<Matrix> {
        let act = network.spec.layers.get(i)?.activation()?;
        let (rows, z) = match &self.layers[i] {
            LayerTrace::Fc { z, .. } => (z.rows(), z.data()),
            LayerTrace::Conv { z, .. } => (z.shape()[0], z.data()),
            LayerTrace::Pool { .. } => return None,
        };
        Matrix::new(rows, z.len() / rows, activate(z, act)).ok()
    }
}

/// `∂J/∂W = Xᵀ·Δ` kept in factored form; `delta` is `∂J/∂Z` laid out with
/// one row per row of `X`.
#[derive(Debug, Clone)]
pub struct GradientFactors {
    pub delta: Matrix,
}

impl GradientFactors {
    pub fn dense(&self, input: &Matrix) -> Result<Matrix> {
        matmul_tn(input, &self.delta)
    }
}

impl Network {
    /// Fresh network with seeded weights. `p_scale = Some(1/δ)` allocates
    /// `P₀ = δ⁻¹·I` for every learnable layer.
    pub fn new(spec: NetworkSpec, seed: u64, p_scale: Option<Float>) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let states = spec
            .layers
            .iter()
            .map(|l| {
                l.weight_shape()
                    .map(|(r, c)| LayerState::init(r, c, &mut rng, p_scale))
            })
            .collect();
        let input_mask = match (spec.input, &spec.layers[0]) {
            (SampleShape::Spatial { channels, .. }, LayerTopology::Conv { .. }) => {
                InputMask::full(MaskKind::Channels, channels)
            }
            (s, _) => InputMask::full(MaskKind::Features, s.len()),
        };
        Ok(Network {
            spec,
            states,
            input_mask,
        })
    }

    /// Checks that weights, velocities, P matrices, topology and mask agree.
    pub fn check_consistency(&self) -> Result<()> {
        self.spec.validate()?;
        if self.states.len() != self.spec.layers.len() {
            return Err(Error::State("state list does not match layer list".into()));
        }
        for (i, (layer, state)) in self.spec.layers.iter().zip(&self.states).enumerate() {
            match (layer.weight_shape(), state) {
                (None, None) => {}
                (Some(shape), Some(s)) => {
                    if s.weights.shape() != shape || s.velocity.shape() != shape {
                        return Err(Error::State(format!(
                            "layer {i}: weights {:?} / velocity {:?} vs topology {shape:?}",
                            s.weights.shape(),
                            s.velocity.shape()
                        )));
                    }
                    if let Some(p) = &s.p {
                        if p.shape() != (shape.0, shape.0) {
                            return Err(Error::State(format!(
                                "layer {i}: P is {:?}, expected {}x{}",
                                p.shape(),
                                shape.0,
                                shape.0
                            )));
                        }
                        if p.max_asymmetry() > 1e-8 {
                            return Err(Error::State(format!("layer {i}: P is not symmetric")));
                        }
                    }
                }
                _ => return Err(Error::State(format!("layer {i}: state/topology kind mismatch"))),
            }
        }
        let expected = match (self.input_mask.kind(), self.spec.input) {
            (MaskKind::Features, s) => s.len(),
            (MaskKind::Channels, SampleShape::Spatial { channels, .. }) => channels,
            (MaskKind::Channels, SampleShape::Flat(_)) => {
                return Err(Error::State("channel mask on a flat input".into()))
            }
        };
        if self.input_mask.len() != expected {
            return Err(Error::State(format!(
                "input mask retains {} entries but the input layer takes {expected}",
                self.input_mask.len()
            )));
        }
        Ok(())
    }

    /// Learnable layer states in order.
    pub fn learnable(&self) -> impl Iterator<Item = &LayerState> {
        self.states.iter().flatten()
    }

    pub fn num_learnable(&self) -> usize {
        self.states.iter().flatten().count()
    }

    pub fn weight_count(&self) -> usize {
        self.learnable().map(|s| s.weights.len()).sum()
    }

    /// Applies the persistent input mask to a batch in the original feature space.
    pub fn prepare_input(&self, batch: &Tensor) -> Result<Tensor> {
        if self.input_mask.is_full() {
            match self.input_mask.kind() {
                MaskKind::Features => {
                    let m = batch.shape()[0];
                    return Tensor::new(vec![m, batch.len() / m], batch.data().to_vec());
                }
                MaskKind::Channels => return Ok(batch.clone()),
            }
        }
        apply_input_mask(batch, &self.input_mask)
    }

    /// Forward pass over an already masked input, recording everything
    /// backpropagation needs.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        self.run(input, true)
    }

    /// Forward pass returning only the network output.
    pub fn predict(&self, input: &Tensor) -> Result<Matrix> {
        Ok(self.run(input, false)?.output)
    }

    fn run(&self, input: &Tensor, keep: bool) -> Result<ForwardTrace> {
        let m = input.shape()[0];
        let mut current = input.clone();
        let mut traces = Vec::with_capacity(if keep { self.spec.layers.len() } else { 0 });
        for (layer, state) in self.spec.layers.iter().zip(&self.states) {
            match (*layer, state) {
                (
                    LayerTopology::Conv {
                        kernel,
                        stride,
                        activation,
                        ..
                    },
                    Some(s),
                ) => {
                    if current.shape().len() != 4 {
                        return Err(Error::dim(format!(
                            "conv layer received a {:?} input",
                            current.shape()
                        )));
                    }
                    let input_shape = current.shape().to_vec();
                    let out = forward_conv(&current, &s.weights, kernel, stride, activation)?;
                    current = out.y;
                    if keep {
                        traces.push(LayerTrace::Conv {
                            input_shape,
                            patches: out.patches,
                            z: out.z,
                        });
                    }
                }
                (LayerTopology::MaxPool { window, stride }, None) => {
                    let input_shape = current.shape().to_vec();
                    let (out, argmax) = forward_maxpool(&current, window, stride)?;
                    current = out;
                    if keep {
                        traces.push(LayerTrace::Pool {
                            input_shape,
                            argmax,
                        });
                    }
                }
                (LayerTopology::Fc { activation, .. }, Some(s)) => {
                    let x = current.into_batch_matrix();
                    let (z, y) = forward_fc(&x, &s.weights, activation)?;
                    current = Tensor::from_matrix(y)?;
                    if keep {
                        traces.push(LayerTrace::Fc { x, z });
                    }
                }
                _ => return Err(Error::State("layer state does not match topology".into())),
            }
        }
        let output = current.into_batch_matrix();
        debug_assert_eq!(output.rows(), m);
        Ok(ForwardTrace {
            layers: traces,
            output,
        })
    }

    /// `∂J/∂Z` for every learnable layer of a completed trace, with
    /// `J = ‖Z_L − Y*‖²/(2M)`. Entries for pooling layers are `None`.
    pub fn backward_factors(
        &self,
        trace: &ForwardTrace,
        target: &Matrix,
    ) -> Result<Vec<Option<GradientFactors>>> {
        if trace.layers.len() != self.spec.layers.len() {
            return Err(Error::State(
                "backward needs a complete forward trace of this network".into(),
            ));
        }
        if trace.output.shape() != target.shape() {
            return Err(Error::dim(format!(
                "output {:?} vs target {:?}",
                trace.output.shape(),
                target.shape()
            )));
        }
        let m = target.rows() as Float;
        let mut grad_out: Vec<Float> = trace
            .output
            .data()
            .iter()
            .zip(target.data())
            .map(|(z, y)| (z - y) / m)
            .collect();
        let first_learnable = self.spec.learnable_positions()[0];
        let mut factors: Vec<Option<GradientFactors>> = vec![None; self.spec.layers.len()];

        for i in (0..self.spec.layers.len()).rev() {
            let layer = &self.spec.layers[i];
            let need_input_grad = i > first_learnable;
            match (&trace.layers[i], layer, &self.states[i]) {
                (LayerTrace::Fc { x, z }, LayerTopology::Fc { activation, .. }, Some(s)) => {
                    activation_backward(&mut grad_out, z.data(), *activation);
                    let delta = Matrix::new(z.rows(), z.cols(), std::mem::take(&mut grad_out))?;
                    if need_input_grad {
                        grad_out = matmul_nt(&delta, &s.weights)?.into_data();
                        debug_assert_eq!(grad_out.len(), x.len());
                    }
                    factors[i] = Some(GradientFactors { delta });
                }
                (
                    LayerTrace::Conv {
                        input_shape,
                        patches: _,
                        z,
                    },
                    LayerTopology::Conv {
                        kernel,
                        stride,
                        activation,
                        ..
                    },
                    Some(s),
                ) => {
                    activation_backward(&mut grad_out, z.data(), *activation);
                    let dz = Tensor::new(z.shape().to_vec(), std::mem::take(&mut grad_out))?;
                    let delta = nchw_to_rows(&dz)?;
                    if need_input_grad {
                        let dpatches = matmul_nt(&delta, &s.weights)?;
                        grad_out =
                            fold_receptive_fields(&dpatches, input_shape, *kernel, *stride)?
                                .into_data();
                    }
                    factors[i] = Some(GradientFactors { delta });
                }
                (LayerTrace::Pool { input_shape, argmax }, LayerTopology::MaxPool { .. }, None) => {
                    if need_input_grad {
                        let mut dx = vec![0.0; input_shape.iter().product()];
                        for (&src, &g) in argmax.iter().zip(&grad_out) {
                            dx[src] += g;
                        }
                        grad_out = dx;
                    }
                }
                _ => return Err(Error::State("trace does not match the network".into())),
            }
        }
        Ok(factors)
    }

    /// Dense weight gradients `∂J/∂W^l`, parallel to `spec.layers`.
    pub fn backward(&self, trace: &ForwardTrace, target: &Matrix) -> Result<Vec<Option<Matrix>>> {
        let factors = self.backward_factors(trace, target)?;
        factors
            .iter()
            .zip(&trace.layers)
            .map(|(f, t)| match (f, t.input_matrix()) {
                (Some(f), Some(x)) => f.dense(x).map(Some),
                _ => Ok(None),
            })
            .collect()
    }

    /// Loss of the network on one batch (input already masked).
    pub fn loss(&self, input: &Tensor, target: &Matrix) -> Result<Float> {
        mse_loss(&self.predict(input)?, target)
    }
}
