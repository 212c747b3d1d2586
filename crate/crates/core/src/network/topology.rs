use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::window_output_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerTopology {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        activation: Activation,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Fc {
        in_nodes: usize,
        out_nodes: usize,
        activation: Activation,
    },
}

impl LayerTopology {
    pub fn is_learnable(&self) -> bool {
        !matches!(self, LayerTopology::MaxPool { .. })
    }

    /// `(rows, cols)` of the weight matrix; `None` for pooling.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerTopology::Conv {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                ..
            } => Some((in_channels * kh * kw, out_channels)),
            LayerTopology::Fc {
                in_nodes,
                out_nodes,
                ..
            } => Some((in_nodes, out_nodes)),
            LayerTopology::MaxPool { .. } => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerTopology::Conv { activation, .. } | LayerTopology::Fc { activation, .. } => {
                Some(activation)
            }
            LayerTopology::MaxPool { .. } => None,
        }
    }
}

/// Shape of one sample as it flows between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleShape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            SampleShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for SampleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SampleShape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            SampleShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Static architecture: the per-sample input shape and the layer sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: SampleShape,
    pub layers: Vec<LayerTopology>,
}

impl NetworkSpec {
    /// 784-1024-512-10 fully-connected network for 28×28 digits.
    pub fn fnn_mnist() -> Self {
        Self::fnn(&[784, 1024, 512, 10])
    }

    /// Fully-connected stack over a flat input: relu hidden layers, linear output.
    pub fn fnn(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an fnn needs at least input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerTopology::Fc {
                in_nodes: w[0],
                out_nodes: w[1],
                activation: if i == last {
                    Activation::Linear
                } else {
                    Activation::Relu
                },
            })
            .collect();
        NetworkSpec {
            input: SampleShape::Flat(widths[0]),
            layers,
        }
    }

    /// Mini-VGG for 3×32×32 images with valid 3×3 convolutions:
    /// conv64 conv64 pool conv128 conv128 pool conv256 pool fc1024 fc10.
    ///
    /// Without padding the maps shrink 32→30→28→14→12→10→5→3, so the last
    /// pool uses a 2×2 window with stride 1, leaving 256×2×2 features.
    pub fn minivgg() -> Self {
        fn conv(i: usize, o: usize) -> LayerTopology {
            LayerTopology::Conv {
                in_channels: i,
                out_channels: o,
                kernel: (3, 3),
                stride: 1,
                activation: Activation::Relu,
            }
        }
        NetworkSpec {
            input: SampleShape::Spatial {
                channels: 3,
                height: 32,
                width: 32,
            },
            layers: vec![
                conv(3, 64),
                conv(64, 64),
                LayerTopology::MaxPool {
                    window: 2,
                    stride: 2,
                },
                conv(64, 128),
                conv(128, 128),
                LayerTopology::MaxPool {
                    window: 2,
                    stride: 2,
                },
                conv(128, 256),
                LayerTopology::MaxPool {
                    window: 2,
                    stride: 1,
                },
                LayerTopology::Fc {
                    in_nodes: 256 * 2 * 2,
                    out_nodes: 1024,
                    activation: Activation::Relu,
                },
                LayerTopology::Fc {
                    in_nodes: 1024,
                    out_nodes: 10,
                    activation: Activation::Linear,
                },
            ],
        }
    }

    /// Checks that layers chain and the output layer is linear. Returns the
    /// per-sample output shape of every layer.
    pub fn validate(&self) -> Result<Vec<SampleShape>> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shape = self.input;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (
                    LayerTopology::Conv {
                        in_channels,
                        out_channels,
                        kernel: (kh, kw),
                        stride,
                        ..
                    },
                    SampleShape::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if channels != in_channels || out_channels == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv expects {in_channels} input channels, gets {channels}"
                        )));
                    }
                    SampleShape::Spatial {
                        channels: out_channels,
                        height: window_output_extent(height, kh, stride)?,
                        width: window_output_extent(width, kw, stride)?,
                    }
                }
                (
                    LayerTopology::MaxPool { window, stride },
                    SampleShape::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => SampleShape::Spatial {
                    channels,
                    height: window_output_extent(height, window, stride)?,
                    width: window_output_extent(width, window, stride)?,
                },
                (
                    LayerTopology::Fc {
                        in_nodes,
                        out_nodes,
                        ..
                    },
                    s,
                ) => {
                    if s.len() != in_nodes || out_nodes == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: fc expects {in_nodes} inputs, gets {}",
                            s.len()
                        )));
                    }
                    SampleShape::Flat(out_nodes)
                }
                (l, s) => {
                    return Err(Error::Config(format!(
                        "layer {i}: {l:?} cannot follow a {s} input"
                    )))
                }
            };
            shapes.push(shape);
        }
        match self.layers.last() {
            Some(LayerTopology::Fc {
                activation: Activation::Linear,
                ..
            }) => Ok(shapes),
            _ => Err(Error::Config(
                "the output layer must be fully-connected with linear activation".into(),
            )),
        }
    }

    /// Positions of the learnable (conv / fc) layers within `layers`.
    pub fn learnable_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_learnable())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerTopology::Fc { out_nodes, .. }) => *out_nodes,
            _ => 0,
        }
    }

    pub fn is_convolutional(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerTopology::Conv { .. }))
    }
}
