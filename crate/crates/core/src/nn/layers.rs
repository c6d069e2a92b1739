//! Declarative layer descriptions. One [`LayerSpec`] corresponds to one row
//! of a typical architecture table: an optional preceding batch norm, the
//! layer itself, then an activation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding that keeps `ceil(len / stride)` outputs.
    #[default]
    Same,
    /// Same output size, but the signal wraps around.
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    /// Adjoint of a same-padded `Conv2d` that maps `output_size` to the input size.
    ConvTranspose2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        output_size: [usize; 2],
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    ConvTranspose1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        output_len: usize,
        #[serde(default)]
        padding: Padding,
    },
    /// Window and stride both equal `size`.
    MaxPool2d {
        size: usize,
    },
    AvgPool2d {
        size: usize,
    },
    Flatten,
    /// Per-item target shape.
    Reshape {
        shape: Vec<usize>,
    },
    /// Multiplies by a constant.
    Scale {
        factor: f32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub activation: Activation,
    /// Batch normalization applied to the layer input.
    #[serde(default)]
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            activation: Activation::None,
            batch_norm: false,
        }
    }

    pub fn dense(units: usize) -> Self {
        Self::new(LayerKind::Dense { units })
    }

    pub fn conv2d(filters: usize, kernel: usize, stride: usize) -> Self {
        Self::new(LayerKind::Conv2d {
            filters,
            kernel,
            stride,
            padding: Padding::Same,
        })
    }

    pub fn conv_transpose2d(filters: usize, kernel: usize, stride: usize, output_size: [usize; 2]) -> Self {
        Self::new(LayerKind::ConvTranspose2d {
            filters,
            kernel,
            stride,
            output_size,
        })
    }

    pub fn conv1d(filters: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self::new(LayerKind::Conv1d {
            filters,
            kernel,
            stride,
            padding,
        })
    }

    pub fn conv_transpose1d(filters: usize, kernel: usize, stride: usize, output_len: usize, padding: Padding) -> Self {
        Self::new(LayerKind::ConvTranspose1d {
            filters,
            kernel,
            stride,
            output_len,
            padding,
        })
    }

    pub fn max_pool2d(size: usize) -> Self {
        Self::new(LayerKind::MaxPool2d { size })
    }

    pub fn avg_pool2d(size: usize) -> Self {
        Self::new(LayerKind::AvgPool2d { size })
    }

    pub fn flatten() -> Self {
        Self::new(LayerKind::Flatten)
    }

    pub fn reshape(shape: &[usize]) -> Self {
        Self::new(LayerKind::Reshape { shape: shape.to_vec() })
    }

    pub fn scale(factor: f32) -> Self {
        Self::new(LayerKind::Scale { factor })
    }

    pub fn relu(mut self) -> Self {
        self.activation = Activation::Relu;
        self
    }

    pub fn tanh(mut self) -> Self {
        self.activation = Activation::Tanh;
        self
    }

    pub fn bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn activation_only(activation: Activation) -> Self {
        Self {
            kind: LayerKind::Scale { factor: 1.0 },
            activation,
            batch_norm: false,
        }
    }
}
