//! Layer vocabulary and parameter initialisation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply_inplace<T: Scalar>(self, data: &mut [T]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => {
                for v in data {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for v in data {
                    *v = T::one() / (T::one() + (-*v).exp());
                }
            }
        }
    }

    /// Derivative expressed through the activation output.
    pub fn derivative_from_output<T: Scalar>(self, out: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => out * (T::one() - out),
        }
    }
}

/// Time-domain convolution settings.
///
/// Weights are stored as `[out_maps, kernel_rows * in_maps, kernel_len]`.
/// Time padding is "same"; a 2-row kernel is valid across the ear axis and
/// collapses 2 input rows to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_rows: usize,
    pub kernel_len: usize,
    pub in_maps: usize,
    pub out_maps: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub enum LayerKind<T> {
    Conv(ConvSpec),
    MaxPool { width: usize },
    PeakNorm,
    /// Apply one independent layer stack per input feature map, then flatten
    /// and concatenate every stack's output.
    BandSplit { stacks: Vec<Vec<Layer<T>>> },
    Flatten,
    Dense { inputs: usize, outputs: usize, activation: Activation },
    Dropout { rate: f64 },
    Softmax,
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub kind: LayerKind<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub trainable: bool,
    /// Gradient slot indices assigned by the owning graph.
    pub(crate) w_slot: usize,
    pub(crate) b_slot: usize,
}

pub(crate) const NO_SLOT: usize = usize::MAX;

fn glorot_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.random_range(-limit..limit));
    }
    t
}

impl<T: Scalar> Layer<T> {
    /// Trainable convolution with Glorot-uniform weights and zero bias.
    pub fn conv(spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let receptive = spec.kernel_rows * spec.kernel_len;
        let weights = glorot_uniform(
            &[spec.out_maps, spec.kernel_rows * spec.in_maps, spec.kernel_len],
            spec.in_maps * receptive,
            spec.out_maps * receptive,
            rng,
        );
        Layer {
            kind: LayerKind::Conv(spec),
            weights,
            bias: Tensor::zeros(&[spec.out_maps]),
            trainable: true,
            w_slot: NO_SLOT,
            b_slot: NO_SLOT,
        }
    }

    /// Trainable convolution starting from the given kernels, zero bias.
    pub fn conv_init(spec: ConvSpec, weights: Tensor<T>) -> Result<Self> {
        let mut layer = Self::conv_fixed(spec, weights)?;
        layer.trainable = true;
        Ok(layer)
    }

    /// Convolution with fixed, non-trainable kernels (no bias).
    pub fn conv_fixed(spec: ConvSpec, weights: Tensor<T>) -> Result<Self> {
        let expect = [spec.out_maps, spec.kernel_rows * spec.in_maps, spec.kernel_len];
        if weights.shape() != expect {
            return Err(Error::ShapeMismatch {
                expected: format!("{expect:?}"),
                actual: format!("{:?}", weights.shape()),
                context: "fixed conv kernel".into(),
            });
        }
        Ok(Layer {
            kind: LayerKind::Conv(spec),
            weights,
            bias: Tensor::zeros(&[spec.out_maps]),
            trainable: false,
            w_slot: NO_SLOT,
            b_slot: NO_SLOT,
        })
    }

    pub fn dense(inputs: usize, outputs: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Layer {
            kind: LayerKind::Dense { inputs, outputs, activation },
            weights: glorot_uniform(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            trainable: true,
            w_slot: NO_SLOT,
            b_slot: NO_SLOT,
        }
    }

    pub fn max_pool(width: usize) -> Self {
        Self::paramless(LayerKind::MaxPool { width })
    }

    pub fn peak_norm() -> Self {
        Self::paramless(LayerKind::PeakNorm)
    }

    pub fn band_split(stacks: Vec<Vec<Layer<T>>>) -> Self {
        Self::paramless(LayerKind::BandSplit { stacks })
    }

    pub fn flatten() -> Self {
        Self::paramless(LayerKind::Flatten)
    }

    pub fn dropout(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        Ok(Self::paramless(LayerKind::Dropout { rate }))
    }

    pub fn softmax() -> Self {
        Self::paramless(LayerKind::Softmax)
    }

    fn paramless(kind: LayerKind<T>) -> Self {
        Layer {
            kind,
            weights: Tensor::empty(),
            bias: Tensor::empty(),
            trainable: false,
            w_slot: NO_SLOT,
            b_slot: NO_SLOT,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.weights.is_empty() || !self.bias.is_empty()
    }

    /// Whether this layer (or, for band splits, any nested layer) trains.
    pub fn any_trainable(&self) -> bool {
        if self.trainable && self.has_params() {
            return true;
        }
        if let LayerKind::BandSplit { stacks } = &self.kind {
            return stacks.iter().flatten().any(|l| l.any_trainable());
        }
        false
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            LayerKind::Conv(spec) => {
                if spec.kernel_rows == 2 {
                    "ear_conv2d"
                } else {
                    "conv1d"
                }
            }
            LayerKind::MaxPool { .. } => "max_pool",
            LayerKind::PeakNorm => "peak_normalise",
            LayerKind::BandSplit { .. } => "flatten_concat",
            LayerKind::Flatten => "flatten_concat",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let kind = match &self.kind {
            LayerKind::Conv(s) => LayerKind::Conv(*s),
            LayerKind::MaxPool { width } => LayerKind::MaxPool { width: *width },
            LayerKind::PeakNorm => LayerKind::PeakNorm,
            LayerKind::BandSplit { stacks } => LayerKind::BandSplit {
                stacks: stacks
                    .iter()
                    .map(|s| s.iter().map(|l| l.cast()).collect())
                    .collect(),
            },
            LayerKind::Flatten => LayerKind::Flatten,
            LayerKind::Dense { inputs, outputs, activation } => LayerKind::Dense {
                inputs: *inputs,
                outputs: *outputs,
                activation: *activation,
            },
            LayerKind::Dropout { rate } => LayerKind::Dropout { rate: *rate },
            LayerKind::Softmax => LayerKind::Softmax,
        };
        Layer {
            kind,
            weights: self.weights.cast(),
            bias: self.bias.cast(),
            trainable: self.trainable,
            w_slot: self.w_slot,
            b_slot: self.b_slot,
        }
    }
}
