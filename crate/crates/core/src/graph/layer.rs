use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::quant::QParams;
use crate::scalar::Scalar;
use crate::tensor::{self, Conv2dGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineKind {
    Linear,
    Conv2d,
    DepthwiseConv2d,
}

/// Where a layer reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Input,
    Layer(usize),
}

/// Raw batch-norm parameters as stored by a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.len();
        if n == 0
            || self.beta.len() != n
            || self.running_mean.len() != n
            || self.running_var.len() != n
        {
            return Err(Error::InvalidGraph(
                "batch-norm vectors must be non-empty and equally long".into(),
            ));
        }
        if self.gamma.iter().any(|&g| !(g > T::zero())) {
            return Err(Error::InvalidGraph("batch-norm gamma must be > 0".into()));
        }
        if self
            .running_var
            .iter()
            .any(|&v| !(v + self.epsilon > T::zero()))
        {
            return Err(Error::InvalidGraph(
                "batch-norm running_var + epsilon must be > 0".into(),
            ));
        }
        let all = self
            .gamma
            .iter()
            .chain(&self.beta)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if all.clone().any(|v| !v.is_finite()) || !self.epsilon.is_finite() {
            return Err(Error::InvalidGraph("non-finite batch-norm parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape()[0] != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels, input {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let inner = x.channel_len();
        let mut out = x.clone();
        for (c, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let k = self.gamma[c] / (self.running_var[c] + self.epsilon).sqrt();
            for v in chunk {
                *v = (*v - self.running_mean[c]) * k + self.beta[c];
            }
        }
        Ok(out)
    }
}

/// Per-channel Gaussian model of an affine layer's output (pre-activation):
/// mean `shift` and standard deviation `scale`. Recorded when batch norm is
/// folded and kept in sync by every rewrite that touches the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T = f32> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

/// Linear, dense convolution or depthwise convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T = f32> {
    pub kind: AffineKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: Conv2dGeometry,
    pub stats: Option<BnStats<T>>,
}

impl<T: Scalar> Affine<T> {
    pub fn linear(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Affine {
            kind: AffineKind::Linear,
            weight,
            bias,
            geometry: Conv2dGeometry::default(),
            stats: None,
        }
    }

    pub fn conv2d(weight: Tensor<T>, bias: Tensor<T>, geometry: Conv2dGeometry) -> Self {
        Affine {
            kind: AffineKind::Conv2d,
            weight,
            bias,
            geometry,
            stats: None,
        }
    }

    pub fn depthwise(weight: Tensor<T>, bias: Tensor<T>, geometry: Conv2dGeometry) -> Self {
        Affine {
            kind: AffineKind::DepthwiseConv2d,
            weight,
            bias,
            geometry,
            stats: None,
        }
    }

    pub fn with_stats(mut self, shift: Vec<T>, scale: Vec<T>) -> Self {
        self.stats = Some(BnStats { shift, scale });
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Channels (or features) of the input this layer consumes.
    pub fn in_channels(&self) -> usize {
        match self.kind {
            AffineKind::Linear | AffineKind::Conv2d => self.weight.shape()[1],
            AffineKind::DepthwiseConv2d => self.weight.shape()[0],
        }
    }

    /// Weight axis holding input channels (axis 0 for depthwise).
    pub fn input_axis(&self) -> usize {
        match self.kind {
            AffineKind::Linear | AffineKind::Conv2d => 1,
            AffineKind::DepthwiseConv2d => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        match self.kind {
            AffineKind::Linear if s.len() != 2 => {
                return Err(Error::InvalidGraph(format!("linear weight shape {s:?}")))
            }
            AffineKind::Conv2d if s.len() != 4 => {
                return Err(Error::InvalidGraph(format!("conv weight shape {s:?}")))
            }
            AffineKind::DepthwiseConv2d if s.len() != 4 || s[1] != 1 => {
                return Err(Error::InvalidGraph(format!(
                    "depthwise weight must be [C, 1, kh, kw], got {s:?}"
                )))
            }
            _ => {}
        }
        if self.bias.shape() != [self.out_channels()] {
            return Err(Error::InvalidGraph(format!(
                "bias shape {:?} for {} output channels",
                self.bias.shape(),
                self.out_channels()
            )));
        }
        if !self.weight.is_finite() || !self.bias.is_finite() {
            return Err(Error::InvalidGraph("non-finite weight or bias".into()));
        }
        if let Some(st) = &self.stats {
            let n = self.out_channels();
            if st.shift.len() != n || st.scale.len() != n {
                return Err(Error::InvalidGraph("statistics length mismatch".into()));
            }
            if st.scale.iter().any(|&g| !(g >= T::zero()) || !g.is_finite())
                || st.shift.iter().any(|v| !v.is_finite())
            {
                return Err(Error::InvalidGraph("invalid statistics".into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(&self.weight, x)
    }

    /// Forward pass with a substitute weight tensor (e.g. fake-quantized).
    pub fn forward_with(&self, weight: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            AffineKind::Linear => tensor::linear(weight, x, &self.bias),
            AffineKind::Conv2d => tensor::conv2d(weight, x, &self.bias, self.geometry),
            AffineKind::DepthwiseConv2d => {
                tensor::depthwise_conv2d(weight, x, &self.bias, self.geometry)
            }
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            AffineKind::Linear => {
                let n: usize = input.iter().product();
                if n != self.in_channels() {
                    return Err(Error::Shape(format!(
                        "linear with {} inputs fed {:?}",
                        self.in_channels(),
                        input
                    )));
                }
                Ok(vec![self.out_channels()])
            }
            AffineKind::Conv2d | AffineKind::DepthwiseConv2d => {
                let &[c, h, w] = input else {
                    return Err(Error::Shape(format!("convolution fed {input:?}")));
                };
                if c != self.in_channels() {
                    return Err(Error::Shape(format!(
                        "convolution expects {} channels, fed {input:?}",
                        self.in_channels()
                    )));
                }
                let ws = self.weight.shape();
                Ok(vec![
                    self.out_channels(),
                    self.geometry.output_extent(h, ws[2])?,
                    self.geometry.output_extent(w, ws[3])?,
                ])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op<T = f32> {
    Affine(Affine<T>),
    BatchNorm(BatchNormParams<T>),
    Activation(Activation<T>),
    ResidualAdd,
}

/// Quantization parameters attached to a layer (the manifest's `quant` key).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerQuant {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<QParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<QParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub name: String,
    pub op: Op<T>,
    pub inputs: Vec<Source>,
    pub quant: Option<LayerQuant>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(name: impl Into<String>, op: Op<T>, inputs: Vec<Source>) -> Self {
        Layer {
            name: name.into(),
            op,
            inputs,
            quant: None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.op {
            Op::Affine(a) => match a.kind {
                AffineKind::Linear => "linear",
                AffineKind::Conv2d => "conv2d",
                AffineKind::DepthwiseConv2d => "depthwise_conv2d",
            },
            Op::BatchNorm(_) => "batch_norm",
            Op::Activation(_) => "activation",
            Op::ResidualAdd => "residual_add",
        }
    }

    pub fn affine(&self) -> Option<&Affine<T>> {
        match &self.op {
            Op::Affine(a) => Some(a),
            _ => None,
        }
    }

    pub fn affine_mut(&mut self) -> Option<&mut Affine<T>> {
        match &mut self.op {
            Op::Affine(a) => Some(a),
            _ => None,
        }
    }

    pub fn activation(&self) -> Option<&Activation<T>> {
        match &self.op {
            Op::Activation(a) => Some(a),
            _ => None,
        }
    }
}
