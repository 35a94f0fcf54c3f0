use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Affine, AffineKind, EqualizablePair, LayerGraph, Op};
use crate::quant::{weight_ranges, ChannelRanges, RangeMode};
use crate::scalar::Scalar;

/// Positive per-channel scale factors for one equalized pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleVector(Vec<f64>);

impl ScaleVector {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if let Some(bad) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale factors must be positive and finite, got {bad}"
            )));
        }
        Ok(ScaleVector(s))
    }

    pub fn ones(n: usize) -> Self {
        ScaleVector(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs_log(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, s| m.max(s.ln().abs()))
    }
}

/// `s_i = sqrt(r1_i * r2_i) / r2_i`, which makes the scaled ranges of channel
/// `i` equal in both layers. Channels where either range is zero keep `s_i = 1`.
pub fn equalization_scale(r1: &ChannelRanges, r2: &ChannelRanges) -> Result<ScaleVector> {
    if r1.len() != r2.len() {
        return Err(Error::Shape(format!(
            "{} output channels in the first layer, {} input channels in the second",
            r1.len(),
            r2.len()
        )));
    }
    let s = r1
        .r
        .iter()
        .zip(&r2.r)
        .map(|(&a, &b)| if a > 0.0 && b > 0.0 { (a * b).sqrt() / b } else { 1.0 })
        .collect();
    ScaleVector::new(s)
}

/// `sum_i (r1_i / R1) (r2_i / R2)`.
pub fn pair_objective(r1: &ChannelRanges, r2: &ChannelRanges) -> f64 {
    r1.precision().iter().zip(r2.precision()).map(|(a, b)| a * b).sum()
}

/// Number of consecutive input features of `second` fed by one channel of a
/// tensor with shape `input` (more than one when a linear layer reads a
/// flattened feature map).
fn block_len<T: Scalar>(second: &Affine<T>, input: &[usize]) -> usize {
    match second.kind {
        AffineKind::Linear => input[1..].iter().product(),
        _ => 1,
    }
}

/// Ranges of `second` per channel of its input tensor of shape `input`.
pub fn consumer_ranges<T: Scalar>(second: &Affine<T>, input: &[usize], mode: RangeMode) -> Result<ChannelRanges> {
    let channels = input[0];
    let w = &second.weight;
    let mut lo = vec![f64::INFINITY; channels];
    let mut hi = vec![f64::NEG_INFINITY; channels];
    match second.kind {
        AffineKind::DepthwiseConv2d => return weight_ranges(w, mode),
        AffineKind::Conv2d => {
            let s = w.shape();
            if s[1] != channels {
                return Err(Error::Shape(format!("conv with {} inputs fed {channels} channels", s[1])));
            }
            let k = s[2] * s[3];
            for (j, chunk) in w.data().chunks(k).enumerate() {
                let c = j % channels;
                for v in chunk {
                    lo[c] = lo[c].min(v.as_f64());
                    hi[c] = hi[c].max(v.as_f64());
                }
            }
        }
        AffineKind::Linear => {
            let inp = w.shape()[1];
            let block = block_len(second, input);
            if block * channels != inp {
                return Err(Error::Shape(format!("linear with {inp} inputs fed {input:?}")));
            }
            for row in w.data().chunks(inp) {
                for (j, v) in row.iter().enumerate() {
                    let c = j / block;
                    lo[c] = lo[c].min(v.as_f64());
                    hi[c] = hi[c].max(v.as_f64());
                }
            }
        }
    }
    Ok(ChannelRanges::from_extrema(lo, hi, mode))
}

/// Symmetric ranges of both members of a pair, along the shared channel axis.
pub fn pair_ranges<T: Scalar>(graph: &LayerGraph<T>, pair: EqualizablePair) -> Result<(ChannelRanges, ChannelRanges)> {
    let first = graph.layer(pair.first).affine().ok_or_else(|| not_affine(graph, pair.first))?;
    let second = graph.layer(pair.second).affine().ok_or_else(|| not_affine(graph, pair.second))?;
    let shapes = graph.shapes()?;
    let r1 = weight_ranges(&first.weight, RangeMode::Symmetric)?;
    let r2 = consumer_ranges(second, &shapes[pair.activation], RangeMode::Symmetric)?;
    Ok((r1, r2))
}

fn not_affine<T: Scalar>(graph: &LayerGraph<T>, idx: usize) -> Error {
    Error::InvalidParameter(format!("layer `{}` is not linear or convolutional", graph.layer(idx).name))
}

/// Rescale a pair: output channel `i` of the first layer (weights, bias and
/// recorded statistics) is divided by `s_i`, the activation is
/// reparameterized so that `f(s x) = s f^(x)`, and the input channel `i` of
/// the second layer is multiplied by `s_i`. The network function is
/// unchanged. Grids attached to the three layers are dropped.
pub fn apply_pair_scaling<T: Scalar>(
    mut graph: LayerGraph<T>,
    pair: EqualizablePair,
    s: &ScaleVector,
) -> Result<LayerGraph<T>> {
    let shapes = graph.shapes()?;
    let input = shapes[pair.activation].clone();
    let n = input[0];
    if s.len() != n {
        return Err(Error::Shape(format!("{} scales for {n} channels", s.len())));
    }
    {
        let first = graph.layer(pair.first).affine().ok_or_else(|| not_affine(&graph, pair.first))?;
        let second = graph.layer(pair.second).affine().ok_or_else(|| not_affine(&graph, pair.second))?;
        if first.out_channels() != n || block_len(second, &input) * n != second_width(second) {
            return Err(Error::Shape("pair channel counts do not match".into()));
        }
        if graph.layer(pair.activation).activation().is_none() {
            return Err(Error::InvalidParameter(format!(
                "layer `{}` is not an activation",
                graph.layer(pair.activation).name
            )));
        }
    }
    let st: Vec<T> = s.as_slice().iter().map(|&v| T::from_f64(v)).collect();

    let l1 = graph.layer_mut(pair.first);
    l1.quant = None;
    let a1 = l1.affine_mut().expect("checked");
    for (i, &si) in st.iter().enumerate() {
        for v in a1.weight.channel_slice_mut(0, i)?.iter_mut() {
            *v /= si;
        }
        a1.bias.data_mut()[i] /= si;
    }
    if let Some(stats) = &mut a1.stats {
        for (i, &si) in st.iter().enumerate() {
            stats.shift[i] /= si;
            stats.scale[i] /= si;
        }
    }

    let la = graph.layer_mut(pair.activation);
    la.quant = None;
    let Op::Activation(act) = &la.op else { unreachable!() };
    la.op = Op::Activation(act.reparam(&st)?);

    let l2 = graph.layer_mut(pair.second);
    l2.quant = None;
    let a2 = l2.affine_mut().expect("checked");
    let block = block_len(a2, &input);
    match a2.kind {
        AffineKind::Linear => {
            let inp = a2.weight.shape()[1];
            for row in a2.weight.data_mut().chunks_mut(inp) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= st[j / block];
                }
            }
        }
        AffineKind::Conv2d => {
            for (i, &si) in st.iter().enumerate() {
                a2.weight.channel_slice_mut(1, i)?.scale(si);
            }
        }
        AffineKind::DepthwiseConv2d => {
            for (i, &si) in st.iter().enumerate() {
                a2.weight.channel_slice_mut(0, i)?.scale(si);
            }
        }
    }
    Ok(graph)
}

fn second_width<T: Scalar>(a: &Affine<T>) -> usize {
    match a.kind {
        AffineKind::Linear | AffineKind::Conv2d => a.weight.shape()[1],
        AffineKind::DepthwiseConv2d => a.weight.shape()[0],
    }
}
