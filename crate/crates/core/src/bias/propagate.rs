//! Per-channel Gaussian moments of every layer output, propagated from the
//! batch-norm statistics recorded on affine layers.

use serde::Serialize;

use super::moments::clip_moments;
use crate::error::{Error, Result};
use crate::graph::{Activation, LayerGraph, Op, Source};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ChannelMoments {
    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }
}

/// Moments of `act(x)` for `x_c ~ N(shift_c, scale_c^2)`. Every channel's
/// function must be clipped-linear (`clip(x, a, b)`, either bound optional).
pub fn activation_moments<T: Scalar>(shift: &[f64], scale: &[f64], act: &Activation<T>) -> Result<ChannelMoments> {
    if shift.len() != scale.len() {
        return Err(Error::Shape("shift and scale lengths differ".into()));
    }
    let mut mean = Vec::with_capacity(shift.len());
    let mut var = Vec::with_capacity(shift.len());
    for (c, (&mu, &sigma)) in shift.iter().zip(scale).enumerate() {
        let Some((a, b)) = act.channel(c).clip_bounds() else {
            return Err(Error::InvalidParameter(format!(
                "channel {c}: activation is not clipped-linear, its output moments have no closed form"
            )));
        };
        let m = clip_moments(mu, sigma, a, b)?;
        mean.push(m.mean);
        var.push(m.variance);
    }
    Ok(ChannelMoments { mean, var })
}

/// Output moments of every layer. An entry is `Err(reason)` when the layer's
/// statistics cannot be recovered without data.
pub fn output_moments<T: Scalar>(graph: &LayerGraph<T>) -> Vec<std::result::Result<ChannelMoments, String>> {
    let mut out: Vec<std::result::Result<ChannelMoments, String>> = Vec::with_capacity(graph.len());
    for layer in graph.layers() {
        let src = |k: usize| -> std::result::Result<ChannelMoments, String> {
            match layer.inputs[k] {
                Source::Input => Err("the graph input has no recorded statistics".into()),
                Source::Layer(p) => out[p].clone(),
            }
        };
        let m = match &layer.op {
            Op::Affine(a) => match &a.stats {
                Some(st) => Ok(ChannelMoments {
                    mean: st.shift.iter().map(|v| v.as_f64()).collect(),
                    var: st.scale.iter().map(|v| v.as_f64().powi(2)).collect(),
                }),
                None => Err(format!("layer `{}` has no batch-norm statistics", layer.name)),
            },
            Op::BatchNorm(bn) => Ok(ChannelMoments {
                mean: bn.beta.iter().map(|v| v.as_f64()).collect(),
                var: bn.gamma.iter().map(|v| v.as_f64().powi(2)).collect(),
            }),
            Op::Activation(act) => src(0).and_then(|m| {
                let std = m.std();
                activation_moments(&m.mean, &std, act).map_err(|e| format!("layer `{}`: {e}", layer.name))
            }),
            // summands treated as independent
            Op::ResidualAdd => src(0).and_then(|a| {
                let b = src(1)?;
                Ok(ChannelMoments {
                    mean: a.mean.iter().zip(&b.mean).map(|(x, y)| x + y).collect(),
                    var: a.var.iter().zip(&b.var).map(|(x, y)| x + y).collect(),
                })
            }),
        };
        out.push(m);
    }
    out
}

/// Moments of the tensor consumed by layer `idx`.
pub fn input_moments<T: Scalar>(graph: &LayerGraph<T>, idx: usize) -> Result<ChannelMoments> {
    let layer = graph.layer(idx);
    let missing = |hint: String| Error::MissingStatistics {
        layer: layer.name.clone(),
        hint: format!("{hint}; use empirical bias correction with data instead"),
    };
    match layer.inputs[0] {
        Source::Input => Err(missing("the layer reads the graph input directly".into())),
        Source::Layer(p) => {
            let all = output_moments(graph);
            all[p].clone().map_err(missing)
        }
    }
}

/// Per-channel `E[x]` of the input of layer `idx`.
pub fn expected_input<T: Scalar>(graph: &LayerGraph<T>, idx: usize) -> Result<Vec<f64>> {
    Ok(input_moments(graph, idx)?.mean)
}
