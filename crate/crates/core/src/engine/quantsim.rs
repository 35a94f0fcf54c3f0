use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::forward::{execute, ExecHooks};
use crate::bias::output_moments;
use crate::error::{Error, Result};
use crate::graph::{LayerGraph, LayerQuant, Op, Source};
use crate::quant::{
    activation_range_for, activation_range_from_bn, make_qparams, qparams_for_tensor, quantize_dequantize, ActivationRange, Granularity,
    QParams, QScheme, DEFAULT_RANGE_SIGMAS,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where activation ranges come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActRangeSource {
    /// `beta +- n * gamma` from recorded batch-norm statistics.
    BnDerived { n: f64 },
    /// `[lo, hi]` per layer name.
    Explicit(BTreeMap<String, (f64, f64)>),
}

impl Default for ActRangeSource {
    fn default() -> Self {
        ActRangeSource::BnDerived { n: DEFAULT_RANGE_SIGMAS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSimConfig {
    pub weight_scheme: QScheme,
    pub act_scheme: QScheme,
    pub act_range: ActRangeSource,
    pub quantize_weights: bool,
    pub quantize_activations: bool,
    /// Bitwidths evaluated by sweeps in reports.
    pub bit_sweep: Vec<u8>,
}

impl Default for QuantSimConfig {
    fn default() -> Self {
        QuantSimConfig {
            weight_scheme: QScheme::default(),
            act_scheme: QScheme::default(),
            act_range: ActRangeSource::default(),
            quantize_weights: true,
            quantize_activations: true,
            bit_sweep: vec![4, 6, 8, 10, 12, 16],
        }
    }
}

impl QuantSimConfig {
    pub fn validate(&self) -> Result<()> {
        self.weight_scheme.validate()?;
        self.act_scheme.validate()?;
        if let ActRangeSource::BnDerived { n } = self.act_range {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::InvalidParameter(format!("range multiplier n must be > 0, got {n}")));
            }
        }
        for &b in &self.bit_sweep {
            self.weight_scheme.with_bits(b).validate()?;
        }
        Ok(())
    }

    /// Same configuration with both weight and activation bitwidth set.
    pub fn with_bits(&self, bits: u8) -> Self {
        QuantSimConfig {
            weight_scheme: self.weight_scheme.with_bits(bits),
            act_scheme: self.act_scheme.with_bits(bits),
            ..self.clone()
        }
    }

    /// Floating-point weights and activations throughout.
    pub fn disabled() -> Self {
        QuantSimConfig {
            quantize_weights: false,
            quantize_activations: false,
            ..Self::default()
        }
    }
}

/// Activation range of one layer and whether it is an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedRange {
    pub layer: String,
    pub lo: f64,
    pub hi: f64,
    /// Derived from propagated moments (e.g. after a residual add) rather
    /// than from a layer's own statistics or an explicit entry.
    pub estimated: bool,
}

/// A graph prepared for simulated quantization: fake-quantized weights and
/// activation grids computed once.
#[derive(Debug, Clone)]
pub struct QuantSim<T: Scalar = f32> {
    weights: Vec<Option<Tensor<T>>>,
    act_grids: Vec<Option<QParams>>,
    ranges: Vec<ResolvedRange>,
}

/// An attached grid is reused only when it was built with the requested scheme.
fn attached<'a>(
    q: &'a Option<LayerQuant>,
    pick: impl Fn(&'a LayerQuant) -> Option<&'a QParams>,
    scheme: QScheme,
) -> Option<&'a QParams> {
    q.as_ref().and_then(pick).filter(|qp| qp.scheme == scheme)
}

impl<T: Scalar> QuantSim<T> {
    /// Weight grids: attached grids whose scheme matches, else min/max of the
    /// weights. Activation grids after every activation and residual add:
    /// attached, else explicit, else derived from batch-norm statistics
    /// (propagated moments for tensors without their own statistics).
    pub fn prepare(graph: &LayerGraph<T>, cfg: &QuantSimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut weights = vec![None; graph.len()];
        if cfg.quantize_weights {
            for (i, l) in graph.layers().iter().enumerate() {
                let Some(a) = l.affine() else { continue };
                let qp = match attached(&l.quant, |q| q.weight.as_ref(), cfg.weight_scheme) {
                    Some(qp) => qp.clone(),
                    None => qparams_for_tensor(&a.weight, cfg.weight_scheme)?,
                };
                weights[i] = Some(quantize_dequantize(&a.weight, &qp)?);
            }
        }
        let mut act_grids = vec![None; graph.len()];
        let mut ranges = Vec::new();
        if cfg.quantize_activations {
            let moments = output_moments(graph);
            for (i, l) in graph.layers().iter().enumerate() {
                if !matches!(l.op, Op::Activation(_) | Op::ResidualAdd) {
                    continue;
                }
                if let Some(qp) = attached(&l.quant, |q| q.activation.as_ref(), cfg.act_scheme) {
                    act_grids[i] = Some(qp.clone());
                    continue;
                }
                let (range, estimated) = resolve_range(graph, i, cfg, &moments)?;
                act_grids[i] = Some(act_qparams(&range, cfg.act_scheme)?);
                let (lo, hi) = range.tensor_range();
                ranges.push(ResolvedRange {
                    layer: l.name.clone(),
                    lo,
                    hi,
                    estimated,
                });
            }
        }
        Ok(QuantSim {
            weights,
            act_grids,
            ranges,
        })
    }

    pub fn forward(&self, graph: &LayerGraph<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(graph, input)?.pop().expect("non-empty graph"))
    }

    pub fn trace(&self, graph: &LayerGraph<T>, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if graph.len() != self.weights.len() {
            return Err(Error::InvalidParameter("quantization prepared for a different graph".into()));
        }
        execute(
            graph,
            input,
            &ExecHooks {
                weights: Some(&self.weights),
                act_grids: Some(&self.act_grids),
            },
        )
    }

    pub fn act_grids(&self) -> &[Option<QParams>] {
        &self.act_grids
    }

    pub fn ranges(&self) -> &[ResolvedRange] {
        &self.ranges
    }

    /// Names of layers whose weight or activation grid has a degenerate range.
    pub fn degenerate_layers(&self, graph: &LayerGraph<T>) -> Vec<String> {
        self.act_grids
            .iter()
            .enumerate()
            .filter(|(_, g)| g.as_ref().is_some_and(|g| g.is_degenerate()))
            .map(|(i, _)| graph.layer(i).name.clone())
            .collect()
    }
}

fn resolve_range<T: Scalar>(
    graph: &LayerGraph<T>,
    idx: usize,
    cfg: &QuantSimConfig,
    moments: &[std::result::Result<crate::bias::ChannelMoments, String>],
) -> Result<(ActivationRange, bool)> {
    let layer = graph.layer(idx);
    match &cfg.act_range {
        ActRangeSource::Explicit(map) => match map.get(&layer.name) {
            Some(&(lo, hi)) => Ok((ActivationRange { lo: vec![lo], hi: vec![hi] }, false)),
            None => Err(Error::MissingStatistics {
                layer: layer.name.clone(),
                hint: "no explicit activation range given for this layer".into(),
            }),
        },
        ActRangeSource::BnDerived { n } => {
            if let Op::Activation(act) = &layer.op {
                if let Source::Layer(p) = layer.inputs[0] {
                    let own = matches!(graph.layer(p).op, Op::BatchNorm(_))
                        || graph.layer(p).affine().is_some_and(|a| a.stats.is_some());
                    if own {
                        return Ok((activation_range_for(graph, idx, *n)?, false));
                    }
                    // pre-activation mean +- n std mapped through the activation
                    if let Ok(m) = &moments[p] {
                        let shift: Vec<T> = m.mean.iter().map(|&v| T::from_f64(v)).collect();
                        let scale: Vec<T> = m.std().into_iter().map(T::from_f64).collect();
                        return Ok((activation_range_from_bn(&shift, &scale, *n, act)?, true));
                    }
                }
            }
            // tensors without statistics of their own: mean +- n std of the
            // propagated output moments
            match &moments[idx] {
                Ok(m) => {
                    let lo = m.mean.iter().zip(&m.var).map(|(mu, v)| mu - n * v.sqrt()).collect();
                    let hi = m.mean.iter().zip(&m.var).map(|(mu, v)| mu + n * v.sqrt()).collect();
                    Ok((ActivationRange { lo, hi }, true))
                }
                Err(reason) => Err(Error::MissingStatistics {
                    layer: layer.name.clone(),
                    hint: format!("{reason}; supply explicit activation ranges"),
                }),
            }
        }
    }
}

fn act_qparams(range: &ActivationRange, scheme: QScheme) -> Result<QParams> {
    match scheme.granularity {
        Granularity::PerTensor => {
            let (lo, hi) = range.tensor_range();
            make_qparams(lo, hi, scheme)
        }
        Granularity::PerChannel => {
            let per: Vec<QParams> = range
                .lo
                .iter()
                .zip(&range.hi)
                .map(|(&lo, &hi)| make_qparams(lo, hi, scheme))
                .collect::<Result<_>>()?;
            let (q_min, q_max) = scheme.int_range();
            Ok(QParams {
                scheme,
                q_min,
                q_max,
                grids: per.into_iter().map(|q| q.grids[0]).collect(),
            })
        }
    }
}

/// Simulated fixed-point forward pass.
pub fn forward_quantsim<T: Scalar>(graph: &LayerGraph<T>, input: &Tensor<T>, cfg: &QuantSimConfig) -> Result<Tensor<T>> {
    QuantSim::prepare(graph, cfg)?.forward(graph, input)
}

/// Compute and attach weight and activation grids to the graph.
pub fn attach_quantization<T: Scalar>(mut graph: LayerGraph<T>, cfg: &QuantSimConfig) -> Result<LayerGraph<T>> {
    let sim = QuantSim::prepare(&graph, cfg)?;
    let mut wq = Vec::with_capacity(graph.len());
    for l in graph.layers() {
        wq.push(match (cfg.quantize_weights, l.affine()) {
            (true, Some(a)) => Some(match attached(&l.quant, |q| q.weight.as_ref(), cfg.weight_scheme) {
                Some(qp) => qp.clone(),
                None => qparams_for_tensor(&a.weight, cfg.weight_scheme)?,
            }),
            _ => None,
        });
    }
    for (i, l) in graph.layers_mut().iter_mut().enumerate() {
        let q = LayerQuant {
            weight: wq[i].take(),
            activation: sim.act_grids[i].clone(),
        };
        l.quant = (q.weight.is_some() || q.activation.is_some()).then_some(q);
    }
    Ok(graph)
}
