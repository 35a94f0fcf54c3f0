use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Activation, LayerGraph, Op, Source};
use crate::scalar::Scalar;

/// Default number of standard deviations for batch-norm derived ranges.
pub const DEFAULT_RANGE_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActivationRange {
    /// Per-tensor reduction `(min_i lo_i, max_i hi_i)`.
    pub fn tensor_range(&self) -> (f64, f64) {
        (
            self.lo.iter().copied().fold(f64::INFINITY, f64::min),
            self.hi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Per-channel range `beta_i +- n * gamma_i` mapped through the activation,
/// so a ReLU clips the lower end at 0.
pub fn activation_range_from_bn<T: Scalar>(
    shift: &[T],
    scale: &[T],
    n: f64,
    act: &Activation<T>,
) -> Result<ActivationRange> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter(format!("range multiplier n must be > 0, got {n}")));
    }
    if shift.len() != scale.len() {
        return Err(Error::Shape("shift and scale lengths differ".into()));
    }
    let mut lo = Vec::with_capacity(shift.len());
    let mut hi = Vec::with_capacity(shift.len());
    for (i, (&b, &g)) in shift.iter().zip(scale).enumerate() {
        let (b, g) = (b.as_f64(), g.as_f64());
        let (l, h) = act
            .channel(i)
            .image(T::from_f64(b - n * g), T::from_f64(b + n * g));
        lo.push(l.as_f64());
        hi.push(h.as_f64());
    }
    Ok(ActivationRange { lo, hi })
}

/// Batch-norm derived range of activation layer `act_idx`, using the
/// batch-norm layer feeding it or the statistics recorded on the affine
/// layer feeding it.
pub fn activation_range_for<T: Scalar>(
    graph: &LayerGraph<T>,
    act_idx: usize,
    n: f64,
) -> Result<ActivationRange> {
    let layer = graph.layer(act_idx);
    let Op::Activation(act) = &layer.op else {
        return Err(Error::InvalidParameter(format!(
            "layer `{}` is not an activation",
            layer.name
        )));
    };
    let stats = match layer.inputs[0] {
        Source::Layer(p) => match &graph.layer(p).op {
            Op::BatchNorm(bn) => Some((&bn.beta, &bn.gamma)),
            _ => graph.layer(p).affine().and_then(|a| a.stats.as_ref()).map(|s| (&s.shift, &s.scale)),
        },
        Source::Input => None,
    };
    let Some((shift, scale)) = stats else {
        return Err(Error::MissingStatistics {
            layer: layer.name.clone(),
            hint: "no batch-norm statistics on the producing layer; supply explicit activation ranges".into(),
        });
    };
    activation_range_from_bn(shift, scale, n, act)
}
