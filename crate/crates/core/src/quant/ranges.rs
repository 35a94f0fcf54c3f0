use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// `r_i = max_j W_ij - min_j W_ij`
    MinMax,
    /// `r_i = 2 * max_j |W_ij|`
    Symmetric,
}

/// Per-channel weight ranges along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanges {
    /// Range of each channel.
    pub r: Vec<f64>,
    /// Range of the whole tensor, `max_i r_i`.
    pub total: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChannelRanges {
    pub fn from_extrema(lo: Vec<f64>, hi: Vec<f64>, mode: RangeMode) -> Self {
        let r: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| match mode {
                RangeMode::MinMax => h - l,
                RangeMode::Symmetric => 2.0 * l.abs().max(h.abs()),
            })
            .collect();
        let total = r.iter().copied().fold(0.0, f64::max);
        ChannelRanges { r, total, lo, hi }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Channel precisions `r_i / R`; all zero for an all-zero tensor.
    pub fn precision(&self) -> Vec<f64> {
        if self.total == 0.0 {
            return vec![0.0; self.r.len()];
        }
        self.r.iter().map(|r| r / self.total).collect()
    }

    /// Ratio between the largest and smallest non-zero channel range.
    pub fn imbalance(&self) -> f64 {
        let min = self
            .r
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min);
        if min.is_infinite() {
            1.0
        } else {
            self.total / min
        }
    }
}

/// Per-output-channel ranges of a weight tensor (channel axis 0).
pub fn weight_ranges<T: Scalar>(w: &Tensor<T>, mode: RangeMode) -> Result<ChannelRanges> {
    weight_ranges_along(w, 0, mode)
}

pub fn weight_ranges_along<T: Scalar>(w: &Tensor<T>, axis: usize, mode: RangeMode) -> Result<ChannelRanges> {
    if w.rank() < 2 {
        return Err(Error::Shape(format!(
            "weight ranges need rank >= 2, got {:?}",
            w.shape()
        )));
    }
    let n = w.dim(axis)?;
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for i in 0..n {
        let (l, h) = w.channel_slice(axis, i)?.min_max();
        lo.push(l.as_f64());
        hi.push(h.as_f64());
    }
    Ok(ChannelRanges::from_extrema(lo, hi, mode))
}

/// Five-number summary of the weights feeding one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Per-output-channel weight summaries of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightSummary {
    pub layer: String,
    pub kind: String,
    pub channels: Vec<ChannelSummary>,
    /// Largest over smallest non-zero channel range `max - min`.
    pub range_ratio: f64,
}

/// Quantile by linear interpolation between order statistics at position
/// `p * (n - 1)`. `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn channel_summary<T: Scalar>(channel: usize, values: &[T]) -> ChannelSummary {
    let mut v: Vec<f64> = values.iter().map(|x| x.as_f64()).collect();
    v.sort_by(f64::total_cmp);
    ChannelSummary {
        channel,
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

/// Weight summaries of every affine layer, in graph order.
pub fn weight_summary<T: Scalar>(graph: &LayerGraph<T>) -> Result<Vec<LayerWeightSummary>> {
    let mut out = Vec::new();
    for layer in graph.layers() {
        let Some(a) = layer.affine() else { continue };
        let n = a.out_channels();
        let mut channels = Vec::with_capacity(n);
        for c in 0..n {
            channels.push(channel_summary(c, &a.weight.channel_slice(0, c)?.to_vec()));
        }
        let ranges = weight_ranges(&a.weight, RangeMode::MinMax)?;
        out.push(LayerWeightSummary {
            layer: layer.name.clone(),
            kind: layer.kind_name().to_string(),
            channels,
            range_ratio: ranges.imbalance(),
        });
    }
    Ok(out)
}
