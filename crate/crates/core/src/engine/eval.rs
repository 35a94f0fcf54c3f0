use serde::Serialize;

use super::dataset::Dataset;
use super::forward::forward_trace;
use super::quantsim::{QuantSim, QuantSimConfig, ResolvedRange};
use crate::bias::{summarize, LayerBiasedError};
use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub enum EvalMode<'a> {
    Fp32,
    QuantSim(&'a QuantSimConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSqnr {
    pub layer: String,
    /// `10 log10(sum y^2 / sum (y~ - y)^2)`; `None` when there is no noise.
    pub sqnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub samples: usize,
    /// Top-1 accuracy, when the dataset has labels.
    pub accuracy: Option<f64>,
    /// Output deviation from the same graph run in floating point.
    pub mean_abs_deviation: f64,
    pub max_abs_deviation: f64,
    pub mse: f64,
    pub layers: Vec<LayerSqnr>,
    /// Mean per-channel output shift of every affine layer.
    pub biased_error: Vec<LayerBiasedError>,
    pub activation_ranges: Vec<ResolvedRange>,
    pub degenerate_grids: Vec<String>,
}

/// Index of the largest element (first one on ties).
pub fn argmax<T: Scalar>(y: &Tensor<T>) -> usize {
    let mut best = 0;
    for (i, v) in y.data().iter().enumerate() {
        if *v > y.data()[best] {
            best = i;
        }
    }
    best
}

/// Run the dataset through the graph and compare against the same graph in
/// floating point. Samples are processed in order and all sums are
/// accumulated in `f64`, so results are reproducible bit for bit.
pub fn evaluate<T: Scalar>(graph: &LayerGraph<T>, dataset: &Dataset<T>, mode: EvalMode<'_>) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sim = match mode {
        EvalMode::Fp32 => None,
        EvalMode::QuantSim(cfg) => Some(QuantSim::prepare(graph, cfg)?),
    };
    let n_layers = graph.len();
    let mut signal = vec![0.0f64; n_layers];
    let mut noise = vec![0.0f64; n_layers];
    let mut shift: Vec<Option<Vec<f64>>> = graph
        .layers()
        .iter()
        .map(|l| l.affine().map(|a| vec![0.0; a.out_channels()]))
        .collect();
    let (mut abs_sum, mut max_abs, mut sq_sum, mut count) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut correct = 0usize;
    for (k, x) in dataset.inputs().iter().enumerate() {
        let fp = forward_trace(graph, x)?;
        let q = match &sim {
            Some(s) => s.trace(graph, x)?,
            None => fp.clone(),
        };
        for i in 0..n_layers {
            for (&a, &b) in fp[i].data().iter().zip(q[i].data()) {
                let (a, b) = (a.as_f64(), b.as_f64());
                signal[i] += a * a;
                noise[i] += (b - a) * (b - a);
            }
            if let Some(acc) = &mut shift[i] {
                for ((s, mq), mf) in acc.iter_mut().zip(q[i].channel_means()).zip(fp[i].channel_means()) {
                    *s += mq - mf;
                }
            }
        }
        let (yf, yq) = (&fp[n_layers - 1], &q[n_layers - 1]);
        if !yq.is_finite() {
            return Err(Error::Numerical(format!("non-finite output for sample {k}")));
        }
        for (&a, &b) in yf.data().iter().zip(yq.data()) {
            let d = (b.as_f64() - a.as_f64()).abs();
            abs_sum += d;
            sq_sum += d * d;
            max_abs = max_abs.max(d);
            count += 1;
        }
        if let Some(labels) = dataset.labels() {
            if argmax(yq) as i64 == labels[k] as i64 {
                correct += 1;
            }
        }
    }
    let n = dataset.len() as f64;
    let layers = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| LayerSqnr {
            layer: l.name.clone(),
            sqnr_db: (noise[i] > 0.0)
                .then(|| 10.0 * (signal[i] / noise[i]).log10())
                .filter(|v| v.is_finite()),
        })
        .collect();
    let biased_error = shift
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| Some(summarize(graph.layer(i).name.clone(), s?.iter().map(|v| v / n).collect())))
        .collect();
    Ok(EvalResult {
        samples: dataset.len(),
        accuracy: dataset.labels().map(|_| correct as f64 / n),
        mean_abs_deviation: abs_sum / count as f64,
        max_abs_deviation: max_abs,
        mse: sq_sum / count as f64,
        layers,
        biased_error,
        activation_ranges: sim.as_ref().map(|s| s.ranges().to_vec()).unwrap_or_default(),
        degenerate_grids: sim.as_ref().map(|s| s.degenerate_layers(graph)).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub bits: u8,
    pub result: EvalResult,
}

/// Evaluate at every bitwidth of `cfg.bit_sweep` (weights and activations).
pub fn bit_sweep<T: Scalar>(graph: &LayerGraph<T>, dataset: &Dataset<T>, cfg: &QuantSimConfig) -> Result<Vec<SweepPoint>> {
    cfg.bit_sweep
        .iter()
        .map(|&bits| {
            Ok(SweepPoint {
                bits,
                result: evaluate(graph, dataset, EvalMode::QuantSim(&cfg.with_bits(bits)))?,
            })
        })
        .collect()
}
