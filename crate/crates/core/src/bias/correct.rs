use serde::Serialize;

use super::propagate::output_moments;
use crate::engine::{execute, ExecHooks};
use crate::error::{Error, Result};
use crate::graph::{Affine, AffineKind, LayerGraph, LayerQuant, Op, Source};
use crate::quant::{fake_quant_weights, qparams_for_tensor, quantize_dequantize, QParams, QScheme};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight quantization error `eps = W~ - W`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantError<T = f32> {
    pub eps: Tensor<T>,
    /// Entries that fell outside the grid and were clamped; their error is
    /// not bounded by half a grid step.
    pub clamped: usize,
}

impl<T: Scalar> QuantError<T> {
    pub fn new(weight: &Tensor<T>, qp: &QParams) -> Result<Self> {
        let q = quantize_dequantize(weight, qp)?;
        let per = if qp.grids.len() == 1 { weight.numel() } else { weight.channel_len() };
        let clamped = weight
            .data()
            .iter()
            .enumerate()
            .filter(|(k, v)| qp.clamps(if qp.grids.len() == 1 { 0 } else { k / per }, v.as_f64()))
            .count();
        Ok(QuantError {
            eps: Self::between(&q, weight)?.eps,
            clamped,
        })
    }

    /// Error of `quantized` against an arbitrary `reference` (e.g. weights
    /// before clipping).
    pub fn between(quantized: &Tensor<T>, reference: &Tensor<T>) -> Result<Self> {
        if quantized.shape() != reference.shape() {
            return Err(Error::Shape(format!(
                "quantized {:?} vs reference {:?}",
                quantized.shape(),
                reference.shape()
            )));
        }
        let data = quantized.data().iter().zip(reference.data()).map(|(&q, &w)| q - w).collect();
        Ok(QuantError {
            eps: Tensor::new(quantized.shape().to_vec(), data)?,
            clamped: 0,
        })
    }
}

/// `E[eps x]` per output channel given per-channel input means.
///
/// Convolutions assume every spatial position of an input channel has the
/// same mean, so the error reduces to `sum_ci E[x_ci] sum_mn eps[co, ci, m, n]`.
/// A linear layer reading a flattened `[C, H, W]` tensor takes one mean per
/// block of `H * W` features.
pub fn expected_output_error<T: Scalar>(affine: &Affine<T>, eps: &Tensor<T>, e_x: &[f64]) -> Result<Vec<f64>> {
    if eps.shape() != affine.weight.shape() {
        return Err(Error::Shape(format!(
            "error tensor {:?} for weight {:?}",
            eps.shape(),
            affine.weight.shape()
        )));
    }
    let s = eps.shape();
    let d = eps.data();
    match affine.kind {
        AffineKind::Linear => {
            let (out, inp) = (s[0], s[1]);
            if e_x.is_empty() || inp % e_x.len() != 0 {
                return Err(Error::Shape(format!("{} channel means for {inp} input features", e_x.len())));
            }
            let block = inp / e_x.len();
            Ok((0..out)
                .map(|o| {
                    d[o * inp..(o + 1) * inp]
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v.as_f64() * e_x[j / block])
                        .sum()
                })
                .collect())
        }
        AffineKind::Conv2d => {
            let (out, inp, k) = (s[0], s[1], s[2] * s[3]);
            if e_x.len() != inp {
                return Err(Error::Shape(format!("{} channel means for {inp} input channels", e_x.len())));
            }
            Ok((0..out)
                .map(|o| {
                    (0..inp)
                        .map(|i| {
                            let base = (o * inp + i) * k;
                            let sum: f64 = d[base..base + k].iter().map(|v| v.as_f64()).sum();
                            e_x[i] * sum
                        })
                        .sum()
                })
                .collect())
        }
        AffineKind::DepthwiseConv2d => {
            let (c, k) = (s[0], s[2] * s[3]);
            if e_x.len() != c {
                return Err(Error::Shape(format!("{} channel means for {c} channels", e_x.len())));
            }
            Ok((0..c)
                .map(|i| e_x[i] * d[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).sum::<f64>())
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCorrection {
    pub layer: String,
    /// Amount subtracted from each bias entry.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedLayer {
    pub layer: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BiasCorrectionReport {
    pub corrected: Vec<LayerCorrection>,
    pub skipped: Vec<SkippedLayer>,
}

fn subtract_bias<T: Scalar>(a: &mut Affine<T>, delta: &[f64]) {
    for (b, d) in a.bias.data_mut().iter_mut().zip(delta) {
        *b = T::from_f64(b.as_f64() - d);
    }
}

fn weight_grid<T: Scalar>(graph: &LayerGraph<T>, idx: usize, scheme: QScheme) -> Result<QParams> {
    let l = graph.layer(idx);
    match l.quant.as_ref().and_then(|q| q.weight.clone()) {
        Some(qp) => Ok(qp),
        None => qparams_for_tensor(&l.affine().expect("affine layer").weight, scheme),
    }
}

/// Subtract the expected output error of weight quantization from every
/// affine layer's bias, using input means derived from batch-norm
/// statistics. Weight grids already attached to a layer are used as is;
/// otherwise one is built from `scheme` and attached. Layers whose input
/// statistics cannot be recovered are skipped and listed in the report.
pub fn bias_correct_analytic<T: Scalar>(
    graph: LayerGraph<T>,
    scheme: QScheme,
) -> Result<(LayerGraph<T>, BiasCorrectionReport)> {
    correct_analytic(graph, None, scheme)
}

/// As [`bias_correct_analytic`], measuring the error against the weights of
/// `reference` (same structure) instead of the graph's own weights. Used when
/// the graph's weights were clipped before quantization.
pub fn bias_correct_analytic_against<T: Scalar>(
    graph: LayerGraph<T>,
    reference: &LayerGraph<T>,
    scheme: QScheme,
) -> Result<(LayerGraph<T>, BiasCorrectionReport)> {
    check_aligned(reference, &graph)?;
    correct_analytic(graph, Some(reference), scheme)
}

fn correct_analytic<T: Scalar>(
    mut graph: LayerGraph<T>,
    reference: Option<&LayerGraph<T>>,
    scheme: QScheme,
) -> Result<(LayerGraph<T>, BiasCorrectionReport)> {
    scheme.validate()?;
    // statistics do not depend on biases, so one propagation serves all layers
    let moments = output_moments(&graph);
    let mut report = BiasCorrectionReport::default();
    for idx in graph.affine_indices() {
        let qp = weight_grid(&graph, idx, scheme)?;
        let layer = graph.layer(idx);
        let a = layer.affine().expect("affine layer");
        let e_x = match layer.inputs[0] {
            Source::Input => Err("the layer reads the graph input directly".to_string()),
            Source::Layer(p) => moments[p].clone().map(|m| m.mean),
        };
        let q = quantize_dequantize(&a.weight, &qp)?;
        let reference_w = match reference {
            Some(r) => &r.layer(idx).affine().expect("aligned graphs").weight,
            None => &a.weight,
        };
        let eps = QuantError::between(&q, reference_w)?.eps;
        let name = layer.name.clone();
        let l = graph.layer_mut(idx);
        l.quant.get_or_insert_with(LayerQuant::default).weight = Some(qp);
        match e_x {
            Ok(e_x) => {
                let a = l.affine_mut().expect("affine layer");
                let delta = expected_output_error(a, &eps, &e_x)?;
                if delta.iter().any(|d| !d.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite bias correction for `{name}`")));
                }
                subtract_bias(a, &delta);
                report.corrected.push(LayerCorrection { layer: name, delta });
            }
            Err(reason) => {
                log::warn!("bias correction skipped for `{name}`: {reason}");
                report.skipped.push(SkippedLayer { layer: name, reason });
            }
        }
    }
    Ok((graph, report))
}

fn check_aligned<T: Scalar>(fp: &LayerGraph<T>, q: &LayerGraph<T>) -> Result<()> {
    let same = fp.input_shape() == q.input_shape()
        && fp.len() == q.len()
        && fp.layers().iter().zip(q.layers()).all(|(a, b)| {
            a.inputs == b.inputs
                && a.kind_name() == b.kind_name()
                && match (a.affine(), b.affine()) {
                    (Some(x), Some(y)) => x.weight.shape() == y.weight.shape(),
                    _ => true,
                }
        });
    if same {
        Ok(())
    } else {
        Err(Error::InvalidGraph(
            "floating-point and quantized graphs are not structurally identical".into(),
        ))
    }
}

/// Layer outputs of the quantized graph, computed layer by layer over all
/// samples so that each affine layer can be corrected before its consumers
/// run. `visit` sees each affine layer's outputs and may return new biases
/// (as deltas to subtract); the layer is then recomputed.
fn sweep<T: Scalar>(
    fp: &LayerGraph<T>,
    q: &mut LayerGraph<T>,
    samples: &[Tensor<T>],
    mut visit: impl FnMut(usize, &[f64]) -> Option<Vec<f64>>,
) -> Result<()> {
    check_aligned(fp, q)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fp_means = affine_output_means(fp, samples, &ExecHooks::default())?;
    let qw = fake_quant_weights(q)?;
    let (_, consumers) = q.consumers();
    let mut remaining: Vec<usize> = consumers.iter().map(Vec::len).collect();
    let mut outs: Vec<Option<Vec<Tensor<T>>>> = vec![None; q.len()];
    for idx in 0..q.len() {
        let run = |q: &LayerGraph<T>, outs: &[Option<Vec<Tensor<T>>>]| -> Result<Vec<Tensor<T>>> {
            let layer = q.layer(idx);
            (0..samples.len())
                .map(|n| {
                    let arg = |k: usize| -> &Tensor<T> {
                        match layer.inputs[k] {
                            Source::Input => &samples[n],
                            Source::Layer(p) => &outs[p].as_ref().expect("producer still live")[n],
                        }
                    };
                    match &layer.op {
                        Op::Affine(a) => match &qw[idx] {
                            Some(w) => a.forward_with(w, arg(0)),
                            None => a.forward(arg(0)),
                        },
                        Op::BatchNorm(bn) => bn.forward(arg(0)),
                        Op::Activation(act) => act.apply(arg(0)),
                        Op::ResidualAdd => arg(0).add(arg(1)),
                    }
                })
                .collect()
        };
        let mut y = run(q, &outs)?;
        if q.layer(idx).affine().is_some() {
            let means = channel_means(&y);
            let diff: Vec<f64> = means
                .iter()
                .zip(fp_means[idx].as_ref().expect("affine layer"))
                .map(|(a, b)| a - b)
                .collect();
            if let Some(delta) = visit(idx, &diff) {
                subtract_bias(q.layer_mut(idx).affine_mut().expect("affine layer"), &delta);
                y = run(q, &outs)?;
            }
        }
        outs[idx] = Some(y);
        for src in q.layer(idx).inputs.clone() {
            if let Source::Layer(p) = src {
                remaining[p] -= 1;
                if remaining[p] == 0 {
                    outs[p] = None;
                }
            }
        }
    }
    Ok(())
}

fn channel_means<T: Scalar>(ys: &[Tensor<T>]) -> Vec<f64> {
    let c = ys[0].shape()[0];
    let mut acc = vec![0.0; c];
    for y in ys {
        for (a, m) in acc.iter_mut().zip(y.channel_means()) {
            *a += m;
        }
    }
    acc.iter().map(|a| a / ys.len() as f64).collect()
}

fn affine_output_means<T: Scalar>(
    graph: &LayerGraph<T>,
    samples: &[Tensor<T>],
    hooks: &ExecHooks<'_, T>,
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut acc: Vec<Option<Vec<f64>>> = graph
        .layers()
        .iter()
        .map(|l| l.affine().map(|a| vec![0.0; a.out_channels()]))
        .collect();
    for x in samples {
        let outs = execute(graph, x, hooks)?;
        for (a, y) in acc.iter_mut().zip(&outs) {
            if let Some(a) = a {
                for (s, m) in a.iter_mut().zip(y.channel_means()) {
                    *s += m;
                }
            }
        }
    }
    let n = samples.len() as f64;
    for a in acc.iter_mut().flatten() {
        for s in a.iter_mut() {
            *s /= n;
        }
    }
    Ok(acc)
}

/// Correct `q` so that the per-channel mean of every affine layer's output
/// (before its activation) matches `fp` on `samples`. Layers are processed in
/// topological order, each after all of its producers. Only weight grids
/// attached to `q` are applied; activations stay in floating point.
pub fn bias_correct_empirical<T: Scalar>(
    fp: &LayerGraph<T>,
    mut q: LayerGraph<T>,
    samples: &[Tensor<T>],
) -> Result<(LayerGraph<T>, BiasCorrectionReport)> {
    let mut corrected = Vec::new();
    sweep(fp, &mut q, samples, |idx, diff| {
        corrected.push((idx, diff.to_vec()));
        Some(diff.to_vec())
    })?;
    let report = BiasCorrectionReport {
        corrected: corrected
            .into_iter()
            .map(|(idx, delta)| LayerCorrection {
                layer: q.layer(idx).name.clone(),
                delta,
            })
            .collect(),
        skipped: Vec::new(),
    };
    Ok((q, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerBiasedError {
    pub layer: String,
    /// Mean difference between quantized and floating-point outputs per
    /// output channel.
    pub per_channel: Vec<f64>,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Per-channel biased error of every affine layer: the mean over `samples`
/// of the quantized graph's output minus the floating-point graph's output,
/// each graph fed its own upstream activations. Only attached weight grids
/// are applied.
pub fn measure_biased_error<T: Scalar>(
    fp: &LayerGraph<T>,
    q: &LayerGraph<T>,
    samples: &[Tensor<T>],
) -> Result<Vec<LayerBiasedError>> {
    check_aligned(fp, q)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let qw = fake_quant_weights(q)?;
    let fp_means = affine_output_means(fp, samples, &ExecHooks::default())?;
    let q_means = affine_output_means(
        q,
        samples,
        &ExecHooks {
            weights: Some(&qw),
            act_grids: None,
        },
    )?;
    Ok(fp_means
        .iter()
        .zip(&q_means)
        .enumerate()
        .filter_map(|(i, (f, q_))| {
            let (f, q_) = (f.as_ref()?, q_.as_ref()?);
            let per_channel: Vec<f64> = q_.iter().zip(f).map(|(a, b)| a - b).collect();
            Some(summarize(q.layer(i).name.clone(), per_channel))
        })
        .collect())
}

pub(crate) fn summarize(layer: String, per_channel: Vec<f64>) -> LayerBiasedError {
    let mean_abs = per_channel.iter().map(|v| v.abs()).sum::<f64>() / per_channel.len() as f64;
    let max_abs = per_channel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    LayerBiasedError {
        layer,
        per_channel,
        mean_abs,
        max_abs,
    }
}

/// Clip every affine weight to `[lo, hi]`. Returns the graph and the number
/// of clipped entries. Attached weight grids are dropped.
pub fn clip_weights<T: Scalar>(mut graph: LayerGraph<T>, lo: f64, hi: f64) -> Result<(LayerGraph<T>, usize)> {
    if !(lo <= hi) {
        return Err(Error::InvalidParameter(format!("clip interval [{lo}, {hi}]")));
    }
    let mut n = 0;
    for l in graph.layers_mut() {
        let Some(a) = l.affine_mut() else { continue };
        for w in a.weight.data_mut() {
            let v = w.as_f64();
            if v < lo || v > hi {
                *w = T::from_f64(v.clamp(lo, hi));
                n += 1;
            }
        }
        if let Some(q) = &mut l.quant {
            q.weight = None;
        }
    }
    Ok((graph, n))
}
