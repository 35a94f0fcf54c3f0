//! Deterministic synthetic networks with strongly imbalanced per-channel
//! weight ranges and high biases, plus self-labeled datasets.
//!
//! Every convolution is followed by batch norm whose running statistics are
//! measured on a private calibration set, so the folded statistics describe
//! the real pre-activation distribution. Batch-norm scales are chosen so that
//! after folding the imbalanced layers have per-channel weight ranges
//! proportional to `t_c`, log-uniform over `[1, kappa]` (both endpoints
//! present); the next layer divides its input channel `c` by `t_c`, so each
//! channel matters equally to the network function.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{argmax, forward_fp32, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Activation, Affine, BatchNormParams, GraphBuilder, LayerGraph, Op, Source};
use crate::tensor::{Conv2dGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStyle {
    /// `conv3x3 -> bn -> relu`, every convolution imbalanced.
    PlainChain,
    /// `dw3x3 -> bn -> relu -> conv1x1 -> bn -> relu`, depthwise layers
    /// imbalanced.
    DepthwiseSeparable,
    /// `conv3x3 -> bn -> relu -> conv1x1 -> bn -> (+ skip) -> relu`, first
    /// convolution of each block imbalanced.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooSpec {
    pub seed: u64,
    pub style: BlockStyle,
    /// Number of blocks after the stem convolution.
    pub depth: usize,
    /// Channel count of the stem and of every block output; one entry
    /// (shared) or `depth + 1` entries.
    pub widths: Vec<usize>,
    /// `[channels, height, width]`
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Ratio between the largest and smallest folded channel range of an
    /// imbalanced layer.
    pub kappa: f64,
    /// Use ReLU6 instead of ReLU.
    pub relu6: bool,
    /// Approximate batch-norm output spread of a channel with `t_c = 1`.
    pub act_scale: f64,
    /// Batch-norm shift `beta_c` drawn uniformly from this interval, in
    /// units of the scale a `t_c = 1` channel would get. Independent of
    /// `t_c`, so weak channels get large shifts relative to their spread.
    pub beta_range: (f64, f64),
    /// Number of dataset samples.
    pub samples: usize,
    /// Samples used to measure batch-norm running statistics.
    pub calibration_samples: usize,
}

impl Default for ZooSpec {
    fn default() -> Self {
        ZooSpec {
            seed: 1,
            style: BlockStyle::DepthwiseSeparable,
            depth: 3,
            widths: vec![8],
            input_shape: vec![3, 12, 12],
            classes: 10,
            kappa: 256.0,
            relu6: false,
            act_scale: 1.0,
            beta_range: (-1.0, 4.0),
            samples: 1024,
            calibration_samples: 256,
        }
    }
}

impl ZooSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if self.widths.is_empty() || (self.widths.len() != 1 && self.widths.len() != self.depth + 1) {
            return bad(format!("need 1 or {} widths, got {}", self.depth + 1, self.widths.len()));
        }
        if self.widths.iter().any(|&w| w < 2) {
            return bad("every width must be >= 2".into());
        }
        if self.style == BlockStyle::Residual && self.widths.iter().any(|&w| w != self.widths[0]) {
            return bad("residual blocks need a constant width".into());
        }
        if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
            return bad(format!("input shape must be [C, H, W], got {:?}", self.input_shape));
        }
        let shrink = 2 * (1 + match self.style {
            BlockStyle::Residual => 0,
            _ => self.depth,
        });
        if self.input_shape[1] <= shrink || self.input_shape[2] <= shrink {
            return bad(format!(
                "input {:?} too small for {} unpadded 3x3 layers",
                self.input_shape,
                shrink / 2
            ));
        }
        if self.classes < 2 || self.samples == 0 || self.calibration_samples < 2 {
            return bad("need >= 2 classes, >= 1 sample and >= 2 calibration samples".into());
        }
        if !(self.act_scale > 0.0) || !(self.beta_range.0 <= self.beta_range.1) {
            return bad("act_scale must be > 0 and beta_range non-empty".into());
        }
        Ok(())
    }

    fn width(&self, k: usize) -> usize {
        if self.widths.len() == 1 {
            self.widths[0]
        } else {
            self.widths[k]
        }
    }
}

/// A generated model with its dataset and the per-channel factors `t_c` of
/// every imbalanced layer (by affine layer name).
#[derive(Debug, Clone)]
pub struct ZooModel {
    pub graph: LayerGraph<f32>,
    pub dataset: Dataset<f32>,
    pub imbalance: Vec<(String, Vec<f64>)>,
}

struct Builder<'a> {
    spec: &'a ZooSpec,
    rng: ChaCha8Rng,
    b: GraphBuilder<f32>,
    /// Output of the last layer for every calibration sample.
    calib: Vec<Tensor<f32>>,
    /// Factors `t_c` of the last affine layer, for compensation.
    pending: Option<Vec<f64>>,
    imbalance: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Conv { k: usize, padding: usize },
    Depthwise,
}

impl Builder<'_> {
    fn act(&self) -> Activation<f32> {
        if self.spec.relu6 {
            Activation::relu6()
        } else {
            Activation::relu()
        }
    }

    fn factors(&mut self, n: usize, imbalanced: bool) -> Vec<f64> {
        if !imbalanced || self.spec.kappa == 1.0 {
            return vec![1.0; n];
        }
        let lk = self.spec.kappa.ln();
        let mut t: Vec<f64> = (0..n)
            .map(|i| match i {
                0 => 1.0,
                1 => self.spec.kappa,
                _ => (self.rng.gen::<f64>() * lk).exp(),
            })
            .collect();
        t.shuffle(&mut self.rng);
        t
    }

    /// Append `affine -> batch norm`, returning the batch-norm index.
    fn affine_bn(&mut self, name: &str, kind: Kind, out_c: usize, src: Source, imbalanced: bool) -> Result<usize> {
        let in_shape = self.calib[0].shape().to_vec();
        let in_c = in_shape[0];
        let (shape, geometry) = match kind {
            Kind::Conv { k, padding } => (vec![out_c, in_c, k, k], Conv2dGeometry::new(1, padding)?),
            Kind::Depthwise => (vec![in_c, 1, 3, 3], Conv2dGeometry::new(1, 0)?),
        };
        let mut w = Tensor::from_fn(shape.clone(), |_| self.rng.gen_range(-1.0f32..1.0))?;
        if let Some(t) = self.pending.take() {
            for (c, &tc) in t.iter().enumerate() {
                let axis = if kind == Kind::Depthwise { 0 } else { 1 };
                w.channel_slice_mut(axis, c)?.scale((1.0 / tc) as f32);
            }
        }
        // make every output channel symmetric: min == -max
        let per = w.channel_len();
        for ch in w.data_mut().chunks_mut(per) {
            let (imax, m) = ch
                .iter()
                .enumerate()
                .fold((0, 0.0f32), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            let sign = ch[imax].signum();
            let mut j = self.rng.gen_range(0..per - 1);
            if j >= imax {
                j += 1;
            }
            ch[j] = -sign * m;
        }
        let bias = Tensor::from_fn(vec![shape[0]], |_| self.rng.gen_range(-0.1f32..0.1))?;
        let affine = match kind {
            Kind::Conv { .. } => Affine::conv2d(w, bias, geometry),
            Kind::Depthwise => Affine::depthwise(w, bias, geometry),
        };
        let pre: Vec<Tensor<f32>> = self.calib.iter().map(|x| affine.forward(x)).collect::<Result<_>>()?;
        let n_out = affine.out_channels();
        let (mean, var) = channel_stats(&pre, n_out);
        let t = self.factors(n_out, imbalanced);
        let eps = 1e-5f64;
        let mut ratio = Vec::with_capacity(n_out);
        for c in 0..n_out {
            let m = affine.weight.channel_slice(0, c)?.max_abs() as f64;
            ratio.push((var[c] + eps).sqrt() / m);
        }
        // folded max |W_c| = gamma_c * m_c / sd_c = base * t_c exactly; base
        // is set so that a t_c = 1 channel has output spread near `act_scale`
        let mut sorted = ratio.clone();
        sorted.sort_by(f64::total_cmp);
        let base = self.spec.act_scale / sorted[sorted.len() / 2];
        let mut gamma = Vec::with_capacity(n_out);
        let mut beta = Vec::with_capacity(n_out);
        for c in 0..n_out {
            let unit = base * ratio[c];
            gamma.push((unit * t[c]) as f32);
            let (lo, hi) = self.spec.beta_range;
            let u = if hi > lo { self.rng.gen_range(lo..hi) } else { lo };
            beta.push((u * unit) as f32);
        }
        let bn = BatchNormParams {
            gamma,
            beta,
            running_mean: mean.iter().map(|&v| v as f32).collect(),
            running_var: var.iter().map(|&v| v as f32).collect(),
            epsilon: eps as f32,
        };
        self.calib = pre.iter().map(|y| bn.forward(y)).collect::<Result<_>>()?;
        let idx = self.b.push(name, Op::Affine(affine), vec![src]);
        let bn_idx = self.b.push(format!("{name}_bn"), Op::BatchNorm(bn), vec![Source::Layer(idx)]);
        if imbalanced {
            self.imbalance.push((name.to_string(), t.clone()));
            self.pending = Some(t);
        }
        Ok(bn_idx)
    }

    fn activation(&mut self, name: &str) -> Result<usize> {
        let act = self.act();
        self.calib = self.calib.iter().map(|x| act.apply(x)).collect::<Result<_>>()?;
        Ok(self.b.then(name, Op::Activation(act)))
    }

    fn last(&self) -> Source {
        self.b.last_source()
    }
}

fn channel_stats(ys: &[Tensor<f32>], c: usize) -> (Vec<f64>, Vec<f64>) {
    let inner = ys[0].channel_len();
    let n = (ys.len() * inner) as f64;
    let mut s = vec![0.0f64; c];
    let mut s2 = vec![0.0f64; c];
    for y in ys {
        for (ch, chunk) in y.data().chunks(inner).enumerate() {
            for &v in chunk {
                s[ch] += v as f64;
                s2[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let var = s2.iter().zip(&mean).map(|(v, m)| (v / n - m * m).max(0.0)).collect();
    (mean, var)
}

fn gaussian_inputs(rng: &mut ChaCha8Rng, shape: &[usize], n: usize) -> Result<Vec<Tensor<f32>>> {
    (0..n)
        .map(|_| Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(&mut *rng)))
        .collect()
}

/// Generate a model and its self-labeled dataset. Identical specs give
/// bit-identical results.
pub fn generate(spec: &ZooSpec) -> Result<ZooModel> {
    spec.validate()?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_da7a);
    let mut calib_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xca11_b4a7e);
    let calib = gaussian_inputs(&mut calib_rng, &spec.input_shape, spec.calibration_samples)?;
    let mut bld = Builder {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        b: GraphBuilder::new(spec.input_shape.clone()),
        calib,
        pending: None,
        imbalance: Vec::new(),
    };

    let plain = spec.style == BlockStyle::PlainChain;
    bld.affine_bn("stem", Kind::Conv { k: 3, padding: 0 }, spec.width(0), Source::Input, plain)?;
    bld.activation("stem_act")?;
    for k in 1..=spec.depth {
        let w = spec.width(k);
        match spec.style {
            BlockStyle::PlainChain => {
                let src = bld.last();
                bld.affine_bn(&format!("conv{k}"), Kind::Conv { k: 3, padding: 0 }, w, src, true)?;
                bld.activation(&format!("conv{k}_act"))?;
            }
            BlockStyle::DepthwiseSeparable => {
                let src = bld.last();
                bld.affine_bn(&format!("dw{k}"), Kind::Depthwise, 0, src, true)?;
                bld.activation(&format!("dw{k}_act"))?;
                let src = bld.last();
                bld.affine_bn(&format!("pw{k}"), Kind::Conv { k: 1, padding: 0 }, w, src, false)?;
                bld.activation(&format!("pw{k}_act"))?;
            }
            BlockStyle::Residual => {
                let skip = bld.last();
                let skip_calib = bld.calib.clone();
                bld.affine_bn(&format!("res{k}a"), Kind::Conv { k: 3, padding: 1 }, w, skip, true)?;
                bld.activation(&format!("res{k}a_act"))?;
                let src = bld.last();
                let bn = bld.affine_bn(&format!("res{k}b"), Kind::Conv { k: 1, padding: 0 }, w, src, false)?;
                bld.calib = bld
                    .calib
                    .iter()
                    .zip(&skip_calib)
                    .map(|(a, b)| a.add(b))
                    .collect::<Result<_>>()?;
                bld.b.push(format!("res{k}_add"), Op::ResidualAdd, vec![Source::Layer(bn), skip]);
                bld.activation(&format!("res{k}_act"))?;
            }
        }
    }

    // classifier over the flattened feature map
    let feat: usize = bld.calib[0].numel();
    let channels = bld.calib[0].shape()[0];
    let block = feat / channels;
    let t = bld.pending.take().unwrap_or_else(|| vec![1.0; channels]);
    let scale = (3.0 / feat as f64).sqrt();
    let mut w = Vec::with_capacity(spec.classes * feat);
    for _ in 0..spec.classes {
        for j in 0..feat {
            w.push((bld.rng.gen_range(-scale..scale) / t[j / block]) as f32);
        }
    }
    let head = Affine::linear(
        Tensor::new(vec![spec.classes, feat], w)?,
        Tensor::zeros(vec![spec.classes])?,
    );
    bld.b.then("head", Op::Affine(head));
    let graph = bld.b.build()?;

    let inputs = gaussian_inputs(&mut data_rng, &spec.input_shape, spec.samples)?;
    let labels = inputs
        .iter()
        .map(|x| forward_fp32(&graph, x).map(|y| argmax(&y) as i32))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(spec.input_shape.clone(), inputs, Some(labels))?;
    Ok(ZooModel {
        graph,
        dataset,
        imbalance: bld.imbalance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ZooSpec {
        ZooSpec {
            depth: 2,
            widths: vec![4],
            input_shape: vec![2, 8, 8],
            samples: 16,
            calibration_samples: 16,
            ..ZooSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn styles_build() {
        for style in [BlockStyle::PlainChain, BlockStyle::DepthwiseSeparable, BlockStyle::Residual] {
            let m = generate(&ZooSpec { style, ..small() }).unwrap();
            assert!(m.graph.has_batch_norm());
            assert_eq!(m.dataset.len(), 16);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&ZooSpec { kappa: 0.5, ..small() }).is_err());
        assert!(generate(&ZooSpec { widths: vec![1], ..small() }).is_err());
        assert!(generate(&ZooSpec { input_shape: vec![2, 4, 4], ..small() }).is_err());
    }
}
