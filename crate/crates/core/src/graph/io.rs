//! Model file format: a JSON manifest plus a raw little-endian f32 blob.
//!
//! `save_model(graph, "net.json")` writes `net.json` and `net.bin`; the
//! manifest records the sidecar's file name in `blob`. Every array in the
//! blob is described by a [`BlobRef`]. Edges are `[from, to]` layer indices
//! with `-1` standing for the graph input, listed per consumer in input
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Activation, Affine, AffineKind, BatchNormParams, BnStats, Layer, LayerGraph, LayerQuant, Op,
    PiecewiseLinear, Source,
};
use crate::blob::{sidecar_path, write_file, BlobReader, BlobRef, BlobWriter};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dGeometry, Tensor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub blob: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
    pub edges: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKindTag {
    Linear,
    Conv2d,
    DepthwiseConv2d,
    BatchNorm,
    Activation,
    ResidualAdd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<BatchNormEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Vec<PieceEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<LayerQuant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsEntry {
    pub shift: BlobRef,
    pub scale: BlobRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormEntry {
    pub gamma: BlobRef,
    pub beta: BlobRef,
    pub running_mean: BlobRef,
    pub running_var: BlobRef,
    pub epsilon: f64,
}

/// One channel's piecewise-linear function. Values are f32 widened to f64,
/// so they survive the JSON round trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceEntry {
    pub slopes: Vec<f64>,
    pub offsets: Vec<f64>,
    pub breakpoints: Vec<f64>,
}

pub fn save_model(graph: &LayerGraph<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_path = sidecar_path(path);
    let (manifest, bytes) = to_manifest(graph, &file_name(&blob_path))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&blob_path, &bytes)?;
    write_file(path, json.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LayerGraph<f32>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            reason: format!("unsupported version {}", manifest.version),
        });
    }
    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = BlobReader::open(&blob_path)?;
    from_manifest(&manifest, &blob).map_err(|e| match e {
        Error::InvalidParameter(reason) => Error::Manifest {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub(crate) fn to_manifest(graph: &LayerGraph<f32>, blob_name: &str) -> Result<(Manifest, Vec<u8>)> {
    let mut w = BlobWriter::new();
    let mut layers = Vec::with_capacity(graph.len());
    let mut edges = Vec::new();
    for (i, l) in graph.layers().iter().enumerate() {
        for src in &l.inputs {
            let from = match *src {
                Source::Input => -1,
                Source::Layer(p) => p as i64,
            };
            edges.push([from, i as i64]);
        }
        let mut e = LayerEntry {
            name: l.name.clone(),
            kind: LayerKindTag::ResidualAdd,
            stride: None,
            padding: None,
            weight: None,
            bias: None,
            stats: None,
            batch_norm: None,
            activation: None,
            quant: l.quant.clone(),
        };
        match &l.op {
            Op::Affine(a) => {
                e.kind = match a.kind {
                    AffineKind::Linear => LayerKindTag::Linear,
                    AffineKind::Conv2d => LayerKindTag::Conv2d,
                    AffineKind::DepthwiseConv2d => LayerKindTag::DepthwiseConv2d,
                };
                if a.kind != AffineKind::Linear {
                    e.stride = Some(a.geometry.stride);
                    e.padding = Some(a.geometry.padding);
                }
                e.weight = Some(w.push_f32(a.weight.shape(), a.weight.data().iter().copied()));
                e.bias = Some(w.push_f32(a.bias.shape(), a.bias.data().iter().copied()));
                e.stats = a.stats.as_ref().map(|s| StatsEntry {
                    shift: w.push_f32(&[s.shift.len()], s.shift.iter().copied()),
                    scale: w.push_f32(&[s.scale.len()], s.scale.iter().copied()),
                });
            }
            Op::BatchNorm(bn) => {
                e.kind = LayerKindTag::BatchNorm;
                let n = [bn.channels()];
                e.batch_norm = Some(BatchNormEntry {
                    gamma: w.push_f32(&n, bn.gamma.iter().copied()),
                    beta: w.push_f32(&n, bn.beta.iter().copied()),
                    running_mean: w.push_f32(&n, bn.running_mean.iter().copied()),
                    running_var: w.push_f32(&n, bn.running_var.iter().copied()),
                    epsilon: bn.epsilon as f64,
                });
            }
            Op::Activation(act) => {
                e.kind = LayerKindTag::Activation;
                let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
                e.activation = Some(
                    act.funcs()
                        .iter()
                        .map(|f| PieceEntry {
                            slopes: widen(f.slopes()),
                            offsets: widen(f.offsets()),
                            breakpoints: widen(f.breakpoints()),
                        })
                        .collect(),
                );
            }
            Op::ResidualAdd => {}
        }
        layers.push(e);
    }
    Ok((
        Manifest {
            version: MANIFEST_VERSION,
            blob: blob_name.to_string(),
            input_shape: graph.input_shape().to_vec(),
            layers,
            edges,
        },
        w.into_bytes(),
    ))
}

fn missing(layer: &str, field: &str) -> Error {
    Error::InvalidParameter(format!("layer `{layer}` is missing `{field}`"))
}

fn tensor(blob: &BlobReader, name: &str, r: &BlobRef) -> Result<Tensor<f32>> {
    Tensor::new(r.shape.clone(), blob.f32s(name, r)?)
}

pub(crate) fn from_manifest(m: &Manifest, blob: &BlobReader) -> Result<LayerGraph<f32>> {
    let n = m.layers.len();
    let mut inputs: Vec<Vec<Source>> = vec![Vec::new(); n];
    for &[from, to] in &m.edges {
        if to < 0 || to as usize >= n || from < -1 || from >= n as i64 {
            return Err(Error::InvalidParameter(format!("edge [{from}, {to}] out of range")));
        }
        let src = if from == -1 {
            Source::Input
        } else {
            Source::Layer(from as usize)
        };
        inputs[to as usize].push(src);
    }
    let mut layers = Vec::with_capacity(n);
    for (e, inputs) in m.layers.iter().zip(inputs) {
        let name = e.name.as_str();
        let op = match e.kind {
            LayerKindTag::Linear | LayerKindTag::Conv2d | LayerKindTag::DepthwiseConv2d => {
                let weight = tensor(
                    blob,
                    &format!("{name}.weight"),
                    e.weight.as_ref().ok_or_else(|| missing(name, "weight"))?,
                )?;
                let bias = tensor(
                    blob,
                    &format!("{name}.bias"),
                    e.bias.as_ref().ok_or_else(|| missing(name, "bias"))?,
                )?;
                let geometry = Conv2dGeometry::new(e.stride.unwrap_or(1), e.padding.unwrap_or(0))?;
                let mut a = match e.kind {
                    LayerKindTag::Linear => Affine::linear(weight, bias),
                    LayerKindTag::Conv2d => Affine::conv2d(weight, bias, geometry),
                    _ => Affine::depthwise(weight, bias, geometry),
                };
                if let Some(s) = &e.stats {
                    a.stats = Some(BnStats {
                        shift: blob.f32s(&format!("{name}.stats.shift"), &s.shift)?,
                        scale: blob.f32s(&format!("{name}.stats.scale"), &s.scale)?,
                    });
                }
                Op::Affine(a)
            }
            LayerKindTag::BatchNorm => {
                let b = e
                    .batch_norm
                    .as_ref()
                    .ok_or_else(|| missing(name, "batch_norm"))?;
                Op::BatchNorm(BatchNormParams {
                    gamma: blob.f32s(&format!("{name}.gamma"), &b.gamma)?,
                    beta: blob.f32s(&format!("{name}.beta"), &b.beta)?,
                    running_mean: blob.f32s(&format!("{name}.running_mean"), &b.running_mean)?,
                    running_var: blob.f32s(&format!("{name}.running_var"), &b.running_var)?,
                    epsilon: b.epsilon as f32,
                })
            }
            LayerKindTag::Activation => {
                let pieces = e
                    .activation
                    .as_ref()
                    .ok_or_else(|| missing(name, "activation"))?;
                let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
                let funcs = pieces
                    .iter()
                    .map(|p| {
                        PiecewiseLinear::new(
                            narrow(&p.slopes),
                            narrow(&p.offsets),
                            narrow(&p.breakpoints),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Op::Activation(Activation::per_channel(funcs)?)
            }
            LayerKindTag::ResidualAdd => Op::ResidualAdd,
        };
        layers.push(Layer {
            name: e.name.clone(),
            op,
            inputs,
            quant: e.quant.clone(),
        });
    }
    LayerGraph::new(m.input_shape.clone(), layers)
}
