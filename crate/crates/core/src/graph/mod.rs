//! Feed-forward layer graphs.
//!
//! Layers are stored in topological order; each layer names its producers.
//! The graph output is the last layer. Supported topologies are chains with
//! residual merges: a tensor may feed at most two consumers, and when it
//! feeds two, one of them must be a [`Op::ResidualAdd`].

mod activation;
mod io;
mod layer;

pub use activation::{Activation, PiecewiseLinear};
pub use io::{load_model, save_model, Manifest, MANIFEST_VERSION};
pub use layer::{Affine, AffineKind, BatchNormParams, BnStats, Layer, LayerQuant, Op, Source};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Two affine layers joined only by an activation, eligible for cross-layer
/// equalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EqualizablePair {
    pub first: usize,
    pub activation: usize,
    pub second: usize,
}

impl<T: Scalar> LayerGraph<T> {
    /// Build and validate.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let g = LayerGraph {
            input_shape,
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer<T> {
        &self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut Layer<T> {
        &mut self.layers[i]
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<Layer<T>>) {
        (self.input_shape, self.layers)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.op, Op::BatchNorm(_)))
    }

    pub fn affine_indices(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].affine().is_some())
            .collect()
    }

    /// Consumers of the graph input and of every layer.
    pub fn consumers(&self) -> (Vec<usize>, Vec<Vec<usize>>) {
        let mut of_input = Vec::new();
        let mut of_layer = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for src in &l.inputs {
                match *src {
                    Source::Input => of_input.push(i),
                    Source::Layer(p) => {
                        if p < of_layer.len() {
                            of_layer[p].push(i)
                        }
                    }
                }
            }
        }
        (of_input, of_layer)
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let inp = |k: usize| -> Vec<usize> {
                match l.inputs[k] {
                    Source::Input => self.input_shape.clone(),
                    Source::Layer(p) => shapes[p].clone(),
                }
            };
            let ctx = |e: Error| Error::InvalidGraph(format!("layer {i} `{}`: {e}", l.name));
            let shape = match &l.op {
                Op::Affine(a) => a.output_shape(&inp(0)).map_err(ctx)?,
                Op::BatchNorm(bn) => {
                    let s = inp(0);
                    if s[0] != bn.channels() {
                        return Err(ctx(Error::Shape(format!(
                            "batch norm over {} channels fed {s:?}",
                            bn.channels()
                        ))));
                    }
                    s
                }
                Op::Activation(act) => {
                    let s = inp(0);
                    if !act.is_shared() && act.funcs().len() != s[0] {
                        return Err(ctx(Error::Shape(format!(
                            "{} activation channels fed {s:?}",
                            act.funcs().len()
                        ))));
                    }
                    s
                }
                Op::ResidualAdd => {
                    let (a, b) = (inp(0), inp(1));
                    if a != b {
                        return Err(ctx(Error::Shape(format!("adding {a:?} and {b:?}"))));
                    }
                    a
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("validated graph is non-empty"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidGraph("graph has no layers".into()));
        }
        if self.input_shape.is_empty()
            || self.input_shape.len() > crate::tensor::MAX_RANK
            || self.input_shape.contains(&0)
        {
            return Err(Error::InvalidGraph(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut names = HashSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            if !names.insert(l.name.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate layer name `{}`", l.name)));
            }
            let arity = if matches!(l.op, Op::ResidualAdd) { 2 } else { 1 };
            if l.inputs.len() != arity {
                return Err(Error::InvalidGraph(format!(
                    "layer `{}` needs {arity} producer(s), has {}",
                    l.name,
                    l.inputs.len()
                )));
            }
            for src in &l.inputs {
                if let Source::Layer(p) = *src {
                    if p >= i {
                        return Err(Error::InvalidGraph(format!(
                            "layer `{}` reads layer {p}, which is not earlier in topological order",
                            l.name
                        )));
                    }
                }
            }
            match &l.op {
                Op::Affine(a) => a.validate(),
                Op::BatchNorm(bn) => bn.validate(),
                Op::Activation(_) | Op::ResidualAdd => Ok(()),
            }
            .map_err(|e| Error::InvalidGraph(format!("layer `{}`: {e}", l.name)))?;
        }

        let (of_input, of_layer) = self.consumers();
        let last = self.layers.len() - 1;
        let check_fanout = |who: &str, cons: &[usize]| -> Result<()> {
            match cons.len() {
                0 | 1 => Ok(()),
                2 if cons.iter().any(|&c| matches!(self.layers[c].op, Op::ResidualAdd)) => Ok(()),
                n => Err(Error::InvalidGraph(format!(
                    "{who} feeds {n} consumers; only residual skip branches are supported"
                ))),
            }
        };
        if of_input.is_empty() {
            return Err(Error::InvalidGraph("graph input is never read".into()));
        }
        check_fanout("graph input", &of_input)?;
        for (i, cons) in of_layer.iter().enumerate() {
            if cons.is_empty() && i != last {
                return Err(Error::InvalidGraph(format!(
                    "layer `{}` output is unused",
                    self.layers[i].name
                )));
            }
            check_fanout(&format!("layer `{}`", self.layers[i].name), cons)?;
        }
        self.shapes()?;
        Ok(())
    }

    /// Affine pairs separated by exactly one activation where the first
    /// layer feeds only the activation and the activation feeds only the
    /// second layer. Pairs never cross a residual add.
    pub fn find_equalizable_pairs(&self) -> Result<Vec<EqualizablePair>> {
        if let Some(bn) = self
            .layers
            .iter()
            .find(|l| matches!(l.op, Op::BatchNorm(_)))
        {
            return Err(Error::UnfoldedBatchNorm(bn.name.clone()));
        }
        let (_, cons) = self.consumers();
        let mut pairs = Vec::new();
        for (j, l) in self.layers.iter().enumerate() {
            if !matches!(l.op, Op::Activation(_)) {
                continue;
            }
            let Source::Layer(first) = l.inputs[0] else {
                continue;
            };
            if self.layers[first].affine().is_none() || cons[first] != [j] || cons[j].len() != 1 {
                continue;
            }
            let second = cons[j][0];
            if self.layers[second].affine().is_none() {
                continue;
            }
            pairs.push(EqualizablePair {
                first,
                activation: j,
                second,
            });
        }
        Ok(pairs)
    }

    /// Drop a single-input layer, rewiring its consumers to its producer.
    pub(crate) fn remove_layer(&mut self, idx: usize) {
        let src = self.layers[idx].inputs[0];
        self.layers.remove(idx);
        for l in &mut self.layers {
            for s in &mut l.inputs {
                if let Source::Layer(p) = s {
                    if *p == idx {
                        *s = src;
                    } else if *p > idx {
                        *p -= 1;
                    }
                }
            }
        }
    }

    pub fn map_scalar<U: Scalar>(&self) -> LayerGraph<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let op = match &l.op {
                    Op::Affine(a) => Op::Affine(Affine {
                        kind: a.kind,
                        weight: a.weight.cast(),
                        bias: a.bias.cast(),
                        geometry: a.geometry,
                        stats: a.stats.as_ref().map(|s| BnStats {
                            shift: c(&s.shift),
                            scale: c(&s.scale),
                        }),
                    }),
                    Op::BatchNorm(bn) => Op::BatchNorm(BatchNormParams {
                        gamma: c(&bn.gamma),
                        beta: c(&bn.beta),
                        running_mean: c(&bn.running_mean),
                        running_var: c(&bn.running_var),
                        epsilon: U::from_f64(bn.epsilon.as_f64()),
                    }),
                    Op::Activation(act) => Op::Activation(
                        Activation::per_channel(
                            act.funcs()
                                .iter()
                                .map(|f| {
                                    PiecewiseLinear::new(
                                        c(f.slopes()),
                                        c(f.offsets()),
                                        c(f.breakpoints()),
                                    )
                                    .expect("cast of a valid function")
                                })
                                .collect(),
                        )
                        .expect("non-empty"),
                    ),
                    Op::ResidualAdd => Op::ResidualAdd,
                };
                Layer {
                    name: l.name.clone(),
                    op,
                    inputs: l.inputs.clone(),
                    quant: l.quant.clone(),
                }
            })
            .collect();
        LayerGraph {
            input_shape: self.input_shape.clone(),
            layers,
        }
    }
}

/// Incremental graph construction; each `push` returns the new layer's index.
#[derive(Debug, Clone)]
pub struct GraphBuilder<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(input_shape: Vec<usize>) -> Self {
        GraphBuilder {
            input_shape,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, op: Op<T>, inputs: Vec<Source>) -> usize {
        self.layers.push(Layer::new(name, op, inputs));
        self.layers.len() - 1
    }

    /// Append a layer reading the previous layer (or the input if first).
    pub fn then(&mut self, name: impl Into<String>, op: Op<T>) -> usize {
        let src = self.last_source();
        self.push(name, op, vec![src])
    }

    pub fn last_source(&self) -> Source {
        match self.layers.len() {
            0 => Source::Input,
            n => Source::Layer(n - 1),
        }
    }

    pub fn build(self) -> Result<LayerGraph<T>> {
        LayerGraph::new(self.input_shape, self.layers)
    }
}

/// Convenience for tests and generators: an `[out, in]` linear layer.
pub fn linear_op<T: Scalar>(weight: Vec<T>, out: usize, inp: usize, bias: Vec<T>) -> Result<Op<T>> {
    Ok(Op::Affine(Affine::linear(
        Tensor::new(vec![out, inp], weight)?,
        Tensor::new(vec![out], bias)?,
    )))
}
