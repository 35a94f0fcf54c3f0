use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Op, Source};
use crate::quant::{quantize_dequantize_in_place, QParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optional substitutions applied while executing a graph.
#[derive(Default)]
pub(crate) struct ExecHooks<'a, T: Scalar> {
    /// Replacement weights per layer (e.g. fake-quantized).
    pub weights: Option<&'a [Option<Tensor<T>>]>,
    /// Activation grids applied to a layer's output.
    pub act_grids: Option<&'a [Option<QParams>]>,
}

/// Run the graph and return every layer's output, in layer order.
pub(crate) fn execute<T: Scalar>(
    graph: &LayerGraph<T>,
    input: &Tensor<T>,
    hooks: &ExecHooks<'_, T>,
) -> Result<Vec<Tensor<T>>> {
    if input.shape() != graph.input_shape() {
        return Err(Error::Shape(format!(
            "graph expects input {:?}, got {:?}",
            graph.input_shape(),
            input.shape()
        )));
    }
    let mut outs: Vec<Tensor<T>> = Vec::with_capacity(graph.len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let arg = |k: usize| -> &Tensor<T> {
            match layer.inputs[k] {
                Source::Input => input,
                Source::Layer(p) => &outs[p],
            }
        };
        let mut y = match &layer.op {
            Op::Affine(a) => match hooks.weights.and_then(|w| w[i].as_ref()) {
                Some(w) => a.forward_with(w, arg(0))?,
                None => a.forward(arg(0))?,
            },
            Op::BatchNorm(bn) => bn.forward(arg(0))?,
            Op::Activation(act) => act.apply(arg(0))?,
            Op::ResidualAdd => arg(0).add(arg(1))?,
        };
        if let Some(qp) = hooks.act_grids.and_then(|g| g[i].as_ref()) {
            quantize_dequantize_in_place(&mut y, qp)?;
        }
        outs.push(y);
    }
    Ok(outs)
}

/// Reference floating-point forward pass.
pub fn forward_fp32<T: Scalar>(graph: &LayerGraph<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_trace(graph, input)?.pop().expect("non-empty graph"))
}

/// Floating-point forward pass returning every layer's output.
pub fn forward_trace<T: Scalar>(graph: &LayerGraph<T>, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    execute(graph, input, &ExecHooks::default())
}
