use crate::error::{Error, Result};
use crate::graph::{LayerGraph, LayerQuant};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{qparams_for_tensor, quantize_dequantize, QScheme};

/// Attach weight grids computed from each affine layer's current weights.
pub fn attach_weight_qparams<T: Scalar>(mut graph: LayerGraph<T>, scheme: QScheme) -> Result<LayerGraph<T>> {
    scheme.validate()?;
    for layer in graph.layers_mut() {
        let Some(a) = layer.affine() else { continue };
        let qp = qparams_for_tensor(&a.weight, scheme)?;
        layer.quant.get_or_insert_with(LayerQuant::default).weight = Some(qp);
    }
    Ok(graph)
}

/// Fake-quantized weights for every layer carrying a weight grid; `None`
/// for layers that run in floating point.
pub fn fake_quant_weights<T: Scalar>(graph: &LayerGraph<T>) -> Result<Vec<Option<Tensor<T>>>> {
    graph
        .layers()
        .iter()
        .map(|l| {
            let (Some(a), Some(qp)) = (l.affine(), l.quant.as_ref().and_then(|q| q.weight.as_ref())) else {
                return Ok(None);
            };
            let expected = match qp.scheme.granularity {
                super::Granularity::PerTensor => 1,
                super::Granularity::PerChannel => a.out_channels(),
            };
            if qp.grids.len() != expected {
                return Err(Error::Shape(format!(
                    "layer `{}`: {} weight grids for {expected} expected",
                    l.name,
                    qp.grids.len()
                )));
            }
            quantize_dequantize(&a.weight, qp).map(Some)
        })
        .collect()
}

/// Remove every attached grid.
pub fn clear_quantization<T: Scalar>(mut graph: LayerGraph<T>) -> LayerGraph<T> {
    for l in graph.layers_mut() {
        l.quant = None;
    }
    graph
}
