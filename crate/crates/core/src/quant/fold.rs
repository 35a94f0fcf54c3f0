use crate::error::{Error, Result};
use crate::graph::{BnStats, LayerGraph, Op, Source};
use crate::scalar::Scalar;

/// Fold every batch-norm layer into the affine layer feeding it.
///
/// `W' = W * gamma / sqrt(var + eps)` per output channel and
/// `b' = (b - mean) * gamma / sqrt(var + eps) + beta`. The folded layer
/// records `beta` and `gamma` as its output statistics (mean and standard
/// deviation of the pre-activation under the batch-norm assumption).
pub fn fold_batch_norm<T: Scalar>(mut graph: LayerGraph<T>) -> Result<LayerGraph<T>> {
    while let Some(idx) = graph
        .layers()
        .iter()
        .position(|l| matches!(l.op, Op::BatchNorm(_)))
    {
        let (_, consumers) = graph.consumers();
        let bn_layer = graph.layer(idx);
        let name = bn_layer.name.clone();
        let Op::BatchNorm(bn) = bn_layer.op.clone() else {
            unreachable!()
        };
        let producer = match bn_layer.inputs[0] {
            Source::Layer(p) if graph.layer(p).affine().is_some() => p,
            _ => {
                return Err(Error::InvalidGraph(format!(
                    "batch norm `{name}` does not follow a linear or convolution layer"
                )))
            }
        };
        if consumers[producer] != [idx] {
            return Err(Error::InvalidGraph(format!(
                "layer `{}` feeds more than batch norm `{name}`; cannot fold",
                graph.layer(producer).name
            )));
        }
        let affine = graph
            .layer_mut(producer)
            .affine_mut()
            .expect("checked above");
        if affine.out_channels() != bn.channels() {
            return Err(Error::Shape(format!(
                "batch norm `{name}` has {} channels, producer has {}",
                bn.channels(),
                affine.out_channels()
            )));
        }
        let inner = affine.weight.channel_len();
        for (c, chunk) in affine.weight.data_mut().chunks_mut(inner).enumerate() {
            let k = bn.gamma[c] / (bn.running_var[c] + bn.epsilon).sqrt();
            for v in chunk {
                *v *= k;
            }
        }
        for (c, b) in affine.bias.data_mut().iter_mut().enumerate() {
            let k = bn.gamma[c] / (bn.running_var[c] + bn.epsilon).sqrt();
            *b = (*b - bn.running_mean[c]) * k + bn.beta[c];
        }
        affine.stats = Some(BnStats {
            shift: bn.beta.clone(),
            scale: bn.gamma.clone(),
        });
        graph.remove_layer(idx);
    }
    graph.validate()?;
    Ok(graph)
}
