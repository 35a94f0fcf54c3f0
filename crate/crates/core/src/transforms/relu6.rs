use crate::graph::{Activation, LayerGraph, Op};
use crate::scalar::Scalar;

/// Replace every bounded ReLU (`clip(x, 0, h)`, e.g. ReLU6) by a plain ReLU.
/// Returns the graph and the number of activation layers replaced. Outputs
/// change wherever a pre-activation exceeded the bound.
pub fn replace_relu6<T: Scalar>(mut graph: LayerGraph<T>) -> (LayerGraph<T>, usize) {
    let mut n = 0;
    for l in graph.layers_mut() {
        let Op::Activation(act) = &l.op else { continue };
        if act.funcs().iter().all(|f| f.is_relu6_like()) {
            l.op = Op::Activation(Activation::relu());
            l.quant = None;
            n += 1;
        }
    }
    (graph, n)
}
