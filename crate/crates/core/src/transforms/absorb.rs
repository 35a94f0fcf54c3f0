use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{AffineKind, EqualizablePair, LayerGraph, Op};
use crate::scalar::Scalar;

pub const DEFAULT_ABSORB_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAbsorption {
    pub first: String,
    pub second: String,
    /// Amount moved out of each channel of the first layer's bias.
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AbsorptionReport {
    pub absorbed: Vec<PairAbsorption>,
    pub skipped: Vec<String>,
}

/// Move `c = max(0, beta - k * gamma)` of the first layer's bias through the
/// ReLU into the second layer: `b1 -= c`, `b2 += W2 c`, and the recorded
/// statistics of the first layer shift by `-c`.
///
/// The rewrite is exact whenever every pre-activation of channel `i` is at
/// least `c_i`; for convolutions it additionally assumes no zero padding on
/// the second layer (padded taps would see `-c` instead of 0).
pub fn absorb_high_bias<T: Scalar>(
    mut graph: LayerGraph<T>,
    pair: EqualizablePair,
    multiplier: f64,
) -> Result<(LayerGraph<T>, Option<PairAbsorption>)> {
    if !(multiplier >= 0.0) || !multiplier.is_finite() {
        return Err(Error::InvalidParameter(format!("absorption multiplier {multiplier}")));
    }
    let first_name = graph.layer(pair.first).name.clone();
    let second_name = graph.layer(pair.second).name.clone();
    match graph.layer(pair.activation).activation() {
        Some(act) if act.is_relu() => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "bias absorption needs a ReLU between `{first_name}` and `{second_name}`"
            )))
        }
    }
    let Some(stats) = graph.layer(pair.first).affine().and_then(|a| a.stats.clone()) else {
        log::warn!("no batch-norm statistics on `{first_name}`; high-bias absorption skipped");
        return Ok((graph, None));
    };
    let c: Vec<f64> = stats
        .shift
        .iter()
        .zip(&stats.scale)
        .map(|(b, g)| (b.as_f64() - multiplier * g.as_f64()).max(0.0))
        .collect();
    if c.iter().all(|&v| v == 0.0) {
        return Ok((
            graph,
            Some(PairAbsorption {
                first: first_name,
                second: second_name,
                c,
            }),
        ));
    }
    let shapes = graph.shapes()?;
    let block: usize = shapes[pair.activation][1..].iter().product();

    let l2 = graph.layer_mut(pair.second);
    l2.quant = None;
    let a2 = l2.affine_mut().expect("equalizable pair");
    let s = a2.weight.shape().to_vec();
    let w = a2.weight.data();
    let delta: Vec<f64> = match a2.kind {
        AffineKind::Linear => w
            .chunks(s[1])
            .map(|row| row.iter().enumerate().map(|(j, v)| v.as_f64() * c[j / block]).sum())
            .collect(),
        AffineKind::Conv2d => {
            let k = s[2] * s[3];
            w.chunks(s[1] * k)
                .map(|f| {
                    f.chunks(k)
                        .zip(&c)
                        .map(|(taps, ci)| ci * taps.iter().map(|v| v.as_f64()).sum::<f64>())
                        .sum()
                })
                .collect()
        }
        AffineKind::DepthwiseConv2d => {
            let k = s[2] * s[3];
            w.chunks(k)
                .zip(&c)
                .map(|(taps, ci)| ci * taps.iter().map(|v| v.as_f64()).sum::<f64>())
                .collect()
        }
    };
    for (b, d) in a2.bias.data_mut().iter_mut().zip(&delta) {
        *b = T::from_f64(b.as_f64() + d);
    }

    let l1 = graph.layer_mut(pair.first);
    l1.quant = None;
    let a1 = l1.affine_mut().expect("equalizable pair");
    for (i, &ci) in c.iter().enumerate() {
        if ci > 0.0 {
            let ct = T::from_f64(ci);
            a1.bias.data_mut()[i] -= ct;
            let st = a1.stats.as_mut().expect("checked above");
            st.shift[i] -= ct;
        }
    }
    Ok((
        graph,
        Some(PairAbsorption {
            first: first_name,
            second: second_name,
            c,
        }),
    ))
}

/// Absorb high biases across every equalizable pair with a ReLU in between,
/// in topological order.
pub fn absorb_high_biases<T: Scalar>(
    mut graph: LayerGraph<T>,
    multiplier: f64,
) -> Result<(LayerGraph<T>, AbsorptionReport)> {
    let mut report = AbsorptionReport::default();
    for pair in graph.find_equalizable_pairs()? {
        let is_relu = matches!(&graph.layer(pair.activation).op, Op::Activation(a) if a.is_relu());
        if !is_relu {
            continue;
        }
        let (g, done) = absorb_high_bias(graph, pair, multiplier)?;
        graph = g;
        match done {
            Some(a) => report.absorbed.push(a),
            None => report.skipped.push(graph.layer(pair.first).name.clone()),
        }
    }
    Ok((graph, report))
}
