use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dfq::bias::clipped_normal_mean;
use dfq::engine::{bit_sweep, forward_fp32, forward_quantsim, QuantSim, QuantSimConfig};
use dfq::graph::{Activation, Affine, AffineKind, GraphBuilder, LayerGraph, Op};
use dfq::pipeline::{run_pipeline, PipelineConfig, Step};
use dfq::quant::{fold_batch_norm, make_qparams, qparams_for_tensor, quantize_dequantize, Granularity, QScheme, Symmetry};
use dfq::tensor::{linear, Tensor};
use dfq::transforms::{equalize_graph, pair_ranges, EqualizeOptions};
use dfq::zoo::{generate, BlockStyle, ZooModel, ZooSpec};

const STYLES: [BlockStyle; 3] = [BlockStyle::PlainChain, BlockStyle::DepthwiseSeparable, BlockStyle::Residual];

fn zoo(style: BlockStyle, relu6: bool) -> ZooModel {
    generate(&ZooSpec {
        style,
        relu6,
        samples: 64,
        ..ZooSpec::default()
    })
    .unwrap()
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs() as f64).fold(0.0, f64::max)
}

#[test]
fn linear_map_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Tensor::from_fn(vec![5, 7], |_| rng.gen_range(-1.0f32..1.0)).unwrap();
    let zero = Tensor::zeros(vec![5]).unwrap();
    for _ in 0..50 {
        let x1 = Tensor::from_fn(vec![7], |_| rng.gen_range(-10.0f32..10.0)).unwrap();
        let x2 = Tensor::from_fn(vec![7], |_| rng.gen_range(-10.0f32..10.0)).unwrap();
        let sum = linear(&w, &x1.add(&x2).unwrap(), &zero).unwrap();
        let parts = linear(&w, &x1, &zero).unwrap().add(&linear(&w, &x2, &zero).unwrap()).unwrap();
        assert!(max_abs_diff(&sum, &parts) <= 1e-5);
    }
}

#[test]
fn channel_slices_tile_the_tensor() {
    let shape = vec![2, 3, 4, 5];
    let t = Tensor::from_fn(shape.clone(), |i| i as f32).unwrap();
    for axis in 0..4 {
        let inner: usize = shape[axis + 1..].iter().product();
        let mut back = vec![f32::NAN; t.numel()];
        for i in 0..shape[axis] {
            let slice = t.channel_slice(axis, i).unwrap();
            for (k, v) in slice.iter().enumerate() {
                let (outer, rest) = (k / inner, k % inner);
                back[(outer * shape[axis] + i) * inner + rest] = v;
            }
        }
        assert_eq!(back, t.data(), "axis {axis}");
    }
}

#[test]
fn transformed_graphs_validate() {
    let steps = [
        vec![Step::FoldBn],
        vec![Step::FoldBn, Step::ReplaceRelu6, Step::Equalize],
        vec![Step::FoldBn, Step::Equalize, Step::AbsorbBias, Step::ClipWeights],
        PipelineConfig::dfq().steps,
    ];
    for style in STYLES {
        for relu6 in [false, true] {
            let m = zoo(style, relu6);
            for s in &steps {
                let g = run_pipeline(m.graph.clone(), &PipelineConfig::with_steps(s), None).unwrap().graph;
                g.validate().unwrap_or_else(|e| panic!("{style:?} {s:?}: {e}"));
            }
        }
    }
}

#[test]
fn pairs_have_matching_channel_counts() {
    for style in STYLES {
        let g = fold_batch_norm(zoo(style, false).graph).unwrap();
        let shapes = g.shapes().unwrap();
        for p in g.find_equalizable_pairs().unwrap() {
            let a = g.layer(p.first).affine().unwrap();
            let b = g.layer(p.second).affine().unwrap();
            let scaled = match b.kind {
                AffineKind::DepthwiseConv2d => b.weight.shape()[0],
                AffineKind::Conv2d => b.weight.shape()[1],
                AffineKind::Linear => {
                    let map = &shapes[p.activation];
                    b.weight.shape()[1] / map[1..].iter().product::<usize>()
                }
            };
            assert_eq!(a.out_channels(), scaled, "{style:?} {}", g.layer(p.first).name);
        }
    }
}

fn frobenius(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(u, v)| ((u - v) as f64).powi(2)).sum::<f64>().sqrt()
}

fn quant_errors(w: &Tensor<f32>, bits: u8, sym: Symmetry) -> (f64, f64) {
    let err = |g| {
        let s = QScheme::new(bits, sym, g).unwrap();
        frobenius(w, &quantize_dequantize(w, &qparams_for_tensor(w, s).unwrap()).unwrap())
    };
    (err(Granularity::PerChannel), err(Granularity::PerTensor))
}

#[test]
fn per_channel_error_does_not_exceed_per_tensor() {
    let check = |w: &Tensor<f32>, what: &str| {
        for bits in [4, 8] {
            for sym in [Symmetry::Symmetric, Symmetry::Asymmetric] {
                let (ec, et) = quant_errors(w, bits, sym);
                assert!(ec <= et * 1.01, "{what} {bits} bits {sym:?}: {ec} > {et}");
            }
        }
    };
    for style in STYLES {
        let m = zoo(style, false);
        let g = fold_batch_norm(m.graph).unwrap();
        for l in g.layers() {
            if let Some(a) = l.affine() {
                check(&a.weight, &l.name);
            }
        }
        for (name, _) in &m.imbalance {
            let w = &g.layer(g.position(name).unwrap()).affine().unwrap().weight;
            let (ec, et) = quant_errors(w, 8, Symmetry::Asymmetric);
            assert!(ec < 0.9 * et, "{style:?} {name}: {ec} vs {et}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..20 {
        let w = Tensor::from_fn(vec![6, 10], |i| rng.gen_range(-1.0f32..1.0) * (1 + i / 10) as f32).unwrap();
        check(&w, &format!("random {k}"));
    }
}

#[test]
fn symmetric_grids_treat_signs_alike() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for bits in [2, 4, 8, 16] {
        let s = QScheme::new(bits, Symmetry::Symmetric, Granularity::PerTensor).unwrap();
        let qp = make_qparams(-3.7, 2.1, s).unwrap();
        for _ in 0..1000 {
            let x = rng.gen_range(-3.7..3.7);
            let (ep, en) = ((qp.fake_quant(0, x) - x).abs(), (qp.fake_quant(0, -x) + x).abs());
            assert!((ep - en).abs() <= 1e-12, "{bits} bits x={x}: {ep} vs {en}");
        }
    }
}

fn equalized(style: BlockStyle) -> LayerGraph<f32> {
    let g = fold_batch_norm(zoo(style, false).graph).unwrap();
    let (g, r) = equalize_graph(g, EqualizeOptions { tol: 1e-4, max_iters: 500 }).unwrap();
    assert!(r.converged, "{style:?}");
    g
}

#[test]
fn equalization_is_idempotent() {
    for style in STYLES {
        let g = equalized(style);
        let (_, again) = equalize_graph(g, EqualizeOptions::default()).unwrap();
        assert_eq!(again.iterations, 0, "{style:?}");
        assert!(again.converged);
    }
}

#[test]
fn converged_pairs_share_the_limiting_channel() {
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |k, i| if v[i] > v[k] { i } else { k });
    for style in STYLES {
        let g = equalized(style);
        for p in g.find_equalizable_pairs().unwrap() {
            let (r1, r2) = pair_ranges(&g, p).unwrap();
            assert_eq!(argmax(&r1.r), argmax(&r2.r), "{style:?} {}", g.layer(p.first).name);
        }
    }
}

#[test]
fn clipped_mean_is_monotone_in_mu() {
    for (a, b) in [(0.0, f64::INFINITY), (0.0, 6.0), (-1.0, 1.0), (f64::NEG_INFINITY, f64::INFINITY)] {
        for sigma in [0.1, 1.0, 10.0] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=400 {
                let mu = -5.0 + k as f64 * 0.025;
                let m = clipped_normal_mean(mu, sigma, a, b).unwrap();
                assert!(m >= prev, "({a}, {b}) sigma {sigma} mu {mu}: {m} < {prev}");
                assert!(m >= a && m <= b);
                prev = m;
            }
        }
    }
}

#[test]
fn quantsim_is_deterministic() {
    for style in STYLES {
        let m = zoo(style, false);
        let cfg = QuantSimConfig::default().with_bits(6);
        for x in m.dataset.inputs().iter().take(8) {
            let a = forward_quantsim(&m.graph, x, &cfg).unwrap();
            let b = forward_quantsim(&m.graph, x, &cfg).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn sixteen_bits_match_floating_point_on_the_zoo() {
    for style in STYLES {
        for relu6 in [false, true] {
            let m = zoo(style, relu6);
            let sim = QuantSim::prepare(&m.graph, &QuantSimConfig::default().with_bits(16)).unwrap();
            for x in m.dataset.inputs() {
                let y = forward_fp32(&m.graph, x).unwrap();
                let q = sim.forward(&m.graph, x).unwrap();
                let norm = y.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                let rel = frobenius(&y, &q) / norm;
                assert!(rel <= 1e-2, "{style:?} relu6={relu6}: {rel}");
            }
        }
    }
}

#[test]
fn deviation_shrinks_with_bitwidth() {
    let cfg = QuantSimConfig {
        bit_sweep: (4..=16).collect(),
        ..QuantSimConfig::default()
    };
    let check = |g: &LayerGraph<f32>, m: &ZooModel, what: String| {
        let dev: Vec<f64> = bit_sweep(g, &m.dataset, &cfg).unwrap().iter().map(|p| p.result.mean_abs_deviation).collect();
        for (k, w) in dev.windows(2).enumerate() {
            assert!(w[1] <= w[0], "{what}: {} bits {} > {} bits {}", k + 5, w[1], k + 4, w[0]);
        }
    };
    for style in STYLES {
        let m = zoo(style, false);
        let g = run_pipeline(m.graph.clone(), &PipelineConfig::dfq(), None).unwrap().graph;
        check(&g, &m, format!("{style:?} dfq"));
        let flat = generate(&ZooSpec {
            style,
            kappa: 1.0,
            samples: 64,
            ..ZooSpec::default()
        })
        .unwrap();
        check(&flat.graph, &flat, format!("{style:?} balanced"));
    }
}

/// Dense `l1 -> relu6 -> l2 -> relu6 -> l3` whose first pre-activation stays
/// above `beta - 3 gamma` on inputs in [-1, 1], with a second ReLU6 that
/// saturates.
fn bounded_chain(rng: &mut ChaCha8Rng) -> LayerGraph<f32> {
    let (n, m) = (6, 5);
    let w1: Vec<f32> = (0..n * 4)
        .map(|k| rng.gen_range(-0.1f32..0.1) * if k / 4 == 0 { 8.0 } else { 1.0 })
        .collect();
    let beta: Vec<f32> = (0..n).map(|i| if i == 0 { 8.0 } else { 2.0 }).collect();
    let gamma: Vec<f32> = (0..n).map(|i| if i == 0 { 1.2 } else { 0.2 }).collect();
    let l1 = Affine::linear(Tensor::new(vec![n, 4], w1).unwrap(), Tensor::new(vec![n], beta.clone()).unwrap())
        .with_stats(beta, gamma);
    let w2: Vec<f32> = (0..m * n).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    let l2 = Affine::linear(Tensor::new(vec![m, n], w2).unwrap(), Tensor::zeros(vec![m]).unwrap())
        .with_stats(vec![0.0; m], vec![6.0; m]);
    let w3: Vec<f32> = (0..3 * m).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let l3 = Affine::linear(Tensor::new(vec![3, m], w3).unwrap(), Tensor::zeros(vec![3]).unwrap());
    let mut b = GraphBuilder::new(vec![4]);
    b.then("l1", Op::Affine(l1));
    b.then("a1", Op::Activation(Activation::relu6()));
    b.then("l2", Op::Affine(l2));
    b.then("a2", Op::Activation(Activation::relu6()));
    b.then("l3", Op::Affine(l3));
    b.build().unwrap()
}

#[test]
fn equalized_and_absorbed_graph_keeps_the_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = bounded_chain(&mut rng);
    let relu = run_pipeline(g.clone(), &PipelineConfig::with_steps(&[Step::FoldBn, Step::ReplaceRelu6]), None)
        .unwrap()
        .graph;
    let cfg = PipelineConfig::with_steps(&[Step::FoldBn, Step::ReplaceRelu6, Step::Equalize, Step::AbsorbBias]);
    let out = run_pipeline(g.clone(), &cfg, None).unwrap();
    let absorbed = out.report.absorption.as_ref().unwrap();
    assert!(absorbed.absorbed.iter().any(|p| p.c.iter().any(|&c| c > 0.0)));
    let xs: Vec<Tensor<f32>> = (0..500)
        .map(|_| Tensor::from_fn(vec![4], |_| rng.gen_range(-1.0f32..1.0)).unwrap())
        .collect();
    let delta = xs
        .iter()
        .map(|x| max_abs_diff(&forward_fp32(&g, x).unwrap(), &forward_fp32(&relu, x).unwrap()))
        .fold(0.0, f64::max);
    assert!(delta > 0.0);
    for x in &xs {
        let d = max_abs_diff(&forward_fp32(&g, x).unwrap(), &forward_fp32(&out.graph, x).unwrap());
        assert!(d <= 1e-4 + delta, "{d} vs {delta}");
    }
}
