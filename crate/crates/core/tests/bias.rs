mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use dfq::bias::{
    bias_correct_analytic, bias_correct_empirical, clipped_normal_mean, clipped_normal_var, expected_input,
    expected_output_error, measure_biased_error, QuantError,
};
use dfq::engine::forward_trace;
use dfq::graph::{linear_op, Activation, Affine, GraphBuilder, LayerGraph, LayerQuant, Op};
use dfq::quant::{
    attach_weight_qparams, fake_quant_weights, make_qparams, qparams_for_tensor, quantize_dequantize, Granularity,
    QScheme, Symmetry,
};
use dfq::tensor::{conv2d, Conv2dGeometry, Tensor};

const INF: f64 = f64::INFINITY;

#[test]
fn relu_mean_of_standard_normal() {
    let m = clipped_normal_mean(0.0, 1.0, 0.0, INF).unwrap();
    let (q, _) = common::clipped_moments_quadrature(0.0, 1.0, 0.0, INF);
    let mc = common::clipped_moments_mc(&common::normal_draws(10_000_000, 1), 0.0, 1.0, 0.0, INF);
    assert!((m - q).abs() <= 1e-12);
    assert!((m - mc.mean).abs() <= 4.0 * mc.se_mean);
    assert!((m - 0.3989423).abs() <= 5e-8);
}

#[test]
fn unit_clip_mean() {
    let m = clipped_normal_mean(0.0, 1.0, 0.0, 1.0).unwrap();
    let (q, _) = common::clipped_moments_quadrature(0.0, 1.0, 0.0, 1.0);
    assert!((m - q).abs() <= 1e-12);
    // phi(0) - phi(1) + (1 - Phi(1))
    assert!((m - 0.3156268).abs() <= 5e-8, "{m}");
}

#[test]
fn relu_variance_of_standard_normal() {
    let v = clipped_normal_var(0.0, 1.0, 0.0, INF).unwrap();
    let (_, q) = common::clipped_moments_quadrature(0.0, 1.0, 0.0, INF);
    let mc = common::clipped_moments_mc(&common::normal_draws(10_000_000, 2), 0.0, 1.0, 0.0, INF);
    assert!((v - q).abs() <= 1e-12);
    assert!((v - mc.var).abs() <= 1e-4);
    assert!((v - 0.340845).abs() <= 5e-7, "{v}");
}

#[test]
fn unclipped_and_degenerate_moments() {
    assert_eq!(clipped_normal_mean(1.25, 3.0, -INF, INF).unwrap(), 1.25);
    assert_eq!(clipped_normal_var(1.25, 3.0, -INF, INF).unwrap(), 9.0);
    assert_eq!(clipped_normal_var(0.5, 0.0, 0.0, 6.0).unwrap(), 0.0);
    assert!(clipped_normal_mean(0.0, 1.0, 1.0, 0.0).is_err());
}

/// Identity layer carrying `(beta, gamma)`, ReLU, then a dense layer.
fn bn_layer(beta: &[f32], gamma: &[f32], w: Vec<f32>, out: usize, bias: Vec<f32>) -> LayerGraph<f32> {
    let n = beta.len();
    let eye = Tensor::from_fn(vec![n, n], |k| if k / n == k % n { 1.0 } else { 0.0 }).unwrap();
    let pre = Affine::linear(eye, Tensor::zeros(vec![n]).unwrap()).with_stats(beta.to_vec(), gamma.to_vec());
    let mut b = GraphBuilder::new(vec![n]);
    b.then("pre", Op::Affine(pre));
    b.then("act", Op::Activation(Activation::relu()));
    b.then("fc", linear_op(w, out, n, bias).unwrap());
    b.build().unwrap()
}

fn gaussian_samples(rng: &mut ChaCha8Rng, beta: &[f32], gamma: &[f32], count: usize) -> Vec<Tensor<f32>> {
    (0..count)
        .map(|_| {
            let x = beta.iter().zip(gamma).map(|(b, g)| {
                let z: f64 = StandardNormal.sample(rng);
                b + g * z as f32
            });
            Tensor::from_vec(x.collect())
        })
        .collect()
}

#[test]
fn expected_input_after_relu() {
    let g = bn_layer(&[0.0, 10.0, -10.0], &[1.0, 1.0, 1.0], vec![1.0; 3], 1, vec![0.0]);
    let e = expected_input(&g, 2).unwrap();
    let (q, _) = common::clipped_moments_quadrature(0.0, 1.0, 0.0, INF);
    assert!((e[0] - q).abs() <= 1e-12);
    assert!((e[1] - 10.0).abs() <= 1e-6);
    assert!(e[2].abs() <= 1e-6);
}

#[test]
fn expected_input_requires_statistics() {
    let mut b = GraphBuilder::new(vec![2]);
    b.then("fc", linear_op(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0; 2]).unwrap());
    b.then("act", Op::Activation(Activation::relu()));
    b.then("fc2", linear_op(vec![1.0, 1.0], 1, 2, vec![0.0]).unwrap());
    let g = b.build().unwrap();
    assert!(expected_input(&g, 2).is_err());
}

#[test]
fn output_error_of_zero_error_is_zero() {
    let a = Affine::linear(Tensor::new(vec![2, 3], vec![1.0f32; 6]).unwrap(), Tensor::zeros(vec![2]).unwrap());
    let e = expected_output_error(&a, &Tensor::zeros(vec![2, 3]).unwrap(), &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(e, vec![0.0, 0.0]);
}

#[test]
fn conv_output_error_matches_constant_input_convolution() {
    let (co, ci) = (3, 2);
    let eps = Tensor::from_fn(vec![co, ci, 3, 3], |k| if (k / 9) % ci == 0 { 1.0f32 } else { 0.0 }).unwrap();
    let geom = Conv2dGeometry { stride: 1, padding: 1 };
    let a = Affine::conv2d(Tensor::zeros(vec![co, ci, 3, 3]).unwrap(), Tensor::zeros(vec![co]).unwrap(), geom);
    let e_x = [2.0, 5.0];
    let predicted = expected_output_error(&a, &eps, &e_x).unwrap();
    assert_eq!(predicted, vec![18.0; co]);
    let x = Tensor::from_fn(vec![ci, 5, 5], |k| e_x[k / 25] as f32).unwrap();
    let y = conv2d(&eps, &x, &Tensor::zeros(vec![co]).unwrap(), geom).unwrap();
    for c in 0..co {
        for r in 1..4 {
            for s in 1..4 {
                assert_eq!(y.data()[c * 25 + r * 5 + s] as f64, predicted[c]);
            }
        }
    }
}

#[test]
fn linear_output_error_cancels() {
    let a = Affine::linear(Tensor::new(vec![1, 2], vec![0.0f32; 2]).unwrap(), Tensor::zeros(vec![1]).unwrap());
    let eps = Tensor::new(vec![1, 2], vec![0.1f32, -0.1]).unwrap();
    assert_eq!(expected_output_error(&a, &eps, &[1.0, 1.0]).unwrap(), vec![0.0]);
    assert!(expected_output_error(&a, &eps, &[1.0, 1.0, 1.0]).is_err());
}

#[test]
fn quant_error_is_difference_of_weights() {
    let w = Tensor::new(vec![2, 2], vec![0.3f32, -0.71, 0.05, 1.0]).unwrap();
    let qp = qparams_for_tensor(&w, QScheme::default()).unwrap();
    let q = quantize_dequantize(&w, &qp).unwrap();
    let e = QuantError::new(&w, &qp).unwrap();
    assert_eq!(e.clamped, 0);
    for ((d, a), b) in e.eps.data().iter().zip(q.data()).zip(w.data()) {
        assert_eq!(*d, a - b);
    }
}

fn random_layer(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (LayerGraph<f32>, Vec<f32>, Vec<f32>) {
    let beta: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
    let gamma: Vec<f32> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut w: Vec<f32> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    w[0] = 6.0;
    let bias = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
    (bn_layer(&beta, &gamma, w, m, bias), beta, gamma)
}

fn fc_error(fp: &LayerGraph<f32>, q: &LayerGraph<f32>, samples: &[Tensor<f32>]) -> dfq::bias::LayerBiasedError {
    measure_biased_error(fp, q, samples).unwrap().into_iter().find(|l| l.layer == "fc").unwrap()
}

#[test]
fn representable_weights_leave_biases_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (fp, _, _) = random_layer(&mut rng, 6, 4);
    let (shape, mut layers) = fp.into_parts();
    let a = layers[2].affine_mut().unwrap();
    let qp = qparams_for_tensor(&a.weight, QScheme::default()).unwrap();
    a.weight = quantize_dequantize(&a.weight, &qp).unwrap();
    let on_grid = LayerGraph::new(shape, layers).unwrap();
    let q = attach_weight_qparams(on_grid.clone(), QScheme::default()).unwrap();
    let (c, _) = bias_correct_analytic(q, QScheme::default()).unwrap();
    for (x, y) in on_grid.layers().iter().zip(c.layers()) {
        if let (Some(x), Some(y)) = (x.affine(), y.affine()) {
            assert_eq!(x.bias, y.bias);
        }
    }
}

#[test]
fn analytic_correction_reduces_biased_error_tenfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (fp, beta, gamma) = random_layer(&mut rng, 24, 12);
    let samples = gaussian_samples(&mut rng, &beta, &gamma, 20_000);
    let q = attach_weight_qparams(fp.clone(), QScheme::default()).unwrap();
    let before = fc_error(&fp, &q, &samples);
    let (c, rep) = bias_correct_analytic(q, QScheme::default()).unwrap();
    let after = fc_error(&fp, &c, &samples);
    assert!(rep.corrected.iter().any(|l| l.layer == "fc"));
    assert!(after.mean_abs * 10.0 <= before.mean_abs, "{} -> {}", before.mean_abs, after.mean_abs);
}

#[test]
fn analytic_correction_is_unbiased_on_clipped_normal_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (fp, beta, gamma) = random_layer(&mut rng, 16, 8);
    let samples = gaussian_samples(&mut rng, &beta, &gamma, 40_000);
    let q = attach_weight_qparams(fp.clone(), QScheme::default()).unwrap();
    let (c, _) = bias_correct_analytic(q, QScheme::default()).unwrap();
    let qw = fake_quant_weights(&c).unwrap();
    let fc = c.position("fc").unwrap();
    let wq = qw[fc].as_ref().unwrap();
    let (bq, b) = (&c.layer(fc).affine().unwrap().bias, &fp.layer(fc).affine().unwrap().bias);
    let w = &fp.layer(fc).affine().unwrap().weight;
    let n = beta.len();
    for j in 0..8 {
        // corrected output minus reference output, per sample
        let d: Vec<f64> = samples
            .iter()
            .map(|x| {
                let mut s = bq.data()[j] as f64 - b.data()[j] as f64;
                for i in 0..n {
                    let xi = x.data()[i].max(0.0) as f64;
                    s += (wq.data()[j * n + i] as f64 - w.data()[j * n + i] as f64) * xi;
                }
                s
            })
            .collect();
        let (m, se) = common::mean_se(&d);
        assert!(m.abs() <= 3.0 * se, "channel {j}: {m} vs se {se}");
    }
}

#[test]
fn empirical_correction_on_identical_graphs_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let (fp, beta, gamma) = random_layer(&mut rng, 8, 4);
    let samples = gaussian_samples(&mut rng, &beta, &gamma, 100);
    let (c, rep) = bias_correct_empirical(&fp, fp.clone(), &samples).unwrap();
    assert_eq!(c, fp);
    assert!(rep.corrected.iter().all(|l| l.delta.iter().all(|&d| d == 0.0)));
    assert!(fc_error(&fp, &fp, &samples).per_channel.iter().all(|&v| v == 0.0));
    assert!(bias_correct_empirical(&fp, fp.clone(), &[]).is_err());
}

#[test]
fn empirical_correction_matches_means_on_the_same_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (fp, _, _) = random_layer(&mut rng, 8, 5);
    // arbitrary data, not matching the statistics
    let samples: Vec<Tensor<f32>> = (0..500)
        .map(|_| Tensor::from_fn(vec![8], |_| rng.gen_range(-1.0f32..3.0)).unwrap())
        .collect();
    let q = attach_weight_qparams(fp.clone(), QScheme::new(4, Symmetry::Asymmetric, Granularity::PerTensor).unwrap())
        .unwrap();
    assert!(fc_error(&fp, &q, &samples).max_abs > 1e-3);
    let (c, _) = bias_correct_empirical(&fp, q, &samples).unwrap();
    assert!(fc_error(&fp, &c, &samples).max_abs <= 1e-5);
    // means of the pre-activations compared directly
    let idx = c.position("fc").unwrap();
    let qw = fake_quant_weights(&c).unwrap();
    let (shape, mut layers) = c.into_parts();
    for (l, w) in layers.iter_mut().zip(qw) {
        if let (Some(a), Some(w)) = (l.affine_mut(), w) {
            a.weight = w;
        }
        l.quant = None;
    }
    let baked = LayerGraph::new(shape, layers).unwrap();
    let mut diff = vec![0f64; 5];
    for x in &samples {
        let a = forward_trace(&fp, x).unwrap();
        let b = forward_trace(&baked, x).unwrap();
        for (d, (u, v)) in diff.iter_mut().zip(a[idx].data().iter().zip(b[idx].data())) {
            *d += (*v - *u) as f64 / samples.len() as f64;
        }
    }
    assert!(diff.iter().all(|d| d.abs() <= 1e-5), "{diff:?}");
}

#[test]
fn same_sign_error_matches_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let n = 16;
    let beta: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
    let gamma: Vec<f32> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    // every weight sits 0.3 steps below a grid point, so all errors are +0.3 steps
    let step = 1.0 / 127.0;
    let w: Vec<f32> = (0..2 * n).map(|_| ((rng.gen_range(-120..=120) as f64 - 0.3) * step) as f32).collect();
    let fp = bn_layer(&beta, &gamma, w.clone(), 2, vec![0.0; 2]);
    let qp = make_qparams(-1.0, 1.0, QScheme::new(8, Symmetry::Symmetric, Granularity::PerTensor).unwrap()).unwrap();
    let (shape, mut layers) = fp.clone().into_parts();
    layers[2].quant = Some(LayerQuant {
        weight: Some(qp.clone()),
        activation: None,
    });
    let q = LayerGraph::new(shape, layers).unwrap();
    let wq = quantize_dequantize(&Tensor::new(vec![2, n], w.clone()).unwrap(), &qp).unwrap();
    let e_x = expected_input(&fp, 2).unwrap();
    let samples = gaussian_samples(&mut rng, &beta, &gamma, 20_000);
    let measured = fc_error(&fp, &q, &samples);
    for j in 0..2 {
        let predicted: f64 = (0..n).map(|i| (wq.data()[j * n + i] - w[j * n + i]) as f64 * e_x[i]).sum();
        assert!(predicted > 0.0);
        let got = measured.per_channel[j];
        assert!((got - predicted).abs() <= 0.05 * predicted, "channel {j}: {got} vs {predicted}");
    }
}
