use proptest::prelude::*;

use dfq::bias::clip_moments;
use dfq::engine::forward_fp32;
use dfq::graph::{linear_op, Activation, GraphBuilder, Op, PiecewiseLinear};
use dfq::quant::{make_qparams, quantize_dequantize, ChannelRanges, Granularity, QScheme, RangeMode, Symmetry};
use dfq::tensor::Tensor;
use dfq::transforms::{apply_pair_scaling, equalization_scale, ScaleVector};

fn scheme() -> impl Strategy<Value = QScheme> {
    (2u8..=16, prop::bool::ANY).prop_map(|(bits, sym)| {
        let s = if sym { Symmetry::Symmetric } else { Symmetry::Asymmetric };
        QScheme::new(bits, s, Granularity::PerTensor).unwrap()
    })
}

proptest! {
    #[test]
    fn grid_contains_zero_and_covers_range(lo in -100.0f64..0.0, width in 1e-3f64..200.0, s in scheme()) {
        let hi = lo + width;
        let qp = make_qparams(lo, hi, s).unwrap();
        prop_assert_eq!(qp.fake_quant(0, 0.0), 0.0);
        let (a, b) = qp.real_range(0);
        let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        prop_assert!(a <= lo.min(0.0) + tol && b >= hi.max(0.0) - tol, "[{a}, {b}] vs [{lo}, {hi}]");
    }

    #[test]
    fn fake_quant_is_idempotent_and_bounded(
        xs in prop::collection::vec(-50.0f32..50.0, 1..64),
        s in scheme(),
    ) {
        let t = Tensor::from_vec(xs);
        let lo = t.data().iter().fold(0f32, |m, v| m.min(*v)) as f64;
        let hi = t.data().iter().fold(0f32, |m, v| m.max(*v)) as f64;
        let qp = make_qparams(lo, hi, s).unwrap();
        let q = quantize_dequantize(&t, &qp).unwrap();
        let qq = quantize_dequantize(&q, &qp).unwrap();
        prop_assert_eq!(&q, &qq);
        let half = qp.grids[0].scale / 2.0;
        for (x, y) in t.data().iter().zip(q.data()) {
            if !qp.clamps(0, *x as f64) {
                let slack = 1e-9 * half + f32::EPSILON as f64 * x.abs() as f64;
                prop_assert!(((x - y).abs() as f64) <= half + slack);
            }
        }
    }

    #[test]
    fn equalized_ranges_match(pairs in prop::collection::vec((1e-4f64..1e4, 1e-4f64..1e4), 1..16)) {
        let sym = |r: Vec<f64>| ChannelRanges::from_extrema(r.iter().map(|v| -v / 2.0).collect(), r.iter().map(|v| v / 2.0).collect(), RangeMode::Symmetric);
        let r1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let r2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let s = equalization_scale(&sym(r1.clone()), &sym(r2.clone())).unwrap();
        for ((a, b), si) in r1.iter().zip(&r2).zip(s.as_slice()) {
            let (x, y) = (a / si, b * si);
            prop_assert!((x - y).abs() <= 1e-12 * x.max(y));
        }
    }

    #[test]
    fn scaling_preserves_dense_pairs(
        w1 in prop::collection::vec(-2.0f32..2.0, 9),
        w2 in prop::collection::vec(-2.0f32..2.0, 6),
        s in prop::collection::vec(0.0625f64..16.0, 3),
        x in prop::collection::vec(-3.0f32..3.0, 3),
        alpha in 0.0f32..0.5,
    ) {
        let mut b = GraphBuilder::new(vec![3]);
        b.then("l1", linear_op(w1, 3, 3, vec![0.1, -0.2, 0.3]).unwrap());
        b.then("act", Op::Activation(Activation::shared(PiecewiseLinear::prelu(alpha))));
        b.then("l2", linear_op(w2, 2, 3, vec![0.0, 0.5]).unwrap());
        let g = b.build().unwrap();
        let pair = g.find_equalizable_pairs().unwrap()[0];
        let h = apply_pair_scaling(g.clone(), pair, &ScaleVector::new(s).unwrap()).unwrap();
        let x = Tensor::from_vec(x);
        let y0 = forward_fp32(&g, &x).unwrap();
        let y1 = forward_fp32(&h, &x).unwrap();
        for (u, v) in y0.data().iter().zip(y1.data()) {
            prop_assert!((u - v).abs() <= 1e-4 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    #[test]
    fn clipped_moments_stay_in_bounds(
        mu in -20.0f64..20.0,
        sigma in 1e-3f64..20.0,
        a in -10.0f64..10.0,
        width in 0.0f64..20.0,
    ) {
        let b = a + width;
        let m = clip_moments(mu, sigma, a, b).unwrap();
        prop_assert!(m.mean >= a - 1e-12 && m.mean <= b + 1e-12);
        prop_assert!(m.variance >= 0.0);
        prop_assert!(m.variance <= sigma * sigma * (1.0 + 1e-12));
        prop_assert!(m.variance <= (width / 2.0).powi(2) * (1.0 + 1e-12) + 1e-300);
    }
}
