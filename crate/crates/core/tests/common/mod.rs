//! Independent numerical oracles shared by the integration tests.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`, bisecting until
/// each piece's error estimate is below `rel` times its value (or the piece
/// vanishes).
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= rel * v.abs() || err < f64::MIN_POSITIVE || depth >= 50 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, rel, depth + 1) + rec(f, m, b, rel, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, rel, 0)
}

/// Integrate over `[lo, hi]` split at the given interior points.
pub fn integrate_split(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, cuts: &[f64], rel: f64) -> f64 {
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > lo && c < hi).collect();
    inner.sort_by(f64::total_cmp);
    pts.extend(inner);
    pts.push(hi);
    pts.windows(2).map(|w| integrate(f, w[0], w[1], rel)).sum()
}

fn gauss_density(mu: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    let k = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    move |x| {
        let z = (x - mu) / sigma;
        k * (-0.5 * z * z).exp()
    }
}

/// Mean and variance of `clamp(X, a, b)`, `X ~ N(mu, sigma^2)`, by
/// quadrature over `mu +- 40 sigma`. Moments are taken of
/// `clamp(X) - clamp(mu)` so that tiny tails keep their relative accuracy.
pub fn clipped_moments_quadrature(mu: f64, sigma: f64, a: f64, b: f64) -> (f64, f64) {
    let pdf = gauss_density(mu, sigma);
    let c = mu.clamp(a, b);
    let lo = mu - 40.0 * sigma;
    let hi = mu + 40.0 * sigma;
    let cuts = [a, b, mu];
    let m1 = integrate_split(&|x| (x.clamp(a, b) - c) * pdf(x), lo, hi, &cuts, 1e-13);
    let m2 = integrate_split(&|x| (x.clamp(a, b) - c).powi(2) * pdf(x), lo, hi, &cuts, 1e-13);
    (c + m1, m2 - m1 * m1)
}

/// Fixed standard-normal draws, reused across test cases.
pub fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Monte-Carlo clipped-normal mean and variance with standard errors.
pub struct McMoments {
    pub mean: f64,
    pub se_mean: f64,
    pub var: f64,
    pub se_var: f64,
}

pub fn clipped_moments_mc(z: &[f64], mu: f64, sigma: f64, a: f64, b: f64) -> McMoments {
    let shift = mu.clamp(a, b);
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for &zi in z {
        let d = (mu + sigma * zi).clamp(a, b) - shift;
        let d2 = d * d;
        s1 += d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    let n = z.len() as f64;
    let m = s1 / n;
    let m2 = s2 / n - m * m;
    let m4 = s4 / n - 4.0 * m * s3 / n + 6.0 * m * m * s2 / n - 3.0 * m.powi(4);
    McMoments {
        mean: shift + m,
        se_mean: (m2.max(0.0) / n).sqrt(),
        var: m2.max(0.0),
        se_var: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
