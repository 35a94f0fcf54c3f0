//! Mean and variance of a Gaussian passed through `clip(x, a, b)`.
//!
//! All arithmetic is `f64`. Tail probabilities use the complementary error
//! function directly (`Q(x) = erfc(x / sqrt 2) / 2`) rather than `1 - Phi`,
//! so both tails keep full relative precision; the density simply underflows
//! to zero far out, which is the correct limit for every term it multiplies.

use serde::Serialize;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)`, computed without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Phi(hi) - Phi(lo)` evaluated on whichever side keeps precision.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

/// Moments of `clip(X, a, b)` for `X ~ N(mu, sigma^2)`, with the standardized
/// intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipMoments {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    /// `(a - mu) / sigma`
    pub alpha: f64,
    /// `(b - mu) / sigma`
    pub beta: f64,
    /// `Phi(beta) - Phi(alpha)`
    pub z: f64,
    /// Mean of the truncated (not clipped) normal on `[a, b]`; `None` when
    /// the interval carries no probability mass.
    pub truncated_mean: Option<f64>,
    pub mean: f64,
    pub variance: f64,
}

fn check(mu: f64, sigma: f64, a: f64, b: f64) -> Result<()> {
    if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
        )));
    }
    if a.is_nan() || b.is_nan() || a > b || a == f64::INFINITY || b == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!("invalid clip interval [{a}, {b}]")));
    }
    Ok(())
}

pub fn clip_moments(mu: f64, sigma: f64, a: f64, b: f64) -> Result<ClipMoments> {
    check(mu, sigma, a, b)?;
    if sigma == 0.0 || a == b {
        let m = mu.clamp(a, b);
        let (alpha, beta) = if sigma == 0.0 {
            let s = |v: f64| (v - mu).signum() * f64::INFINITY;
            (s(a), s(b))
        } else {
            ((a - mu) / sigma, (b - mu) / sigma)
        };
        let inside = mu >= a && mu <= b && a != b;
        return Ok(ClipMoments {
            mu,
            sigma,
            a,
            b,
            alpha,
            beta,
            z: if inside { 1.0 } else { 0.0 },
            truncated_mean: inside.then_some(mu),
            mean: m,
            variance: 0.0,
        });
    }

    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;
    let (pa, pb) = (normal_pdf(alpha), normal_pdf(beta));
    let cdf_a = normal_cdf(alpha);
    let sf_b = normal_sf(beta);
    let z = normal_mass(alpha, beta);

    // mean = sigma (phi(alpha) - phi(beta)) + mu Z + a Phi(alpha) + b (1 - Phi(beta));
    // the boundary terms vanish for infinite bounds
    let lower = if a.is_finite() { a * cdf_a } else { 0.0 };
    let upper = if b.is_finite() { b * sf_b } else { 0.0 };
    let mean = sigma * (pa - pb) + mu * z + lower + upper;

    // variance regrouped as Z (sigma^2 + (mu - mean)^2)
    //   + sigma ((a + mu - 2 mean) phi(alpha) - (b + mu - 2 mean) phi(beta))
    //   + (a - mean)^2 Phi(alpha) + (b - mean)^2 (1 - Phi(beta))
    let d = mu - mean;
    let mut var = z * (sigma * sigma + d * d);
    if a.is_finite() {
        var += sigma * (a + d - mean) * pa + (a - mean).powi(2) * cdf_a;
    }
    if b.is_finite() {
        var -= sigma * (b + d - mean) * pb;
        var += (b - mean).powi(2) * sf_b;
    }

    Ok(ClipMoments {
        mu,
        sigma,
        a,
        b,
        alpha,
        beta,
        z,
        truncated_mean: (z > 0.0).then(|| mu + sigma * (pa - pb) / z),
        mean: mean.clamp(a, b),
        variance: var.max(0.0),
    })
}

/// `E[clip(X, a, b)]` for `X ~ N(mu, sigma^2)`.
pub fn clipped_normal_mean(mu: f64, sigma: f64, a: f64, b: f64) -> Result<f64> {
    Ok(clip_moments(mu, sigma, a, b)?.mean)
}

/// `Var[clip(X, a, b)]` for `X ~ N(mu, sigma^2)`.
pub fn clipped_normal_var(mu: f64, sigma: f64, a: f64, b: f64) -> Result<f64> {
    Ok(clip_moments(mu, sigma, a, b)?.variance)
}
