//! Affine quantization grids.
//!
//! Grid arithmetic runs in `f64` regardless of the tensor scalar type so that
//! a value exactly halfway between two grid points is recognised as such and
//! rounded half-to-even.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QScheme {
    pub bits: u8,
    pub symmetry: Symmetry,
    pub granularity: Granularity,
}

impl Default for QScheme {
    /// 8-bit asymmetric per-tensor.
    fn default() -> Self {
        QScheme {
            bits: 8,
            symmetry: Symmetry::Asymmetric,
            granularity: Granularity::PerTensor,
        }
    }
}

impl QScheme {
    pub fn new(bits: u8, symmetry: Symmetry, granularity: Granularity) -> Result<Self> {
        let s = QScheme {
            bits,
            symmetry,
            granularity,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_BITS..=MAX_BITS).contains(&self.bits) {
            return Err(Error::InvalidParameter(format!(
                "bitwidth {} outside {MIN_BITS}..={MAX_BITS}",
                self.bits
            )));
        }
        Ok(())
    }

    pub fn with_bits(mut self, bits: u8) -> Self {
        self.bits = bits;
        self
    }

    /// Integer range `[q_min, q_max]`: signed narrow range for symmetric
    /// grids, unsigned full range for asymmetric ones.
    pub fn int_range(&self) -> (i32, i32) {
        match self.symmetry {
            Symmetry::Symmetric => {
                let m = (1i32 << (self.bits - 1)) - 1;
                (-m, m)
            }
            Symmetry::Asymmetric => (0, (1i32 << self.bits) - 1),
        }
    }
}

/// One quantization grid: `x ~ (q - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub scale: f64,
    pub zero_point: i32,
    /// Set when the source range was empty (`lo == hi == 0`) and the scale
    /// was forced to 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// Grids for one tensor: a single grid, or one per slice along axis 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub scheme: QScheme,
    pub q_min: i32,
    pub q_max: i32,
    pub grids: Vec<Grid>,
}

impl QParams {
    pub fn is_degenerate(&self) -> bool {
        self.grids.iter().any(|g| g.degenerate)
    }

    /// Representable real interval of grid `i`.
    pub fn real_range(&self, i: usize) -> (f64, f64) {
        let g = &self.grids[i];
        (
            (self.q_min - g.zero_point) as f64 * g.scale,
            (self.q_max - g.zero_point) as f64 * g.scale,
        )
    }

    /// Quantize and dequantize one value with grid `i`.
    #[inline]
    pub fn fake_quant(&self, i: usize, x: f64) -> f64 {
        let g = &self.grids[i];
        let q = ((x / g.scale).round_ties_even() + g.zero_point as f64)
            .clamp(self.q_min as f64, self.q_max as f64);
        (q - g.zero_point as f64) * g.scale
    }

    /// Whether `x` falls outside grid `i` and would be clamped.
    pub fn clamps(&self, i: usize, x: f64) -> bool {
        let g = &self.grids[i];
        let q = (x / g.scale).round_ties_even() + g.zero_point as f64;
        q < self.q_min as f64 || q > self.q_max as f64
    }

    /// Per-tensor grid with the scheme's granularity forced to per-tensor.
    fn single(scheme: QScheme, grid: Grid) -> Self {
        let (q_min, q_max) = scheme.int_range();
        QParams {
            scheme: QScheme {
                granularity: Granularity::PerTensor,
                ..scheme
            },
            q_min,
            q_max,
            grids: vec![grid],
        }
    }
}

/// Build a per-tensor grid covering `[lo, hi]`.
///
/// Asymmetric grids always contain 0 exactly: the range is first widened to
/// include 0 and then, if the ideal zero point is fractional, the scale is
/// grown by the smallest amount that lets an integral zero point cover the
/// range. Symmetric grids use `scale = max(|lo|, |hi|) / q_max`.
pub fn make_qparams(lo: f64, hi: f64, scheme: QScheme) -> Result<QParams> {
    scheme.validate()?;
    Ok(QParams::single(scheme, make_grid(lo, hi, scheme)?))
}

pub(crate) fn make_grid(lo: f64, hi: f64, scheme: QScheme) -> Result<Grid> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite quantization range [{lo}, {hi}]"
        )));
    }
    if hi < lo {
        return Err(Error::InvalidParameter(format!(
            "quantization range has hi < lo: [{lo}, {hi}]"
        )));
    }
    let (q_min, q_max) = scheme.int_range();
    match scheme.symmetry {
        Symmetry::Symmetric => {
            let m = lo.abs().max(hi.abs());
            if m == 0.0 {
                return Ok(degenerate(0));
            }
            Ok(Grid {
                scale: m / q_max as f64,
                zero_point: 0,
                degenerate: false,
            })
        }
        Symmetry::Asymmetric => {
            let lo = lo.min(0.0);
            let hi = hi.max(0.0);
            if hi == lo {
                return Ok(degenerate(q_min));
            }
            let levels = (q_max - q_min) as f64;
            let ideal = (hi - lo) / levels;
            let zp_real = q_min as f64 - lo / ideal;
            if zp_real == zp_real.round() {
                return Ok(Grid {
                    scale: ideal,
                    zero_point: zp_real as i32,
                    degenerate: false,
                });
            }
            // smallest scale that covers [lo, hi] for a given integral zp
            let needed = |zp: i32| -> f64 {
                let below = if zp > q_min {
                    -lo / (zp - q_min) as f64
                } else {
                    if lo < 0.0 {
                        return f64::INFINITY;
                    }
                    0.0
                };
                let above = if zp < q_max {
                    hi / (q_max - zp) as f64
                } else {
                    if hi > 0.0 {
                        return f64::INFINITY;
                    }
                    0.0
                };
                below.max(above)
            };
            let zf = (zp_real.floor() as i32).clamp(q_min, q_max);
            let zc = (zp_real.ceil() as i32).clamp(q_min, q_max);
            let (sf, sc) = (needed(zf), needed(zc));
            let (scale, zero_point) = if sf <= sc { (sf, zf) } else { (sc, zc) };
            Ok(Grid {
                scale,
                zero_point,
                degenerate: false,
            })
        }
    }
}

fn degenerate(zero_point: i32) -> Grid {
    Grid {
        scale: 1.0,
        zero_point,
        degenerate: true,
    }
}

/// Grids from the min/max of a tensor, per tensor or per slice along axis 0.
pub fn qparams_for_tensor<T: Scalar>(t: &Tensor<T>, scheme: QScheme) -> Result<QParams> {
    scheme.validate()?;
    let (q_min, q_max) = scheme.int_range();
    let grids = match scheme.granularity {
        Granularity::PerTensor => {
            let (lo, hi) = min_max(t.data());
            vec![make_grid(lo, hi, scheme)?]
        }
        Granularity::PerChannel => {
            let inner = t.channel_len();
            t.data()
                .chunks(inner)
                .map(|c| {
                    let (lo, hi) = min_max(c);
                    make_grid(lo, hi, scheme)
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(QParams {
        scheme,
        q_min,
        q_max,
        grids,
    })
}

fn min_max<T: Scalar>(v: &[T]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        let x = x.as_f64();
        (lo.min(x), hi.max(x))
    })
}

/// Simulated quantization: `(clamp(round(t / scale) + zp) - zp) * scale`
/// with round-half-to-even. Per-channel grids apply along axis 0.
pub fn quantize_dequantize<T: Scalar>(t: &Tensor<T>, qp: &QParams) -> Result<Tensor<T>> {
    let mut out = t.clone();
    quantize_dequantize_in_place(&mut out, qp)?;
    Ok(out)
}

pub fn quantize_dequantize_in_place<T: Scalar>(t: &mut Tensor<T>, qp: &QParams) -> Result<()> {
    match qp.grids.len() {
        1 => {
            for v in t.data_mut() {
                *v = T::from_f64(qp.fake_quant(0, v.as_f64()));
            }
        }
        n => {
            if t.shape()[0] != n {
                return Err(Error::Shape(format!(
                    "{n} per-channel grids for tensor of shape {:?}",
                    t.shape()
                )));
            }
            let inner = t.channel_len();
            for (i, chunk) in t.data_mut().chunks_mut(inner).enumerate() {
                for v in chunk {
                    *v = T::from_f64(qp.fake_quant(i, v.as_f64()));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asym(bits: u8) -> QScheme {
        QScheme::new(bits, Symmetry::Asymmetric, Granularity::PerTensor).unwrap()
    }

    fn sym(bits: u8) -> QScheme {
        QScheme::new(bits, Symmetry::Symmetric, Granularity::PerTensor).unwrap()
    }

    #[test]
    fn int_ranges() {
        assert_eq!(sym(8).int_range(), (-127, 127));
        assert_eq!(asym(8).int_range(), (0, 255));
        assert_eq!(asym(2).int_range(), (0, 3));
        assert!(QScheme::new(1, Symmetry::Symmetric, Granularity::PerTensor).is_err());
        assert!(QScheme::new(17, Symmetry::Symmetric, Granularity::PerTensor).is_err());
    }

    #[test]
    fn asymmetric_zero_already_on_grid() {
        let qp = make_qparams(0.0, 10.0, asym(8)).unwrap();
        assert_eq!(qp.grids[0].scale, 10.0 / 255.0);
        assert_eq!(qp.grids[0].zero_point, 0);
    }

    #[test]
    fn symmetric_unit_range() {
        let qp = make_qparams(-1.0, 1.0, sym(8)).unwrap();
        assert_eq!(qp.grids[0].scale, 1.0 / 127.0);
        assert_eq!(qp.grids[0].zero_point, 0);
    }

    #[test]
    fn zero_range_is_degenerate() {
        for s in [asym(8), sym(8)] {
            let qp = make_qparams(0.0, 0.0, s).unwrap();
            assert_eq!(qp.grids[0].scale, 1.0);
            assert!(qp.is_degenerate());
            assert_eq!(qp.fake_quant(0, 0.0), 0.0);
        }
    }

    #[test]
    fn nudged_grid_covers_range_and_zero() {
        for (lo, hi) in [(-1.0, 2.0), (-0.3, 7.1), (-5.0, 0.01), (0.2, 3.0), (-3.0, -1.0)] {
            let qp = make_qparams(lo, hi, asym(8)).unwrap();
            let (rlo, rhi) = qp.real_range(0);
            assert!(rlo <= lo.min(0.0) + 1e-12, "{lo} {hi} -> {rlo}");
            assert!(rhi >= hi.max(0.0) - 1e-12, "{lo} {hi} -> {rhi}");
            assert_eq!(qp.fake_quant(0, 0.0), 0.0);
            // never more than one extra step of widening
            let ideal = (hi.max(0.0) - lo.min(0.0)) / 255.0;
            assert!(qp.grids[0].scale < ideal * (1.0 + 1.0 / 254.0) + 1e-15);
        }
    }

    #[test]
    fn half_way_rounds_to_even() {
        // 5 / (10/255) = 127.5 in f64 -> 128
        let qp = make_qparams(0.0, 10.0, asym(8)).unwrap();
        let t = Tensor::<f32>::from_vec(vec![5.0, 0.0, 100.0]);
        let out = quantize_dequantize(&t, &qp).unwrap();
        assert!((out.data()[0] as f64 - 128.0 * 10.0 / 255.0).abs() < 1e-6);
        assert!((out.data()[0] - 5.019_608).abs() < 1e-5);
        assert_eq!(out.data()[1], 0.0);
        assert_eq!(out.data()[2], 10.0);
    }

    #[test]
    fn per_channel_grids_follow_axis_zero() {
        let t = Tensor::<f32>::new(vec![2, 2], vec![-1.0, 1.0, 0.0, 100.0]).unwrap();
        let s = QScheme::new(8, Symmetry::Asymmetric, Granularity::PerChannel).unwrap();
        let qp = qparams_for_tensor(&t, s).unwrap();
        assert_eq!(qp.grids.len(), 2);
        assert!(qp.grids[0].scale < qp.grids[1].scale);
        let bad = Tensor::<f32>::zeros(vec![3, 2]).unwrap();
        assert!(quantize_dequantize(&bad, &qp).is_err());
    }

    #[test]
    fn rejects_inverted_range() {
        assert!(make_qparams(1.0, 0.0, asym(8)).is_err());
        assert!(make_qparams(f64::NAN, 0.0, asym(8)).is_err());
    }
}
