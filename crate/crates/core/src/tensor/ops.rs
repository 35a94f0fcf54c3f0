//! Reference FP kernels.
//!
//! Accumulation order is fixed: for every output element the accumulator
//! starts at zero, sums `weight * input` over (input channel, kernel row,
//! kernel column) in that nesting order, and the bias is added last.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Conv2dGeometry {
            stride: 1,
            padding: 0,
        }
    }
}

impl Conv2dGeometry {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(Conv2dGeometry { stride, padding })
    }

    /// Output spatial extent for an input extent and kernel extent.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if kernel > padded {
            return Err(Error::Shape(format!(
                "kernel {kernel} larger than padded input {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// `y = W x + b`. `input` may have any shape whose element count equals
/// `in_features`; it is read in row-major order.
pub fn linear<T: Scalar>(weight: &Tensor<T>, input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [out_f, in_f] = weight.shape() else {
        return Err(Error::Shape(format!(
            "linear weight must be rank 2, got {:?}",
            weight.shape()
        )));
    };
    let (out_f, in_f) = (*out_f, *in_f);
    if input.numel() != in_f {
        return Err(Error::Shape(format!(
            "linear expects {in_f} inputs, got shape {:?}",
            input.shape()
        )));
    }
    check_bias(bias, out_f)?;
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let out = (0..out_f)
        .map(|o| {
            let row = &w[o * in_f..(o + 1) * in_f];
            let mut acc = T::zero();
            for (wv, xv) in row.iter().zip(x) {
                acc += *wv * *xv;
            }
            acc + b[o]
        })
        .collect();
    Tensor::new(vec![out_f], out)
}

/// Dense 2-D cross-correlation with zero padding.
/// `weight: [O, I, kh, kw]`, `input: [I, H, W]` -> `[O, H', W']`.
pub fn conv2d<T: Scalar>(
    weight: &Tensor<T>,
    input: &Tensor<T>,
    bias: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let [o_c, i_c, kh, kw] = *weight.shape() else {
        return Err(Error::Shape(format!(
            "conv weight must be rank 4, got {:?}",
            weight.shape()
        )));
    };
    let (h, w) = spatial(input, i_c)?;
    check_bias(bias, o_c)?;
    let oh = geom.output_extent(h, kh)?;
    let ow = geom.output_extent(w, kw)?;
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = Vec::with_capacity(o_c * oh * ow);
    for o in 0..o_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for c in 0..i_c {
                    let wbase = ((o * i_c) + c) * kh * kw;
                    let xbase = c * h * w;
                    accumulate_window(&mut acc, &wt[wbase..wbase + kh * kw], &x[xbase..xbase + h * w], (h, w), (kh, kw), (oy, ox), geom);
                }
                out.push(acc + b[o]);
            }
        }
    }
    Tensor::new(vec![o_c, oh, ow], out)
}

/// Depthwise 2-D cross-correlation (one filter per channel).
/// `weight: [C, 1, kh, kw]`, `input: [C, H, W]` -> `[C, H', W']`.
pub fn depthwise_conv2d<T: Scalar>(
    weight: &Tensor<T>,
    input: &Tensor<T>,
    bias: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let [ch, one, kh, kw] = *weight.shape() else {
        return Err(Error::Shape(format!(
            "depthwise weight must be rank 4, got {:?}",
            weight.shape()
        )));
    };
    if one != 1 {
        return Err(Error::Shape(format!(
            "depthwise weight must be [C, 1, kh, kw], got {:?}",
            weight.shape()
        )));
    }
    let (h, w) = spatial(input, ch)?;
    check_bias(bias, ch)?;
    let oh = geom.output_extent(h, kh)?;
    let ow = geom.output_extent(w, kw)?;
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let filt = &wt[c * kh * kw..(c + 1) * kh * kw];
        let plane = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                accumulate_window(&mut acc, filt, plane, (h, w), (kh, kw), (oy, ox), geom);
                out.push(acc + b[c]);
            }
        }
    }
    Tensor::new(vec![ch, oh, ow], out)
}

#[inline]
fn accumulate_window<T: Scalar>(
    acc: &mut T,
    filt: &[T],
    plane: &[T],
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    (oy, ox): (usize, usize),
    geom: Conv2dGeometry,
) {
    let pad = geom.padding as isize;
    for m in 0..kh {
        let iy = (oy * geom.stride + m) as isize - pad;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
        for n in 0..kw {
            let ix = (ox * geom.stride + n) as isize - pad;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            *acc += filt[m * kw + n] * row[ix as usize];
        }
    }
}

fn spatial<T: Scalar>(input: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    match *input.shape() {
        [c, h, w] if c == channels => Ok((h, w)),
        _ => Err(Error::Shape(format!(
            "conv expects input [{channels}, H, W], got {:?}",
            input.shape()
        ))),
    }
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, n: usize) -> Result<()> {
    if bias.shape() != [n] {
        return Err(Error::Shape(format!(
            "bias must have shape [{n}], got {:?}",
            bias.shape()
        )));
    }
    Ok(())
}
