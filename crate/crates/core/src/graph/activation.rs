use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Continuous piecewise-linear function
/// `f(x) = a_k x + b_k` for `c_{k-1} < x <= c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear<T = f32> {
    slopes: Vec<T>,
    offsets: Vec<T>,
    breakpoints: Vec<T>,
}

impl<T: Scalar> PiecewiseLinear<T> {
    pub fn new(slopes: Vec<T>, offsets: Vec<T>, breakpoints: Vec<T>) -> Result<Self> {
        let n = slopes.len();
        if n == 0 || offsets.len() != n || breakpoints.len() + 1 != n {
            return Err(Error::InvalidParameter(format!(
                "piecewise-linear needs n slopes, n offsets, n-1 breakpoints; got {}, {}, {}",
                n,
                offsets.len(),
                breakpoints.len()
            )));
        }
        let all = slopes.iter().chain(&offsets).chain(&breakpoints);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite activation parameter".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for (k, &c) in breakpoints.iter().enumerate() {
            let left = (slopes[k] * c + offsets[k]).as_f64();
            let right = (slopes[k + 1] * c + offsets[k + 1]).as_f64();
            let tol = 1e-6 * 1f64.max(left.abs()).max(right.abs());
            if (left - right).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "discontinuity at breakpoint {k}: {left} vs {right}"
                )));
            }
        }
        Ok(PiecewiseLinear {
            slopes,
            offsets,
            breakpoints,
        })
    }

    pub fn identity() -> Self {
        PiecewiseLinear {
            slopes: vec![T::one()],
            offsets: vec![T::zero()],
            breakpoints: vec![],
        }
    }

    pub fn relu() -> Self {
        Self::prelu(T::zero())
    }

    pub fn prelu(alpha: T) -> Self {
        PiecewiseLinear {
            slopes: vec![alpha, T::one()],
            offsets: vec![T::zero(), T::zero()],
            breakpoints: vec![T::zero()],
        }
    }

    pub fn relu6() -> Self {
        Self::clip(T::zero(), T::from_f64(6.0)).expect("valid clip bounds")
    }

    /// `min(max(x, lo), hi)`.
    pub fn clip(lo: T, hi: T) -> Result<Self> {
        Self::new(
            vec![T::zero(), T::one(), T::zero()],
            vec![lo, T::zero(), hi],
            vec![lo, hi],
        )
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> usize {
        self.slopes.len()
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        let k = self
            .breakpoints
            .iter()
            .position(|&c| x <= c)
            .unwrap_or(self.breakpoints.len());
        self.slopes[k] * x + self.offsets[k]
    }

    /// `f_hat` with `f(s x) = s f_hat(x)`: slopes kept, offsets and
    /// breakpoints divided by `s`.
    pub fn reparam(&self, s: T) -> Result<Self> {
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reparameterization scale must be positive and finite, got {s}"
            )));
        }
        Ok(PiecewiseLinear {
            slopes: self.slopes.clone(),
            offsets: self.offsets.iter().map(|&b| b / s).collect(),
            breakpoints: self.breakpoints.iter().map(|&c| c / s).collect(),
        })
    }

    /// Offsets and breakpoints all zero, so `f(s x) = s f(x)` already holds.
    pub fn is_scale_equivariant(&self) -> bool {
        self.offsets.iter().chain(&self.breakpoints).all(|v| *v == T::zero())
    }

    pub fn is_relu(&self) -> bool {
        self.slopes == [T::zero(), T::one()] && self.is_scale_equivariant()
    }

    /// `[a, b]` when the function is `clip(x, a, b)` (either bound may be
    /// infinite), `None` for anything else, e.g. PReLU.
    pub fn clip_bounds(&self) -> Option<(f64, f64)> {
        let (zero, one) = (T::zero(), T::one());
        let n = self.slopes.len();
        let mid = self.slopes.iter().position(|&a| a == one)?;
        if self.offsets[mid] != zero || mid > 1 || n - mid > 2 {
            return None;
        }
        let lo = if mid == 1 {
            if self.slopes[0] != zero {
                return None;
            }
            self.offsets[0].as_f64()
        } else {
            f64::NEG_INFINITY
        };
        let hi = if n - mid == 2 {
            if self.slopes[mid + 1] != zero {
                return None;
            }
            self.offsets[mid + 1].as_f64()
        } else {
            f64::INFINITY
        };
        Some((lo, hi))
    }

    /// Clipped-linear with lower bound 0 and a finite upper bound.
    pub fn is_relu6_like(&self) -> bool {
        matches!(self.clip_bounds(), Some((lo, hi)) if lo == 0.0 && hi.is_finite())
    }

    /// Image of `[lo, hi]` under the function.
    pub fn image(&self, lo: T, hi: T) -> (T, T) {
        let mut a = self.eval(lo);
        let mut b = self.eval(hi);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        for &c in &self.breakpoints {
            if c > lo && c < hi {
                let v = self.eval(c);
                a = a.min(v);
                b = b.max(v);
            }
        }
        (a, b)
    }
}

/// Activation node: one function shared by all channels or one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T = f32> {
    funcs: Vec<PiecewiseLinear<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn shared(f: PiecewiseLinear<T>) -> Self {
        Activation { funcs: vec![f] }
    }

    pub fn per_channel(funcs: Vec<PiecewiseLinear<T>>) -> Result<Self> {
        if funcs.is_empty() {
            return Err(Error::InvalidParameter("activation needs at least one function".into()));
        }
        Ok(Activation { funcs })
    }

    pub fn relu() -> Self {
        Self::shared(PiecewiseLinear::relu())
    }

    pub fn relu6() -> Self {
        Self::shared(PiecewiseLinear::relu6())
    }

    pub fn funcs(&self) -> &[PiecewiseLinear<T>] {
        &self.funcs
    }

    pub fn is_shared(&self) -> bool {
        self.funcs.len() == 1
    }

    pub fn channel(&self, i: usize) -> &PiecewiseLinear<T> {
        if self.funcs.len() == 1 {
            &self.funcs[0]
        } else {
            &self.funcs[i]
        }
    }

    pub fn is_relu(&self) -> bool {
        self.funcs.iter().all(|f| f.is_relu())
    }

    /// Per-channel reparameterization with scales `s`; stays shared when the
    /// function is already scale-equivariant.
    pub fn reparam(&self, s: &[T]) -> Result<Self> {
        if self.is_shared() && self.funcs[0].is_scale_equivariant() {
            if let Some(bad) = s.iter().find(|&&v| !(v > T::zero()) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "reparameterization scale must be positive and finite, got {bad}"
                )));
            }
            return Ok(self.clone());
        }
        if !self.is_shared() && self.funcs.len() != s.len() {
            return Err(Error::Shape(format!(
                "{} activation channels, {} scales",
                self.funcs.len(),
                s.len()
            )));
        }
        let funcs = s
            .iter()
            .enumerate()
            .map(|(i, &si)| self.channel(i).reparam(si))
            .collect::<Result<_>>()?;
        Ok(Activation { funcs })
    }

    /// Apply channel-wise along axis 0 of `x`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.is_shared() {
            let f = &self.funcs[0];
            return Ok(x.map(|v| f.eval(v)));
        }
        let c = x.shape()[0];
        if c != self.funcs.len() {
            return Err(Error::Shape(format!(
                "activation has {} channels, input shape {:?}",
                self.funcs.len(),
                x.shape()
            )));
        }
        let inner = x.channel_len();
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let f = &self.funcs[i];
            for v in chunk {
                *v = f.eval(*v);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=400).map(|i| -20.0 + i as f64 * 0.1)
    }

    #[test]
    fn named_constructors() {
        let r = PiecewiseLinear::<f64>::relu();
        assert_eq!(r.eval(-2.0), 0.0);
        assert_eq!(r.eval(3.0), 3.0);
        let r6 = PiecewiseLinear::<f64>::relu6();
        assert_eq!(r6.eval(7.5), 6.0);
        assert_eq!(r6.eval(-1.0), 0.0);
        assert_eq!(r6.eval(2.5), 2.5);
        let p = PiecewiseLinear::<f64>::prelu(0.25);
        assert_eq!(p.eval(-4.0), -1.0);
        assert!(r.is_relu() && !r6.is_relu() && !p.is_relu());
    }

    #[test]
    fn relu_reparam_is_noop() {
        let r = PiecewiseLinear::<f32>::relu();
        for s in [0.01, 1.0, 3.7, 250.0] {
            assert_eq!(r.reparam(s).unwrap(), r);
        }
    }

    #[test]
    fn relu6_reparam_moves_clip() {
        let f = PiecewiseLinear::<f64>::relu6();
        let g = f.reparam(2.0).unwrap();
        assert_eq!(g.clip_bounds(), Some((0.0, 3.0)));
        for x in grid() {
            assert!((f.eval(2.0 * x) - 2.0 * g.eval(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn general_reparam() {
        let f = PiecewiseLinear::<f64>::new(vec![1.0, 1.0], vec![0.0, 1.0], vec![2.0]);
        // that function jumps at 2, so it is rejected; the continuous one with
        // the same offsets needs slope 0.5 on the right
        assert!(f.is_err());
        let f = PiecewiseLinear::<f64>::new(vec![1.0, 0.5], vec![0.0, 1.0], vec![2.0]).unwrap();
        let g = f.reparam(4.0).unwrap();
        assert_eq!(g.offsets(), &[0.0, 0.25]);
        assert_eq!(g.breakpoints(), &[0.5]);
        for x in grid() {
            assert!((f.eval(4.0 * x) - 4.0 * g.eval(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn reparam_rejects_nonpositive() {
        let f = PiecewiseLinear::<f32>::relu6();
        assert!(f.reparam(0.0).is_err());
        assert!(f.reparam(-1.0).is_err());
        assert!(Activation::<f32>::relu().reparam(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn validation() {
        assert!(PiecewiseLinear::<f32>::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![]).is_err());
        assert!(PiecewiseLinear::<f32>::new(
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 6.0],
            vec![6.0, 0.0]
        )
        .is_err());
    }

    #[test]
    fn clip_bounds_recognition() {
        assert_eq!(
            PiecewiseLinear::<f32>::identity().clip_bounds(),
            Some((f64::NEG_INFINITY, f64::INFINITY))
        );
        assert_eq!(PiecewiseLinear::<f32>::relu().clip_bounds(), Some((0.0, f64::INFINITY)));
        assert_eq!(PiecewiseLinear::<f32>::relu6().clip_bounds(), Some((0.0, 6.0)));
        assert_eq!(PiecewiseLinear::<f32>::prelu(0.1).clip_bounds(), None);
        let upper = PiecewiseLinear::<f32>::new(vec![1.0, 0.0], vec![0.0, 2.0], vec![2.0]).unwrap();
        assert_eq!(upper.clip_bounds(), Some((f64::NEG_INFINITY, 2.0)));
        assert!(PiecewiseLinear::<f32>::relu6().is_relu6_like());
        assert!(!PiecewiseLinear::<f32>::relu().is_relu6_like());
    }

    #[test]
    fn image_of_interval() {
        let r6 = PiecewiseLinear::<f64>::relu6();
        assert_eq!(r6.image(-3.0, 9.0), (0.0, 6.0));
        assert_eq!(PiecewiseLinear::<f64>::identity().image(-6.0, 6.0), (-6.0, 6.0));
        let r = PiecewiseLinear::<f64>::relu();
        assert_eq!(r.image(-2.0, 4.0), (0.0, 4.0));
    }

    #[test]
    fn per_channel_apply() {
        let act = Activation::<f32>::relu6().reparam(&[1.0, 2.0]).unwrap();
        assert!(!act.is_shared());
        let x = Tensor::new(vec![2, 1, 2], vec![8.0, -1.0, 8.0, 2.0]).unwrap();
        assert_eq!(act.apply(&x).unwrap().data(), &[6.0, 0.0, 3.0, 2.0]);
        assert!(act.apply(&Tensor::zeros(vec![3, 1, 1]).unwrap()).is_err());
    }
}
