//! Function-preserving graph rewrites: cross-layer range equalization and
//! high-bias absorption, plus ReLU6 replacement.

mod absorb;
mod equalize;
mod relu6;
mod scaling;

pub use absorb::{absorb_high_bias, absorb_high_biases, AbsorptionReport, PairAbsorption, DEFAULT_ABSORB_MULTIPLIER};
pub use equalize::{equalize_graph, EqualizationReport, EqualizeOptions, PairReport};
pub use relu6::replace_relu6;
pub use scaling::{
    apply_pair_scaling, consumer_ranges, equalization_scale, pair_objective, pair_ranges, ScaleVector,
};

/// `f^` with `f(s x) = s f^(x)`: slopes kept, offsets and breakpoints divided
/// by `s`.
pub fn reparam_piecewise<T: crate::Scalar>(
    f: &crate::graph::PiecewiseLinear<T>,
    s: T,
) -> crate::Result<crate::graph::PiecewiseLinear<T>> {
    f.reparam(s)
}
