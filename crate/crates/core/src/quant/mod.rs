//! Quantization grids, weight ranges, batch-norm folding and data-free
//! activation ranges.

mod act_range;
mod attach;
mod fold;
mod qparams;
mod ranges;

pub use act_range::{activation_range_for, activation_range_from_bn, ActivationRange, DEFAULT_RANGE_SIGMAS};
pub use attach::{attach_weight_qparams, clear_quantization, fake_quant_weights};
pub use fold::fold_batch_norm;
pub use qparams::{
    make_qparams, qparams_for_tensor, quantize_dequantize, quantize_dequantize_in_place, Granularity, Grid,
    QParams, QScheme, Symmetry, MAX_BITS, MIN_BITS,
};
pub use ranges::{
    channel_summary, quantile, weight_ranges, weight_ranges_along, weight_summary, ChannelRanges, ChannelSummary,
    LayerWeightSummary, RangeMode,
};
