//! Correction of the biased output error caused by weight quantization.
//!
//! The analytic path predicts `E[eps x]` from batch-norm statistics and the
//! moments of a clipped normal distribution; the empirical path measures the
//! per-channel output shift on data.

mod correct;
mod moments;
mod propagate;

pub use correct::{
    bias_correct_analytic, bias_correct_analytic_against, bias_correct_empirical, clip_weights,
    expected_output_error, measure_biased_error, BiasCorrectionReport, LayerBiasedError, LayerCorrection,
    QuantError, SkippedLayer,
};
pub(crate) use correct::summarize;
pub use moments::{clip_moments, clipped_normal_mean, clipped_normal_var, normal_cdf, normal_pdf, normal_sf, ClipMoments};
pub use propagate::{activation_moments, expected_input, input_moments, output_moments, ChannelMoments};
