//! The end-to-end flow: fold batch norm, replace ReLU6, equalize, absorb high
//! biases, (optionally clip weights), quantize, correct biases.

use serde::{Deserialize, Serialize};

use crate::bias::{
    bias_correct_analytic_against, bias_correct_empirical, clip_weights, BiasCorrectionReport,
};
use crate::engine::{attach_quantization, Dataset, QuantSimConfig};
use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::quant::fold_batch_norm;
use crate::scalar::Scalar;
use crate::transforms::{
    absorb_high_biases, equalize_graph, replace_relu6, AbsorptionReport, EqualizationReport, EqualizeOptions,
    DEFAULT_ABSORB_MULTIPLIER,
};

/// Pipeline steps in their only permitted relative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    FoldBn,
    ReplaceRelu6,
    Equalize,
    AbsorbBias,
    ClipWeights,
    Quantize,
    BiasCorrectAnalytic,
    BiasCorrectEmpirical,
}

impl Step {
    pub const ALL: [Step; 8] = [
        Step::FoldBn,
        Step::ReplaceRelu6,
        Step::Equalize,
        Step::AbsorbBias,
        Step::ClipWeights,
        Step::Quantize,
        Step::BiasCorrectAnalytic,
        Step::BiasCorrectEmpirical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::FoldBn => "fold_bn",
            Step::ReplaceRelu6 => "replace_relu6",
            Step::Equalize => "equalize",
            Step::AbsorbBias => "absorb_bias",
            Step::ClipWeights => "clip_weights",
            Step::Quantize => "quantize",
            Step::BiasCorrectAnalytic => "bias_correct_analytic",
            Step::BiasCorrectEmpirical => "bias_correct_empirical",
        }
    }

    pub fn parse(s: &str) -> Option<Step> {
        Step::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Steps that need batch norm folded first.
    fn needs_folded(self) -> bool {
        !matches!(self, Step::FoldBn | Step::ReplaceRelu6)
    }
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub steps: Vec<Step>,
    pub quant: QuantSimConfig,
    pub equalize: EqualizeOptions,
    /// `k` in `c = max(0, beta - k * gamma)`.
    pub absorb_multiplier: f64,
    /// Interval used by `clip_weights`.
    pub clip_range: (f64, f64),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            steps: Vec::new(),
            quant: QuantSimConfig::default(),
            equalize: EqualizeOptions::default(),
            absorb_multiplier: DEFAULT_ABSORB_MULTIPLIER,
            clip_range: (-15.0, 15.0),
        }
    }
}

impl PipelineConfig {
    /// The full data-free flow.
    pub fn dfq() -> Self {
        PipelineConfig {
            steps: vec![
                Step::FoldBn,
                Step::ReplaceRelu6,
                Step::Equalize,
                Step::AbsorbBias,
                Step::Quantize,
                Step::BiasCorrectAnalytic,
            ],
            ..Self::default()
        }
    }

    pub fn with_steps(steps: &[Step]) -> Self {
        PipelineConfig {
            steps: steps.to_vec(),
            ..Self::default()
        }
    }

    /// Check step order and prerequisites before any work is done.
    pub fn validate(&self, has_batch_norm: bool, has_data: bool) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for w in self.steps.windows(2) {
            if w[0] >= w[1] {
                return bad(format!("step `{}` cannot come after `{}`", w[1], w[0]));
            }
        }
        let has = |s: Step| self.steps.contains(&s);
        if has(Step::BiasCorrectAnalytic) && has(Step::BiasCorrectEmpirical) {
            return bad("choose one of bias_correct_analytic and bias_correct_empirical".into());
        }
        if (has(Step::BiasCorrectAnalytic) || has(Step::BiasCorrectEmpirical)) && !has(Step::Quantize) {
            return bad("bias correction requires the quantize step".into());
        }
        if has(Step::BiasCorrectEmpirical) && !has_data {
            return bad("bias_correct_empirical requires a data path".into());
        }
        if has_batch_norm && !has(Step::FoldBn) {
            if let Some(s) = self.steps.iter().find(|s| s.needs_folded()) {
                return bad(format!("step `{s}` needs fold_bn on a model with batch norm"));
            }
        }
        if !(self.absorb_multiplier >= 0.0) || !self.absorb_multiplier.is_finite() {
            return bad(format!("absorb_multiplier must be >= 0, got {}", self.absorb_multiplier));
        }
        if !(self.clip_range.0 <= self.clip_range.1) {
            return bad(format!("clip_range {:?} is empty", self.clip_range));
        }
        if !(self.equalize.tol > 0.0) || self.equalize.max_iters == 0 {
            return bad("equalize needs tol > 0 and max_iters >= 1".into());
        }
        self.quant.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    pub steps: Vec<Step>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relu6_replaced: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equalization: Option<EqualizationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absorption: Option<AbsorptionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_weights: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_correction: Option<BiasCorrectionReport>,
}

/// An error raised by one pipeline step.
#[derive(Debug, thiserror::Error)]
#[error("step `{step}` failed: {source}")]
pub struct StepError {
    pub step: Step,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T: Scalar> {
    pub graph: LayerGraph<T>,
    /// Floating-point counterpart of `graph`: everything up to (not
    /// including) clipping and quantization. Reference for biased-error
    /// measurements.
    pub reference: LayerGraph<T>,
    /// The graph right after `quantize`, before any bias correction.
    pub uncorrected: Option<LayerGraph<T>>,
    pub report: PipelineReport,
}

/// Run the configured steps. Configuration problems are reported with
/// `step = steps[0]` (or `fold_bn` for an empty list) before any step runs.
pub fn run_pipeline<T: Scalar>(
    graph: LayerGraph<T>,
    cfg: &PipelineConfig,
    data: Option<&Dataset<T>>,
) -> std::result::Result<PipelineOutput<T>, StepError> {
    let first = cfg.steps.first().copied().unwrap_or(Step::FoldBn);
    cfg.validate(graph.has_batch_norm(), data.is_some())
        .map_err(|source| StepError { step: first, source })?;

    let mut graph = graph;
    let mut reference: Option<LayerGraph<T>> = None;
    let mut uncorrected: Option<LayerGraph<T>> = None;
    let mut report = PipelineReport {
        steps: cfg.steps.clone(),
        ..Default::default()
    };
    for &step in &cfg.steps {
        let ctx = |source: Error| StepError { step, source };
        if matches!(step, Step::ClipWeights | Step::Quantize) && reference.is_none() {
            reference = Some(graph.clone());
        }
        graph = match step {
            Step::FoldBn => fold_batch_norm(graph).map_err(ctx)?,
            Step::ReplaceRelu6 => {
                let (g, n) = replace_relu6(graph);
                report.relu6_replaced = Some(n);
                g
            }
            Step::Equalize => {
                let (g, r) = equalize_graph(graph, cfg.equalize).map_err(ctx)?;
                report.equalization = Some(r);
                g
            }
            Step::AbsorbBias => {
                let (g, r) = absorb_high_biases(graph, cfg.absorb_multiplier).map_err(ctx)?;
                report.absorption = Some(r);
                g
            }
            Step::ClipWeights => {
                let (g, n) = clip_weights(graph, cfg.clip_range.0, cfg.clip_range.1).map_err(ctx)?;
                report.clipped_weights = Some(n);
                g
            }
            Step::Quantize => {
                let g = attach_quantization(graph, &cfg.quant).map_err(ctx)?;
                uncorrected = Some(g.clone());
                g
            }
            Step::BiasCorrectAnalytic => {
                let r = reference.as_ref().expect("quantize ran before");
                let (g, rep) = bias_correct_analytic_against(graph, r, cfg.quant.weight_scheme).map_err(ctx)?;
                report.bias_correction = Some(rep);
                // activation grids depend only on statistics, so they stay valid
                g
            }
            Step::BiasCorrectEmpirical => {
                let r = reference.as_ref().expect("quantize ran before");
                let data = data.expect("validated");
                let (g, rep) = bias_correct_empirical(r, graph, data.inputs()).map_err(ctx)?;
                report.bias_correction = Some(rep);
                g
            }
        };
    }
    let reference = reference.unwrap_or_else(|| graph.clone());
    Ok(PipelineOutput {
        graph,
        reference,
        uncorrected,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_enforced() {
        let c = PipelineConfig::with_steps(&[Step::Equalize, Step::FoldBn]);
        assert!(c.validate(false, false).is_err());
        let c = PipelineConfig::with_steps(&[Step::Equalize, Step::Equalize]);
        assert!(c.validate(false, false).is_err());
        assert!(PipelineConfig::dfq().validate(true, false).is_ok());
    }

    #[test]
    fn prerequisites() {
        let c = PipelineConfig::with_steps(&[Step::FoldBn, Step::Quantize, Step::BiasCorrectEmpirical]);
        assert!(c.validate(true, false).is_err());
        assert!(c.validate(true, true).is_ok());
        let c = PipelineConfig::with_steps(&[Step::Equalize]);
        assert!(c.validate(true, false).is_err());
        assert!(c.validate(false, false).is_ok());
        let c = PipelineConfig::with_steps(&[Step::BiasCorrectAnalytic]);
        assert!(c.validate(false, false).is_err());
    }

    #[test]
    fn step_names_round_trip() {
        for s in Step::ALL {
            assert_eq!(Step::parse(s.name()), Some(s));
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
    }
}
