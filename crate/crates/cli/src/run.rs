use std::path::Path;

use anyhow::anyhow;
use log::{info, warn};
use serde::Serialize;

use dfq::bias::{measure_biased_error, BiasCorrectionReport, LayerBiasedError};
use dfq::engine::{evaluate, load_dataset, save_dataset, Dataset, EvalMode, EvalResult};
use dfq::graph::{load_model, save_model};
use dfq::pipeline::{run_pipeline, PipelineConfig, Step};
use dfq::quant::{Granularity, Symmetry};
use dfq::zoo::{generate as generate_zoo, ZooSpec};
use dfq::LayerGraph;

use crate::failure::Failure;
use crate::{GranularityArg, RunArgs, SchemeArg};

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::config(e).context(format!("writing {}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).map_err(Failure::model)? + "\n";
    write_text(path, &s)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(e).context(format!("creating {}", dir.display())))
}

pub fn parse_steps(s: &str) -> Result<Vec<Step>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| Step::parse(t).ok_or_else(|| Failure::config(anyhow!("unknown step `{t}`"))))
        .collect()
}

/// Configuration file merged with command-line overrides. A file without a
/// `steps` key runs the full data-free flow.
pub fn resolve_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(e).context(format!("reading {}", p.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::config(e).context(format!("parsing {}", p.display())))?;
            let has_steps = value.get("steps").is_some();
            let mut cfg: PipelineConfig = serde_json::from_value(value)
                .map_err(|e| Failure::config(e).context(format!("parsing {}", p.display())))?;
            if !has_steps {
                cfg.steps = PipelineConfig::dfq().steps;
            }
            cfg
        }
        None => PipelineConfig::dfq(),
    };
    if let Some(s) = &args.steps {
        cfg.steps = parse_steps(s)?;
    }
    if let Some(b) = args.bits {
        cfg.quant = cfg.quant.with_bits(b);
    }
    if let Some(s) = args.scheme {
        let sym = match s {
            SchemeArg::Sym => Symmetry::Symmetric,
            SchemeArg::Asym => Symmetry::Asymmetric,
        };
        cfg.quant.weight_scheme.symmetry = sym;
        cfg.quant.act_scheme.symmetry = sym;
    }
    if let Some(g) = args.granularity {
        cfg.quant.weight_scheme.granularity = match g {
            GranularityArg::Tensor => Granularity::PerTensor,
            GranularityArg::Channel => Granularity::PerChannel,
        };
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct EvalReport {
    fp32: EvalResult,
    /// `None` when the output graph still contains batch norm.
    quantized: Option<EvalResult>,
}

#[derive(Serialize)]
struct BiasErrorReport {
    correction: Option<BiasCorrectionReport>,
    /// Measured on the dataset, quantized weights only, before correction.
    measured_before: Option<Vec<LayerBiasedError>>,
    /// Same measurement after correction.
    measured_after: Option<Vec<LayerBiasedError>>,
}

#[derive(Serialize)]
struct SweepEntry {
    bits: u8,
    accuracy: Option<f64>,
    mse: f64,
}

fn evaluate_all(input: &LayerGraph, output: &LayerGraph, data: &Dataset, cfg: &PipelineConfig) -> Result<EvalReport, Failure> {
    let fp32 = evaluate(input, data, EvalMode::Fp32)?;
    let quantized = if output.has_batch_norm() {
        warn!("output graph still has batch norm; skipping quantized evaluation");
        None
    } else {
        Some(evaluate(output, data, EvalMode::QuantSim(&cfg.quant))?)
    };
    Ok(EvalReport { fp32, quantized })
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    let model = &args.model;
    let input =
        load_model(model).map_err(|e| Failure::model(e).context(format!("loading {}", model.display())))?;
    cfg.validate(input.has_batch_norm(), args.data.is_some())
        .map_err(|e| Failure::config(e).context("invalid pipeline configuration"))?;
    let data = match &args.data {
        Some(p) => Some(load_dataset(p).map_err(|e| Failure::config(e).context(format!("loading {}", p.display())))?),
        None => None,
    };

    info!("running steps {:?}", cfg.steps);
    let out = run_pipeline(input.clone(), &cfg, data.as_ref())?;
    if out.graph.layers().iter().filter_map(|l| l.affine()).any(|a| !a.weight.is_finite() || !a.bias.is_finite()) {
        return Err(Failure {
            code: crate::failure::NUMERICAL,
            error: anyhow!("pipeline produced non-finite weights"),
        });
    }

    create_dir(&args.out)?;
    let name = model.file_name().ok_or_else(|| Failure::config(anyhow!("model path has no file name")))?;
    save_model(&out.graph, args.out.join(name))?;
    write_json(&args.out.join("config.json"), &cfg)?;
    write_json(&args.out.join("pipeline.json"), &out.report)?;
    if let Some(eq) = &out.report.equalization {
        write_json(&args.out.join("equalization.json"), eq)?;
    }

    let (before, after) = match (&data, &out.uncorrected) {
        (Some(d), Some(unc)) => (
            Some(measure_biased_error(&out.reference, unc, d.inputs())?),
            Some(measure_biased_error(&out.reference, &out.graph, d.inputs())?),
        ),
        _ => (None, None),
    };
    write_json(
        &args.out.join("bias_error.json"),
        &BiasErrorReport {
            correction: out.report.bias_correction.clone(),
            measured_before: before,
            measured_after: after,
        },
    )?;

    let Some(data) = data else {
        warn!("no dataset given; skipping evaluation");
        return Ok(());
    };
    let eval = evaluate_all(&input, &out.graph, &data, &cfg)?;
    if let Some(q) = &eval.quantized {
        if !q.mse.is_finite() {
            return Err(Failure {
                code: crate::failure::NUMERICAL,
                error: anyhow!("quantized outputs are not finite"),
            });
        }
    }
    write_json(&args.out.join("eval.json"), &eval)?;

    if args.sweep {
        let mut points = Vec::new();
        for &bits in &cfg.quant.bit_sweep {
            let mut c = cfg.clone();
            c.quant = c.quant.with_bits(bits);
            let o = run_pipeline(input.clone(), &c, Some(&data))?;
            let r = evaluate(&o.graph, &data, EvalMode::QuantSim(&c.quant))?;
            info!("{bits} bits: accuracy {:?}", r.accuracy);
            points.push(SweepEntry {
                bits,
                accuracy: r.accuracy,
                mse: r.mse,
            });
        }
        write_json(&args.out.join("sweep.json"), &points)?;
    }
    Ok(())
}

pub fn generate(out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(e).context(format!("reading {}", p.display())))?;
            serde_json::from_str::<ZooSpec>(&text)
                .map_err(|e| Failure::config(e).context(format!("parsing {}", p.display())))?
        }
        None => ZooSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let m = generate_zoo(&spec).map_err(|e| Failure::config(e).context("invalid generator spec"))?;
    create_dir(out)?;
    save_model(&m.graph, out.join("model.json"))?;
    save_dataset(&m.dataset, out.join("data.json"))?;
    write_json(&out.join("spec.json"), &spec)?;
    Ok(())
}
